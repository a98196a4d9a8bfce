"""Assembled flow systems: chart + generator + lens coordinates.

A FlowSystem carries the scalar field x (the lens boundary-defining
function, x = x~ + c), the physical boundary function rho, and a parameter
chart mapping lens coordinates q = (x, y1, y2) to chart points z. Two
families are built in:

* model systems: z = q identically, x is the first coordinate, the physical
  boundary is a dome rho = c - x - kappa |y|^2 closing the lens;
* ball systems: the unit-ball geometry (any registry metric), a base point p
  on the sphere rho = t, and x~ = -rho - eps |z - p|^2 from the convexity
  construction.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import flow
from .convexity import build_xtilde
from .errors import ValidationError, NoConnectionError
from .geometry import (AnalyticField, BoundarySetup, GeneratorE,
                       METRIC_REGISTRY, GENERATOR_REGISTRY,
                       dome_rho, euclidean_chart, sphere_rho)


@dataclass
class SystemConstants:
    c: float                      # lens depth; x in (0, c] on the closed lens
    delta0: float                 # parameter/time half-width
    x0: float                     # confinement scale; f supported in x <= x0/2
    C: float = None               # measured lower bound on alpha
    C0: Optional[float] = None    # measured convexity constant of rho
    delta: Optional[float] = None  # measured cone width
    epsilon: Optional[float] = None
    F: Optional[float] = None     # default conjugation weight for this run

    def lam_cap(self, x):
        """Support cap |lam| <= min(sqrt(2 C x), ~delta0)."""
        return np.minimum(np.sqrt(2.0 * self.C * np.maximum(x, 0.0)),
                          0.98 * self.delta0)


class IdentityParamMap:
    def to_z(self, q):
        return np.asarray(q, dtype=np.float64)

    def from_z(self, z):
        return np.asarray(z, dtype=np.float64)

    def frame(self, z):
        z = np.atleast_2d(z)
        B, n = z.shape
        eye = np.eye(n)
        return tuple(np.broadcast_to(eye[k], (B, n)) for k in range(n))


class SphereCapParamMap:
    """Lens coordinates over a base point p on the sphere |z| = r_p.

    q = (x, y) with x = x~(z) + c and y the tangent-plane coordinates of
    z - p; z(q) places the point along the radial line through p + y by a
    1-d Newton solve on the x~ level.
    """

    def __init__(self, p, eps, c, r_p):
        self.p = np.asarray(p, dtype=np.float64)
        self.eps = float(eps)
        self.c = float(c)
        self.r_p = float(r_p)
        phat = self.p / np.linalg.norm(self.p)
        self.phat = phat
        pick = np.argmin(np.abs(phat))
        e = np.zeros(3)
        e[pick] = 1.0
        u1 = e - np.dot(e, phat) * phat
        u1 /= np.linalg.norm(u1)
        self.u1 = u1
        self.u2 = np.cross(phat, u1)

    def _xtilde(self, z):
        d = z - self.p
        return (np.linalg.norm(z, axis=-1) - self.r_p
                - self.eps * np.einsum("...i,...i->...", d, d))

    def from_z(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        q = np.empty_like(z)
        q[:, 0] = self._xtilde(z) + self.c
        d = z - self.p
        q[:, 1] = d @ self.u1
        q[:, 2] = d @ self.u2
        return q

    def to_z(self, q):
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        x, y1, y2 = q[:, 0], q[:, 1], q[:, 2]
        yy = y1 * y1 + y2 * y2
        # solve sqrt((r_p + s)^2 + |y|^2) - r_p - eps (s^2 + |y|^2) + c - x = 0
        s = (x - self.c) + self.eps * yy - yy / (2.0 * self.r_p)
        for _ in range(40):
            rr = np.sqrt((self.r_p + s) ** 2 + yy)
            G = rr - self.r_p - self.eps * (s * s + yy) + self.c - x
            dG = (self.r_p + s) / rr - 2.0 * self.eps * s
            step = -G / dG
            s = s + step
            if np.max(np.abs(step)) < 1e-14:
                break
        return (self.p[None, :] + y1[:, None] * self.u1[None, :]
                + y2[:, None] * self.u2[None, :] + s[:, None] * self.phat[None, :])

    def frame(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        d = z - self.p
        s = d @ self.phat
        y1 = d @ self.u1
        y2 = d @ self.u2
        rr = np.linalg.norm(z, axis=-1)
        dGds = (self.r_p + s) / rr - 2.0 * self.eps * s
        e_x = self.phat[None, :] / dGds[:, None]
        def e_y(u, yi):
            dGdy = yi / rr - 2.0 * self.eps * yi
            return u[None, :] - (dGdy / dGds)[:, None] * self.phat[None, :]
        return e_x, e_y(self.u1, y1), e_y(self.u2, y2)


@dataclass
class FlowSystem:
    chart: object
    generator: GeneratorE
    pmap: object
    x_field: AnalyticField
    rho: Optional[AnalyticField]
    constants: SystemConstants
    name: str = ""
    y_halfwidth: float = 1.0

    def x_of_z(self, z):
        return self.x_field.value(z)

    def param_of_z(self, z):
        return self.pmap.from_z(z)

    def z_of_param(self, q):
        return self.pmap.to_z(q)

    def base_y_halfwidth(self):
        return self.y_halfwidth

    def initial_state(self, x, y, lam, theta):
        """State (z0, v0) for params (x, y, lam, omega(theta)), batched."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        B = max(len(x), len(lam), len(theta), len(y))
        q = np.empty((B, 3))
        q[:, 0] = x
        q[:, 1:] = y
        z0 = self.pmap.to_z(q)
        e_x, e_y1, e_y2 = self.pmap.frame(z0)
        v0 = (lam[:, None] * e_x + np.cos(theta)[:, None] * e_y1
              + np.sin(theta)[:, None] * e_y2)
        return z0, v0

    def lens_mask(self, q):
        """Indicator of O_c = {x > 0} cap {rho >= 0} in lens coordinates."""
        q = np.atleast_2d(q)
        inside = q[..., 0] > 0.0
        if self.rho is not None:
            z = self.pmap.to_z(q.reshape(-1, 3)).reshape(q.shape)
            inside = inside & (self.rho.value(z) >= 0.0)
        return inside

    def rho_of_param(self, q):
        q = np.atleast_2d(q)
        z = self.pmap.to_z(q.reshape(-1, 3))
        return self.rho.value(z).reshape(q.shape[:-1])


def _first_coordinate_field():
    def fn(z):
        return np.asarray(z, dtype=np.float64)[..., 0]

    def grad_fn(z):
        z = np.asarray(z, dtype=np.float64)
        out = np.zeros_like(z)
        out[..., 0] = 1.0
        return out
    return AnalyticField(fn, grad_fn, name="x")


def build_model_lens(generator=None, c=0.02, kappa=0.05, delta0=1.0,
                     x0=None, bounds=None, metric="euclidean",
                     metric_params=None, F=None, measure=True):
    """Half-space model lens: x is the first coordinate, the physical
    boundary is the dome rho = c - x - kappa |y|^2."""
    if generator is None:
        generator = GeneratorE.constant_push(0.3, (1.0, 0.0, 0.0))
    elif isinstance(generator, str):
        generator = GENERATOR_REGISTRY[generator]()
    x0 = 2.0 * c if x0 is None else x0
    y_half = np.sqrt(c / kappa)
    if bounds is None:
        reach = 1.05 * delta0 + y_half
        bounds = np.array([[-4.0 * c, x0 / 2 + 0.6 * delta0 ** 2],
                           [-reach, reach], [-reach, reach]]).T
    if metric == "euclidean":
        chart = euclidean_chart(bounds)
    else:
        chart = METRIC_REGISTRY[metric](bounds, **(metric_params or {}))
    sys = FlowSystem(
        chart=chart, generator=generator, pmap=IdentityParamMap(),
        x_field=_first_coordinate_field(), rho=dome_rho(c, kappa),
        constants=SystemConstants(c=c, delta0=delta0, x0=x0, F=F),
        name=f"model-{metric}-{generator.name}", y_halfwidth=float(y_half))
    if measure:
        af = flow.build_alpha_field(sys)
        sys.constants.C = af.C
        sys.constants.C0 = af.C
    return sys


def build_ball_lens(level=0.0, direction=(1.0, 0.0, 0.0), eps=0.1, c=0.05,
                    metric="euclidean", metric_params=None, generator="zero",
                    delta0=0.6, x0=None, bounds=None, U0_halfwidth=None,
                    F=None, rho_pad=None):
    """Lens at the boundary sphere rho = level of the unit ball."""
    if isinstance(generator, str):
        generator = GENERATOR_REGISTRY[generator]()
    r_p = 1.0 - level
    p = r_p * np.asarray(direction, float) / np.linalg.norm(direction)
    if bounds is None:
        bounds = np.array([[-1.4, 1.4]] * 3).T
    if metric == "euclidean":
        chart = euclidean_chart(bounds)
    else:
        chart = METRIC_REGISTRY[metric](bounds, **(metric_params or {}))
    rho = sphere_rho(radius=r_p)
    if U0_halfwidth is None:
        U0_halfwidth = max(1.3 * np.sqrt(c / max(eps, 1e-9)), 6.0 * c)
    U0 = np.stack([p - U0_halfwidth, p + U0_halfwidth], axis=0)
    U0 = np.clip(U0, chart.bounds[0], chart.bounds[1])
    setup = BoundarySetup(rho=rho, p=p, epsilon=eps, c=c, U0_bounds=U0,
                          rho_pad=rho_pad)
    built = build_xtilde(setup, chart, generator)
    x0 = 2.0 * c if x0 is None else x0
    pmap = SphereCapParamMap(p=p, eps=eps, c=c, r_p=r_p)
    sys = FlowSystem(
        chart=chart, generator=generator, pmap=pmap,
        x_field=built.x, rho=rho,
        constants=SystemConstants(c=c, delta0=delta0, x0=x0,
                                  C0=built.cone.C0, delta=built.cone.delta,
                                  epsilon=eps, F=F),
        name=f"ball-{metric}-{generator.name}",
        y_halfwidth=float(np.sqrt(c / eps)))
    af = flow.build_alpha_field(sys, lam_max=min(0.3, 0.4 * delta0))
    sys.constants.C = af.C
    sys.build_result = built
    return sys


def build_shell_system(c=0.05, direction=(1.0, 0.0, 0.0), metric="euclidean",
                       metric_params=None, generator="zero", delta0=0.7,
                       x0=None, bounds=None, y_box=0.5):
    """Spherical-shell coordinates x = |z| - (1 - c) over a cap of the unit
    ball; the degenerate eps = 0 case of the lens map, used where closed-form
    chord oracles exist. The region is capped in y by construction of the
    grids, not by x~ level sets."""
    if isinstance(generator, str):
        generator = GENERATOR_REGISTRY[generator]()
    p = np.asarray(direction, float) / np.linalg.norm(direction)
    if bounds is None:
        bounds = np.array([[-1.4, 1.4]] * 3).T
    if metric == "euclidean":
        chart = euclidean_chart(bounds)
    else:
        chart = METRIC_REGISTRY[metric](bounds, **(metric_params or {}))
    x0 = 2.0 * c if x0 is None else x0
    pmap = SphereCapParamMap(p=p, eps=0.0, c=c, r_p=1.0)

    def xfn(z):
        return np.linalg.norm(z, axis=-1) - 1.0 + c

    def xgrad(z):
        z = np.asarray(z, float)
        r = np.linalg.norm(z, axis=-1)
        return z / np.where(r == 0, 1.0, r)[..., None]

    sys = FlowSystem(
        chart=chart, generator=generator, pmap=pmap,
        x_field=AnalyticField(xfn, xgrad, name="shell-x"),
        rho=sphere_rho(radius=1.0),
        constants=SystemConstants(c=c, delta0=delta0, x0=x0),
        name=f"shell-{metric}-{generator.name}", y_halfwidth=float(y_box))
    af = flow.build_alpha_field(sys, lam_max=min(0.3, 0.4 * delta0))
    sys.constants.C = af.C
    sys.constants.C0 = af.C
    return sys


def validate_delta0(system, n_check=8, shrink=0.8, max_shrink=5, seed=3):
    """Shrink delta0 until the two-point solve converges on a validation grid."""
    rng = np.random.default_rng(seed)
    for _ in range(max_shrink + 1):
        d0 = system.constants.delta0
        ok = True
        c = system.constants.c
        for _ in range(n_check):
            x = rng.uniform(0.3 * c, c)
            y = rng.uniform(-0.3 * system.y_halfwidth, 0.3 * system.y_halfwidth, 2)
            th = rng.uniform(0, 2 * np.pi)
            lam = rng.uniform(-0.5, 0.5) * system.constants.lam_cap(x)
            t = rng.uniform(0.2, 0.8) * d0
            z0, v0 = system.initial_state(x, y, lam, th)
            from .dynamics import trace_to_times
            zz, _ = trace_to_times(system.chart, system.generator, z0, v0,
                                   np.array([[t]]), d0 / 400.0)
            try:
                flow.gamma_maps(system, z0[0], zz[0, 0])
            except NoConnectionError:
                ok = False
                break
        if ok:
            return system
        system.constants.delta0 = shrink * d0
    raise ValidationError("could not validate delta0 by shrinking")
