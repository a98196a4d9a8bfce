"""Convexity tests and the artificial boundary function x~.

The convexity function Q(z, v) = (H_g^2 rho)(v) + <E(z, v), grad rho> is
evaluated by tracing the flow through (z, v) and central-differencing
rho o gamma; strict convexity at a boundary point means Q < 0 on all
nonzero tangents. Constants (delta, C0) are measured by dense sampling with
a 0.9 safety factor, never optimized.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import flow_second_derivative
from .errors import (ConeViolationError, ConvexityLostError, RegionEscapeError,
                     ValidationError)
from .geometry import AnalyticField, xtilde_field

FD_STEP = 1e-3          # stencil step h_t for along-flow second derivatives
SAFETY = 0.9            # applied to every measured constant


def tangent_frame(w):
    """Orthonormal basis (u1, u2) of ker(w . ) for covectors w, batched.

    Works for n = 3; the constraint H_g f(v) = df(v) = 0 is metric free.
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    what = w / np.linalg.norm(w, axis=-1, keepdims=True)
    # axis least aligned with w
    pick = np.argmin(np.abs(what), axis=-1)
    e = np.zeros_like(w)
    e[np.arange(len(w)), pick] = 1.0
    u1 = e - np.einsum("bi,bi->b", e, what)[:, None] * what
    u1 /= np.linalg.norm(u1, axis=-1, keepdims=True)
    u2 = np.cross(what, u1)
    return u1, u2


def convexity_form(chart, generator, rho, z, v, delta=None, tol_bdy=1e-8,
                   h_t=FD_STEP, require_boundary=True):
    """Q(z, v) for a single state; Q < 0 on unit tangents = strict convexity.

    Preconditions per contract: z on the boundary (|rho(z)| < tol_bdy) and v
    inside the tangent cone |H_g rho(v)| < delta |v|_g (exact tangency when
    delta is None, with a small slack for rounding).
    """
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.all(v == 0.0):
        raise ValidationError("v = 0 is excluded")
    if require_boundary and abs(float(rho.value(z))) >= tol_bdy:
        raise ValidationError("z is not a boundary point: |rho(z)| >= tol_bdy")
    nv = float(chart.norm_v(z, v))
    hrho = float(np.dot(rho.grad(z), v))
    cone = delta if delta is not None else 1e-6
    if abs(hrho) >= cone * nv:
        raise ConeViolationError(
            f"|H_g rho(v)| = {abs(hrho):.3e} >= {cone:.3e} * |v|_g")
    q = flow_second_derivative(chart, generator, rho.value, z[None], v[None], h_t)
    return float(q[0])


def _sample_states(field_grad, points, n_dir, cone_tilt=0.0, rng=None):
    """Unit-Euclidean directions tangent to the level sets of a field through
    the given points, optionally tilted into the cone by +-cone_tilt."""
    pts = np.asarray(points, dtype=np.float64)
    w = field_grad(pts)
    u1, u2 = tangent_frame(w)
    theta = np.linspace(0.0, 2.0 * np.pi, n_dir, endpoint=False)
    ct, st = np.cos(theta), np.sin(theta)
    z = np.repeat(pts, n_dir, axis=0)
    v = (u1[:, None, :] * ct[None, :, None]
         + u2[:, None, :] * st[None, :, None]).reshape(-1, pts.shape[-1])
    if cone_tilt != 0.0:
        what = w / np.linalg.norm(w, axis=-1, keepdims=True)
        what = np.repeat(what, n_dir, axis=0)
        if rng is None:
            rng = np.random.default_rng(0)
        phi = rng.uniform(-cone_tilt, cone_tilt, size=len(v))
        v = np.cos(phi)[:, None] * v + np.sin(phi)[:, None] * what
    return z, v


def _grid_points(bounds, per_axis):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in np.asarray(bounds).T]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class ConeMeasurement:
    delta: float
    C0: float
    n_points: int
    n_states: int


def measure_cone(chart, generator, rho, setup, per_axis=20, n_dir=64,
                 delta_grid=(0.30, 0.20, 0.12, 0.08, 0.05, 0.02), rng=None):
    """Measure (delta, C0) with |H_g rho(v)| < delta |v|_g implying
    Q(z, v) <= -C0 |v|_g^2 over the sampled shell of U0.

    Sampling is restricted to U0 intersected with {rho >= -rho_pad}:
    corners of the holding box far below the boundary shell would otherwise
    control the constant while no transform curve ever visits them.
    """
    rng = rng or np.random.default_rng(1234)
    pts = _grid_points(setup.U0_bounds, per_axis)
    keep = (rho.value(pts) >= -setup.rho_pad) & chart.contains(pts)
    pts = pts[keep]
    if len(pts) == 0:
        raise ValidationError("no sample points: U0 does not meet the boundary shell")

    best = None
    for delta in delta_grid:
        z, v = _sample_states(rho.grad, pts, n_dir, cone_tilt=0.0)
        # tilt each tangent direction to the edge of the candidate cone
        w = rho.grad(z)
        what = w / np.linalg.norm(w, axis=-1, keepdims=True)
        phi = np.arcsin(np.clip(delta, 0.0, 0.99))
        signs = rng.choice([-1.0, 1.0], size=len(v))
        v_edge = np.cos(phi) * v + (signs * np.sin(phi))[:, None] * what
        q_tan = flow_second_derivative(chart, generator, rho.value, z, v, FD_STEP)
        q_edge = flow_second_derivative(chart, generator, rho.value, z, v_edge, FD_STEP)
        nv2_t = chart.norm_v(z, v) ** 2
        nv2_e = chart.norm_v(z, v_edge) ** 2
        worst = max(np.max(q_tan / nv2_t), np.max(q_edge / nv2_e))
        if worst < 0.0:
            best = ConeMeasurement(delta=SAFETY * delta, C0=SAFETY * (-worst),
                                   n_points=len(pts), n_states=2 * len(v))
            break
    if best is None:
        raise ConvexityLostError("no cone width with negative convexity form found")
    return best


@dataclass
class XtildeResult:
    xtilde: AnalyticField
    x: AnalyticField          # x = x~ + c, boundary defining for the lens
    C0: float                 # measured along-flow convexity of x~ level sets
    c0: float                 # largest admissible lens depth
    cone: ConeMeasurement     # (delta, C0) measurement for rho


def build_xtilde(setup, chart, generator, per_axis=20, n_dir=64, rng=None):
    """Construct x~ = -rho - eps |z - p|^2 and measure its constants.

    Raises ConvexityLostError when the measured constant is non-positive
    (eps too large, or the boundary is not strictly convex at p) and
    RegionEscapeError when O_c = {x~ > -c, rho >= 0} is not compactly inside
    U0 (eps too small relative to c, including the degenerate eps = 0).
    """
    rng = rng or np.random.default_rng(99)

    # strict convexity at p on sampled unit tangents
    z0 = np.broadcast_to(setup.p, (1, chart.dim))
    zb, vb = _sample_states(setup.rho.grad, z0, n_dir)
    q_p = flow_second_derivative(chart, generator, setup.rho.value, zb, vb, FD_STEP)
    if np.max(q_p / chart.norm_v(zb, vb) ** 2) >= 0.0:
        raise ConvexityLostError("boundary is not strictly convex at p for this flow")

    cone = measure_cone(chart, generator, setup.rho, setup,
                        per_axis=per_axis, n_dir=n_dir, rng=rng)
    xt = xtilde_field(setup)

    # containment scan: O_c must keep a positive margin to the U0 faces
    pts = _grid_points(setup.U0_bounds, max(per_axis, 24))
    lo, hi = setup.U0_bounds
    margin = 0.02 * float(np.min(hi - lo))
    region = (xt.value(pts) > -setup.c) & (setup.rho.value(pts) >= 0.0)
    if not np.any(region):
        raise ValidationError("empty lens region: increase c or move p")
    near_face = np.any((pts <= lo + margin) | (pts >= hi - margin), axis=-1)
    if np.any(region & near_face):
        raise RegionEscapeError(
            "region {x~ > -c, rho >= 0} reaches the U0 boundary; "
            "decrease c / increase eps")

    # measured convexity constant of x~ on the lens shell
    shell = (xt.value(pts) > -2.0 * setup.c) & (setup.rho.value(pts) >= -setup.rho_pad)
    sample_pts = pts[shell & chart.contains(pts)]
    if len(sample_pts) > 4000:
        sample_pts = sample_pts[rng.choice(len(sample_pts), 4000, replace=False)]
    z, v = _sample_states(xt.grad, sample_pts, n_dir)
    q = flow_second_derivative(chart, generator, xt.value, z, v, FD_STEP)
    # x~ levels are concave from the super-level side: Q_xtilde > 0 on tangents
    ratio = q / chart.norm_v(z, v) ** 2
    c0_meas = SAFETY * float(np.min(ratio))
    if c0_meas <= 0.0:
        raise ConvexityLostError(
            f"convexity lost for eps = {setup.epsilon}: measured C0 = {c0_meas:.3e}")

    # largest admissible c: scan until the containment margin is violated
    c0 = setup.c
    for cc in np.linspace(setup.c, 4.0 * setup.c, 13)[1:]:
        reg = (xt.value(pts) > -cc) & (setup.rho.value(pts) >= 0.0)
        if np.any(reg & near_face):
            break
        c0 = float(cc)

    setup.C0 = cone.C0
    setup.delta = cone.delta
    return XtildeResult(xtilde=xt, x=xt.shifted(setup.c, name="x"),
                        C0=c0_meas, c0=c0, cone=cone)
