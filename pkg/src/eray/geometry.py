"""Chart, metric, flow generator and boundary data.

Coordinates are a single chart in R^n (n >= 3 for the full pipeline). The
metric is a matrix field g(z); derivatives come analytically from the
registry builders or by central differences with step ``h_g``. Generators E
are positively homogeneous of degree 2 in v, obtained from their restriction
to unit vectors by E(z, v) = |v|_g^2 E(z, v/|v|_g).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateMetricError, ValidationError


class AnalyticField:
    """Scalar field with value and gradient; gradient falls back to central
    differences when no closed form is supplied."""

    def __init__(self, fn, grad_fn=None, h=1e-6, name=""):
        self.fn = fn
        self.grad_fn = grad_fn
        self.h = float(h)
        self.name = name

    def value(self, z):
        return np.asarray(self.fn(np.asarray(z, dtype=np.float64)))

    def grad(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(z))
        n = z.shape[-1]
        out = np.empty(z.shape)
        for k in range(n):
            dz = np.zeros(n)
            dz[k] = self.h
            out[..., k] = (self.fn(z + dz) - self.fn(z - dz)) / (2.0 * self.h)
        return out

    def shifted(self, offset, name=None):
        """Field value + offset (same gradient)."""
        return AnalyticField(lambda z: self.fn(z) + offset, self.grad_fn,
                             self.h, name or self.name)


@dataclass
class Chart:
    """Single coordinate chart with a Riemannian metric.

    ``metric(z)`` returns g with shape (..., n, n); ``metric_derivs(z)``
    returns dg with shape (..., n, n, k) meaning d g_ij / d z_k.
    """

    dim: int
    bounds: np.ndarray  # (2, n): [lo, hi]
    metric: Callable
    metric_derivs: Optional[Callable] = None
    h_g: float = 1e-5
    flat: bool = False      # constant metric: all Christoffels vanish
    identity: bool = False  # g = I exactly: fast paths for norms
    name: str = ""

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        if self.dim < 2:
            raise ValidationError("chart dimension must be >= 2")
        if self.bounds.shape != (2, self.dim):
            raise ValidationError("bounds must have shape (2, n)")

    def g(self, z):
        return np.asarray(self.metric(np.asarray(z, dtype=np.float64)))

    def dg(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.flat:
            return np.zeros(z.shape[:-1] + (self.dim,) * 3)
        if self.metric_derivs is not None:
            return np.asarray(self.metric_derivs(z))
        return self.dg_fd(z)

    def dg_fd(self, z):
        """Central-difference metric derivatives, O(h_g^2)."""
        z = np.asarray(z, dtype=np.float64)
        n = self.dim
        out = np.empty(z.shape[:-1] + (n, n, n))
        for k in range(n):
            dz = np.zeros(n)
            dz[k] = self.h_g
            out[..., k] = (self.metric(z + dz) - self.metric(z - dz)) / (2.0 * self.h_g)
        return out

    def norm_v(self, z, v):
        """|v|_g."""
        if self.identity:
            return np.linalg.norm(v, axis=-1)
        gz = self.g(z)
        return np.sqrt(np.einsum("...ij,...i,...j->...", gz, v, v))

    def contains(self, z, margin=0.0):
        z = np.asarray(z)
        lo, hi = self.bounds
        return np.all((z >= lo + margin) & (z <= hi - margin), axis=-1)


def christoffel(chart, z, check=True):
    """Christoffel symbols Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij).

    Returns shape (..., k, i, j); symmetric in (i, j). ``check`` verifies the
    metric is positive definite at z.
    """
    z = np.asarray(z, dtype=np.float64)
    gz = chart.g(z)
    if check:
        w = np.linalg.eigvalsh(gz)
        if np.any(w[..., 0] <= 0):
            raise DegenerateMetricError("metric not positive definite at queried point")
    if chart.flat:
        return np.zeros(z.shape[:-1] + (chart.dim,) * 3)
    dg = chart.dg(z)  # (..., i, j, k)
    ginv = np.linalg.inv(gz)
    d_i_g_jl = np.moveaxis(dg, -1, -3)          # (..., i, j, l)
    d_j_g_il = np.swapaxes(d_i_g_jl, -3, -2)    # (..., j, i, l) == d_j g_il at (..., i, j, l)
    d_l_g_ij = dg                               # (..., i, j, l)
    bracket = d_i_g_jl + d_j_g_il - d_l_g_ij    # (..., i, j, l)
    gamma = 0.5 * np.einsum("...kl,...ijl->...kij", ginv, bracket)
    return gamma


class GeneratorE:
    """Flow generator, positively homogeneous of degree 2 in v.

    ``fn(z, v, chart)`` must itself satisfy E(z, c v) = c^2 E(z, v); use
    ``from_unit`` to extend a generator given on unit vectors only.
    """

    def __init__(self, fn, speed_preserving=False, name="custom"):
        self.fn = fn
        self.speed_preserving = speed_preserving
        self.name = name

    def __call__(self, z, v, chart):
        return np.asarray(self.fn(np.asarray(z, float), np.asarray(v, float), chart))

    @classmethod
    def zero(cls):
        return cls(lambda z, v, chart: np.zeros_like(v), speed_preserving=True,
                   name="zero")

    @classmethod
    def from_unit(cls, unit_fn, speed_preserving=False, name="custom"):
        def fn(z, v, chart):
            nv = chart.norm_v(z, v)
            nv = np.where(nv == 0.0, 1.0, nv)
            vhat = v / nv[..., None]
            return (nv * nv)[..., None] * np.asarray(unit_fn(z, vhat))
        return cls(fn, speed_preserving=speed_preserving, name=name)

    @classmethod
    def constant_push(cls, kappa, axis):
        """E(z, v) = kappa |v|_g^2 a with a a fixed vector. Even in v, hence
        time reversible; changes speed unless a is g-orthogonal to v."""
        a = np.asarray(axis, dtype=np.float64)
        k = float(kappa)

        def fn(z, v, chart):
            nv2 = chart.norm_v(z, v) ** 2
            return (k * nv2)[..., None] * a
        return cls(fn, speed_preserving=False, name="constant-push")

    @classmethod
    def magnetic(cls, B):
        """E(z, v) = |v|_g (v x B), n = 3 only. Odd in v (not time reversible)
        and pointwise orthogonal to v, so speed is conserved for g = I."""
        Bv = np.asarray(B, dtype=np.float64)
        if Bv.shape != (3,):
            raise ValidationError("magnetic generator needs a 3-vector field strength")

        def fn(z, v, chart):
            nv = chart.norm_v(z, v)
            return nv[..., None] * np.cross(v, Bv)
        return cls(fn, speed_preserving=True, name="magnetic")


@dataclass
class BoundarySetup:
    """Data for the artificial boundary construction near p in dX."""

    rho: AnalyticField
    p: np.ndarray
    epsilon: float
    c: float
    U0_bounds: np.ndarray            # (2, n) holding box
    C0: Optional[float] = None       # measured convexity constant
    delta: Optional[float] = None    # measured cone width
    tol_bdy: float = 1e-8
    rho_pad: Optional[float] = None  # sampling shell depth below rho = 0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.U0_bounds = np.asarray(self.U0_bounds, dtype=np.float64)
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0 (0 only to exercise the degenerate error)")
        if self.c <= 0:
            raise ValidationError("c must be > 0")
        if self.rho_pad is None:
            self.rho_pad = 0.5 * self.c


def xtilde_field(setup):
    """x~(z) = -rho(z) - eps |z - p|^2 with closed-form gradient."""
    rho, p, eps = setup.rho, setup.p, setup.epsilon

    def fn(z):
        d = np.asarray(z, float) - p
        return -rho.value(z) - eps * np.einsum("...i,...i->...", d, d)

    def grad_fn(z):
        return -rho.grad(z) - 2.0 * eps * (np.asarray(z, float) - p)

    return AnalyticField(fn, grad_fn, name="xtilde")


# ---------------------------------------------------------------------------
# registry of built-in metrics and boundary functions
# ---------------------------------------------------------------------------

def euclidean_chart(bounds):
    bounds = np.asarray(bounds, dtype=np.float64)
    n = bounds.shape[1]
    eye = np.eye(n)

    def metric(z):
        return np.broadcast_to(eye, np.shape(z)[:-1] + (n, n)).copy()

    return Chart(dim=n, bounds=bounds, metric=metric,
                 metric_derivs=lambda z: np.zeros(np.shape(z)[:-1] + (n, n, n)),
                 flat=True, identity=True, name="euclidean")


def conformal_chart(bounds, speed, dspeed, name="conformal"):
    """g = c(z)^{-2} I for a sound speed c(z) with gradient dc(z)."""
    bounds = np.asarray(bounds, dtype=np.float64)
    n = bounds.shape[1]
    eye = np.eye(n)

    def metric(z):
        c = np.asarray(speed(z), dtype=np.float64)
        return c[..., None, None] ** -2 * eye

    def metric_derivs(z):
        c = np.asarray(speed(z), dtype=np.float64)
        dc = np.asarray(dspeed(z), dtype=np.float64)          # (..., k)
        coef = -2.0 * c[..., None] ** -3 * dc                  # (..., k)
        return coef[..., None, None, :] * eye[..., None]       # (..., i, j, k)

    return Chart(dim=n, bounds=bounds, metric=metric, metric_derivs=metric_derivs,
                 name=name)


def radial_herglotz_chart(bounds, c0=1.0, a=0.2):
    """Sound speed c(r) = c0 + a (1 - r); satisfies d/dr (r / c(r)) > 0 for
    a < c0 + a, which holds for the defaults."""
    def speed(z):
        r = np.linalg.norm(z, axis=-1)
        return c0 + a * (1.0 - r)

    def dspeed(z):
        z = np.asarray(z, float)
        r = np.linalg.norm(z, axis=-1)
        r = np.where(r == 0, 1.0, r)
        return -a * z / r[..., None]

    return conformal_chart(bounds, speed, dspeed, name="radial-herglotz")


def const_curvature_chart(bounds, curvature=0.3):
    """Conformal model g = 4 (1 + k |z|^2)^{-2} I of constant curvature k."""
    k = float(curvature)

    def speed(z):
        # g = c^{-2} I with c = (1 + k |z|^2) / 2
        z = np.asarray(z, float)
        return 0.5 * (1.0 + k * np.einsum("...i,...i->...", z, z))

    def dspeed(z):
        return k * np.asarray(z, float)

    return conformal_chart(bounds, speed, dspeed, name="constant-curvature")


def sphere_rho(radius=1.0):
    """rho = R - |z|: positive inside the ball, |grad rho| = 1."""
    R = float(radius)

    def fn(z):
        return R - np.linalg.norm(z, axis=-1)

    def grad_fn(z):
        z = np.asarray(z, float)
        r = np.linalg.norm(z, axis=-1)
        r = np.where(r == 0, 1.0, r)
        return -z / r[..., None]

    return AnalyticField(fn, grad_fn, name="sphere")


def dome_rho(depth, kappa):
    """Model boundary rho = depth - x - kappa |y|^2 over the face x = 0."""
    def fn(z):
        z = np.asarray(z, float)
        return depth - z[..., 0] - kappa * np.einsum("...i,...i->...", z[..., 1:], z[..., 1:])

    def grad_fn(z):
        z = np.asarray(z, float)
        out = np.empty_like(z)
        out[..., 0] = -1.0
        out[..., 1:] = -2.0 * kappa * z[..., 1:]
        return out

    return AnalyticField(fn, grad_fn, name="dome")


METRIC_REGISTRY = {
    "euclidean": euclidean_chart,
    "radial-herglotz": radial_herglotz_chart,
    "constant-curvature": const_curvature_chart,
}

GENERATOR_REGISTRY = {
    "zero": lambda **kw: GeneratorE.zero(),
    "constant-push": lambda kappa=0.3, axis=(1.0, 0.0, 0.0), **kw:
        GeneratorE.constant_push(kappa, axis),
    "magnetic": lambda B=(0.0, 0.0, 0.3), **kw: GeneratorE.magnetic(B),
}
