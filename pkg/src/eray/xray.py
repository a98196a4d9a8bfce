"""Forward transform over the sampled near-tangent curve family.

Everything is expressed in lens coordinates q = (x, y1, y2). A ScalarGrid
stores samples on a node-centered tensor grid with trilinear interpolation
(zero outside the box); the curve family is the tensor product of an x-grid
on (0, c], a y-grid, per-x Gauss-Legendre lambda nodes capped at
sqrt(2 C x), and uniform circle angles omega.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import trace_to_times
from .errors import (InsufficientResolutionError, InvalidDataError,
                     ValidationError)
from .util import gauss_legendre, circle_nodes, simpson_weights, quintic_ramp

EXIT_OK = 0
EXIT_CHART = 1          # left the chart inside its window: excluded


@dataclass
class ScalarGrid:
    """Real samples on a node-centered box grid in lens coordinates."""

    region: np.ndarray            # (2, 3) lo/hi
    values: np.ndarray            # (N1, N2, N3)
    name: str = ""

    def __post_init__(self):
        self.region = np.asarray(self.region, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.region.shape != (2, self.values.ndim):
            raise ValidationError("region must be (2, ndim)")

    @property
    def shape(self):
        return self.values.shape

    def axes(self):
        lo, hi = self.region
        return [np.linspace(lo[k], hi[k], self.shape[k])
                for k in range(len(lo))]

    def steps(self):
        lo, hi = self.region
        return (hi - lo) / (np.array(self.shape) - 1.0)

    def nodes(self):
        ax = self.axes()
        mesh = np.meshgrid(*ax, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise InvalidDataError(f"grid '{self.name}' contains NaN/Inf")

    def interp(self, pts):
        plan = interp_plan(self.region, self.shape, pts)
        return interp_apply(self.values.ravel(), plan)

    def like(self, values, name=""):
        return ScalarGrid(self.region.copy(), np.asarray(values, float), name)

    def l2(self, weights=None):
        dv = float(np.prod(self.steps()))
        v = self.values if weights is None else self.values * weights
        return float(np.sqrt(np.sum(v * v) * dv))


@dataclass
class InterpPlan:
    """Precomputed trilinear gather: base corner + fractional offsets."""

    base: np.ndarray       # (B,) int32 flat index of the low corner
    frac: np.ndarray       # (B, 3) float64 in [0, 1]
    inside: np.ndarray     # (B,) bool
    offsets: np.ndarray    # (8,) flat-index corner offsets
    nflat: int


def interp_plan(region, shape, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    lo, hi = np.asarray(region, dtype=np.float64)
    shp = np.asarray(shape)
    step = (hi - lo) / (shp - 1.0)
    u = (pts - lo) / step
    inside = np.all((u >= 0.0) & (u <= shp - 1.0), axis=-1)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, shp - 2)
    frac = np.clip(u - i0, 0.0, 1.0)
    base = ((i0[:, 0] * shp[1]) + i0[:, 1]) * shp[2] + i0[:, 2]
    offs = np.array([0, 1, shp[2], shp[2] + 1,
                     shp[1] * shp[2], shp[1] * shp[2] + 1,
                     (shp[1] + 1) * shp[2], (shp[1] + 1) * shp[2] + 1],
                    dtype=np.int64)
    return InterpPlan(base=base.astype(np.int64), frac=frac, inside=inside,
                      offsets=offs, nflat=int(np.prod(shp)))


def _corner_weights(plan):
    fx, fy, fz = plan.frac[:, 0], plan.frac[:, 1], plan.frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    w = np.stack([gx * gy * gz, gx * gy * fz, gx * fy * gz, gx * fy * fz,
                  fx * gy * gz, fx * gy * fz, fx * fy * gz, fx * fy * fz],
                 axis=0)
    w *= plan.inside[None, :]
    return w


def interp_apply(flat_values, plan):
    w = _corner_weights(plan)
    out = np.zeros(len(plan.base))
    for k in range(8):
        out += w[k] * flat_values[plan.base + plan.offsets[k]]
    return out


def interp_transpose(plan, coeffs, nflat=None):
    """Exact transpose of interp_apply: scatter-add via bincount."""
    nflat = nflat or plan.nflat
    w = _corner_weights(plan)
    out = np.zeros(nflat)
    for k in range(8):
        out += np.bincount(plan.base + plan.offsets[k], weights=w[k] * coeffs,
                           minlength=nflat)
    return out


class CallableField:
    """Analytic stand-in for a ScalarGrid (probe and oracle use)."""

    def __init__(self, fn, name="callable"):
        self.fn = fn
        self.name = name

    def interp(self, pts):
        return np.asarray(self.fn(np.atleast_2d(np.asarray(pts, float))))


@dataclass
class CurveFamily:
    """Tensor-product sampling of the near-tangent curves over the lens."""

    x_nodes: np.ndarray            # (Nx,) in (0, c]
    y_nodes: tuple                 # ((Ny1,), (Ny2,))
    lam_nodes: np.ndarray          # (Nx, Nl)
    lam_weights: np.ndarray        # (Nx, Nl)
    omega_angles: np.ndarray       # (Nw,)
    omega_weights: np.ndarray      # (Nw,)
    lam_cap: np.ndarray            # (Nx,)
    orientation: str = "both"      # 'both' | 'plus' | 'minus'

    @property
    def base_shape(self):
        return (len(self.x_nodes), len(self.y_nodes[0]), len(self.y_nodes[1]))

    @property
    def shape(self):
        return self.base_shape + (self.lam_nodes.shape[1], len(self.omega_angles))

    @property
    def n_curves(self):
        return int(np.prod(self.shape))

    def flat_params(self):
        """Arrays (B,) / (B,2) of start params for every curve, C-ordered."""
        Nx, Ny1, Ny2 = self.base_shape
        Nl, Nw = self.shape[3], self.shape[4]
        X = np.repeat(self.x_nodes, Ny1 * Ny2 * Nl * Nw)
        Y1 = np.tile(np.repeat(self.y_nodes[0], Ny2 * Nl * Nw), Nx)
        Y2 = np.tile(np.repeat(self.y_nodes[1], Nl * Nw), Nx * Ny1)
        lam_per_x = np.repeat(self.lam_nodes, Ny1 * Ny2, axis=0).reshape(-1, Nl)
        LAM = np.repeat(lam_per_x, Nw, axis=1).ravel()
        TH = np.tile(self.omega_angles, Nx * Ny1 * Ny2 * Nl)
        return X, np.stack([Y1, Y2], axis=-1), LAM, TH


def sample_family(system, resolution=(12, 16, 5, 6), x_range=None, y_box=None,
                  orientation="both"):
    """Deterministic family grid; the lambda width shrinks like sqrt(x).

    resolution = (Nx, Ny per axis, N_lambda, N_omega).
    """
    Nx, Ny, Nl, Nw = resolution
    if Nl < 3:
        raise InsufficientResolutionError(
            "fewer than 3 lambda nodes at the smallest x")
    cst = system.constants
    if x_range is None:
        x_range = (cst.c / Nx, cst.c)
    if x_range[0] <= 0:
        raise ValidationError("family x-grid must stay in (0, c]")
    if y_box is None:
        y_box = system.base_y_halfwidth()
    x_nodes = np.linspace(x_range[0], x_range[1], Nx)
    y1 = np.linspace(-y_box, y_box, Ny)
    y2 = np.linspace(-y_box, y_box, Ny)
    cap = cst.lam_cap(x_nodes)
    nodes = np.empty((Nx, Nl))
    weights = np.empty((Nx, Nl))
    for i, ci in enumerate(cap):
        nodes[i], weights[i] = gauss_legendre(Nl, -ci, ci)
    ang, wang = circle_nodes(Nw)
    return CurveFamily(x_nodes=x_nodes, y_nodes=(y1, y2), lam_nodes=nodes,
                       lam_weights=weights, omega_angles=ang, omega_weights=wang,
                       lam_cap=cap, orientation=orientation)


@dataclass
class Sinogram:
    family: CurveFamily
    values: np.ndarray           # family.shape
    exit_flags: np.ndarray       # family.shape, uint8
    constants: dict

    def check(self):
        ok = self.exit_flags == EXIT_OK
        if not np.all(np.isfinite(self.values[ok])):
            raise InvalidDataError("non-finite transform values on valid curves")


def conservative_window(system, x, lam, slab_top):
    """Superset [t-, t+] of {t : x'(t) <= slab_top} from the convexity bound
    x' >= C/2 (t + lam/C)^2 + (x - lam^2/(2C)), clipped to (-delta0, delta0)."""
    cst = system.constants
    C = cst.C
    head = np.maximum(slab_top - x, 0.0)
    T = np.sqrt(2.0 * head / C + (lam / C) ** 2)
    t_minus = np.maximum(-lam / C - T, -cst.delta0)
    t_plus = np.minimum(-lam / C + T, cst.delta0)
    t_minus = np.minimum(t_minus, 0.0)
    t_plus = np.maximum(t_plus, 0.0)
    return t_minus, t_plus


class CurvePlan:
    """Traced Simpson nodes for a batch of curves, reusable across fields.

    sample_q holds lens coordinates of every node; weights holds the Simpson
    weights scaled by each curve's node spacing.
    """

    def __init__(self, system, X, Y, LAM, TH, n_nodes=33, h_max=None,
                 orientation="both", sharp_window=False, slab_margin=1.0):
        cst = system.constants
        if h_max is None:
            h_max = cst.delta0 / 400.0
        if n_nodes % 2 == 0:
            n_nodes += 1
        slab_top = 0.5 * cst.x0 * slab_margin
        t_lo, t_hi = conservative_window(system, X, LAM, slab_top)
        if orientation == "plus":
            t_lo = np.zeros_like(t_lo)
        elif orientation == "minus":
            t_hi = np.zeros_like(t_hi)
        z0, v0 = system.initial_state(X, Y, LAM, TH)
        if sharp_window:
            t_lo, t_hi = _sharpen_windows(system, z0, v0, t_lo, t_hi,
                                          slab_top, h_max)
        s = np.linspace(0.0, 1.0, n_nodes)
        times = t_lo[:, None] + (t_hi - t_lo)[:, None] * s[None, :]
        zz, _ = trace_to_times(system.chart, system.generator, z0, v0,
                               times, h_max)
        B, M, n = zz.shape
        q = system.param_of_z(zz.reshape(-1, n)).reshape(B, M, n)
        self.sample_q = q
        self.times = times
        base_w = simpson_weights(n_nodes, 1.0)
        self.weights = base_w[None, :] * ((t_hi - t_lo) / (n_nodes - 1))[:, None]
        inb = system.chart.contains(zz.reshape(-1, n)).reshape(B, M)
        inslab = q[:, :, 0] <= slab_top + 1e-12
        self.exit_flags = np.where(np.all(inb | ~inslab, axis=1),
                                   EXIT_OK, EXIT_CHART).astype(np.uint8)
        self.n_nodes = n_nodes

    def integrate(self, fld):
        B, M, _ = self.sample_q.shape
        vals = fld.interp(self.sample_q.reshape(B * M, 3)).reshape(B, M)
        out = np.sum(vals * self.weights, axis=1)
        out[self.exit_flags != EXIT_OK] = np.nan
        return out


def _sharpen_windows(system, z0, v0, t_lo, t_hi, slab_top, h_max, n_iter=48):
    """Refine window endpoints to the first crossing of {x = 0} or
    {x = slab_top} by batched bisection on re-integrated states."""
    def x_at(times):
        zz, _ = trace_to_times(system.chart, system.generator, z0, v0,
                               times[:, None], h_max)
        return system.x_of_z(zz[:, 0, :])

    out = []
    for tt in (t_lo, t_hi):
        x_end = x_at(tt)
        needs = (x_end > slab_top) | (x_end < 0.0)
        lo = np.zeros_like(tt)      # x(0) is inside the slab
        hi = tt.copy()
        for _ in range(n_iter):
            if not np.any(needs):
                break
            mid = 0.5 * (lo + hi)
            xm = x_at(np.where(needs, mid, 0.0))
            outside = (xm > slab_top) | (xm < 0.0)
            hi = np.where(needs & outside, mid, hi)
            lo = np.where(needs & ~outside, mid, lo)
            if np.max(np.abs(hi - lo)[needs]) < 1e-13:
                break
        out.append(np.where(needs, 0.5 * (lo + hi), tt))
    return out[0], out[1]


def forward(system, f, family, n_nodes=33, h_max=None, sharp_window=False,
            plan=None):
    """Sinogram of f over the family: If = Simpson integral of f o gamma on
    the in-slab window; linear in f. Chart-exit curves are flagged, not
    silently zeroed."""
    if hasattr(f, "check_finite"):
        f.check_finite()
    if plan is None:
        X, Y, LAM, TH = family.flat_params()
        plan = CurvePlan(system, X, Y, LAM, TH, n_nodes=n_nodes, h_max=h_max,
                         orientation=family.orientation,
                         sharp_window=sharp_window)
    vals = plan.integrate(f)
    cst = system.constants
    return Sinogram(family=family, values=vals.reshape(family.shape),
                    exit_flags=plan.exit_flags.reshape(family.shape),
                    constants=dict(C=cst.C, delta0=cst.delta0, x0=cst.x0,
                                   c=cst.c, F=cst.F if cst.F else 0.0))


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

def support_mask_factory(system, ramp_x=None, ramp_rho=None):
    """Smooth cutoff enforcing supp f inside {x <= x0/2} cap {rho >= 0}.

    Quintic ramps of width x0/10 (in x, below the cut) and ramp_rho (in rho,
    inside the domain) avoid quadrature jumps at the support boundary.
    """
    cst = system.constants
    wx = cst.x0 / 10.0 if ramp_x is None else ramp_x
    wr = 0.15 * cst.c if ramp_rho is None else ramp_rho

    def mask(q):
        q = np.atleast_2d(q)
        m = quintic_ramp((0.5 * cst.x0 - q[..., 0]) / wx)
        if system.rho is not None and wr > 0:
            m = m * quintic_ramp(system.rho_of_param(q) / wr)
        return m
    return mask


def gaussian_phantom(center, sigma, amplitude=1.0):
    center = np.asarray(center, float)

    def fn(q):
        d = (np.atleast_2d(q) - center) / np.asarray(sigma, float)
        return amplitude * np.exp(-0.5 * np.sum(d * d, axis=-1))
    return fn


def blob_sum_phantom(blobs):
    """Shepp-like phantom: sum of anisotropic Gaussian blobs
    [(center, sigma, amplitude), ...]."""
    fns = [gaussian_phantom(c, s, a) for c, s, a in blobs]

    def fn(q):
        out = fns[0](q)
        for g in fns[1:]:
            out = out + g(q)
        return out
    return fn


def indicator_phantom(lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)

    def fn(q):
        q = np.atleast_2d(q)
        return np.all((q >= lo) & (q <= hi), axis=-1).astype(float)
    return fn


def sample_on_grid(system, fn, region, shape, apply_support=True, name="f"):
    """Evaluate fn on the node grid and enforce the support invariant."""
    grid = ScalarGrid(region=np.asarray(region, float),
                      values=np.zeros(shape), name=name)
    pts = grid.nodes()
    vals = np.asarray(fn(pts), dtype=np.float64)
    if apply_support:
        vals = vals * support_mask_factory(system)(pts)
    grid.values = vals.reshape(shape)
    return grid
