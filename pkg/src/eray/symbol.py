"""Boundary kernel at the face and its Fourier transform by three routes.

The face kernel (n = 3, scattering coordinates X, Y):

    K(X, Y) = e^{-F X} |Y|^{-2} [ chi((X - a+(Yh) |Y|^2)/|Y|; a+)
                                + chi((-X + a-(Yh) |Y|^2)/|Y|; a-) ]

with a+(Yh) = alpha(0, y, 0, Yh), a-(Yh) = a+(-Yh). Transforms use the
convention  F u (s) = int e^{-i s sigma} u(sigma) d sigma, and every fixed
positive constant is carried exactly so routes compare without fitted
scales:

* gaussian route (untruncated chi): per term the X-transform is
  |Y|^{-1} sqrt(2 pi a/F) exp(-b a |Y|^2) with b = (xi^2 + F^2)/(2F); the
  oscillatory factors cancel exactly. Folding the two terms over Yh -> -Yh,

      F_{X,Y} K (xi, eta) = pi sqrt(2/F) b^{-1/2}
                            int_{S^1} exp(-(eta . Yh)^2 / (4 b a(Yh))) dYh
                          = 2 pi <xi>^{-1} P(|eta|/<xi>),
      P(u) = int_{S^1} exp(-(u Yh_par)^2 F / (2 a(Yh))) dYh,

* quad route: X-transform by substituted Gauss quadrature on the chi
  support (exact for the truncated chi), then polar Y-quadrature;
* grid route: uniform X-grid discrete transform of raw kernel values,
  then polar Y-quadrature (the all-numeric cross-check).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import (AliasingError, EllipticityFailureError, OnDiagonalError,
                     ValidationError)
from .util import gauss_legendre, japanese_bracket

TAIL = 1e-12


def _as_alpha_fn(alpha):
    if callable(alpha):
        return alpha
    a = float(alpha)
    return lambda theta: np.full_like(np.asarray(theta, dtype=np.float64), a)


@dataclass
class BoundaryKernel:
    """Face kernel data at one base point y."""

    F: float = 1.0
    alpha_plus: Union[float, Callable] = 1.0
    chi: Optional[Callable] = None    # chi(s, alpha) -> values; None = Gaussian
    s_max: Optional[float] = None     # truncation; None = untruncated Gaussian
    n: int = 3
    y: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.n != 3:
            raise ValidationError("kernel analysis implements n = 3")
        if self.F <= 0:
            raise ValidationError("F > 0 required")
        self._afn = _as_alpha_fn(self.alpha_plus)
        th = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
        av = np.asarray(self._afn(th), dtype=np.float64)
        if np.any(av <= 0):
            raise ValidationError("alpha must be positive on the circle")
        self.alpha_min = float(np.min(av))
        self.alpha_max = float(np.max(av))
        if self.s_max is None and self.chi is None:
            self.s_max = 4.0 * np.sqrt(self.alpha_max / self.F)

    def alpha_at(self, theta):
        return np.asarray(self._afn(np.asarray(theta, dtype=np.float64)))

    def chi_eval(self, s, alpha):
        if self.chi is not None:
            return self.chi(s, alpha)
        out = np.exp(-np.asarray(s) ** 2 * self.F / (2.0 * alpha))
        if self.s_max is not None:
            out = out * (np.abs(s) <= self.s_max)
        return out

    def support_smax(self):
        return self.s_max if self.s_max is not None else \
            6.5 * np.sqrt(self.alpha_max / self.F)

    def y_extent(self):
        """Radius beyond which the kernel is below TAIL * its O(1) scale."""
        sm = self.support_smax()
        a, F = self.alpha_min, self.F
        # start at the root of a r^2 - sm r = -log(TAIL)/F and tighten
        r = (sm + np.sqrt(sm * sm + 4.0 * a * (-np.log(TAIL)) / F)) / (2.0 * a)
        for _ in range(60):
            val = np.exp(-F * max(a * r * r - sm * r, 0.0)) / (r * r)
            if val < TAIL:
                break
            r *= 1.05
        return r

    def x_extent(self):
        sm = self.support_smax()
        ymax = self.y_extent()
        x_lo = -(sm * sm) / (4.0 * self.alpha_min) - 1.0
        x_hi = min(self.alpha_max * ymax * ymax + sm * ymax,
                   (-np.log(TAIL) + 5.0) / self.F)
        return x_lo, x_hi


def kernel_eval(bk, X, Y):
    """K(X, Y) pointwise; Y may not vanish (conormal diagonal)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    r = np.linalg.norm(Y, axis=-1)
    if np.any(r == 0.0):
        raise OnDiagonalError("kernel is conormal at Y = 0; offset the grid")
    th = np.arctan2(Y[..., 1], Y[..., 0])
    ap = bk.alpha_at(th)
    am = bk.alpha_at(th + np.pi)
    t1 = bk.chi_eval((X - ap * r * r) / r, ap)
    t2 = bk.chi_eval((-X + am * r * r) / r, am)
    return np.exp(-bk.F * X) * r ** (1 - bk.n) * (t1 + t2)


def kernel_support(bk, X, Y):
    """Indicator of the chi-support (geometry only, not values)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    r = np.linalg.norm(Y, axis=-1)
    th = np.arctan2(Y[..., 1], Y[..., 0])
    sm = bk.support_smax()
    ap = bk.alpha_at(th)
    am = bk.alpha_at(th + np.pi)
    return (np.abs((X - ap * r * r) / r) <= sm) | \
           (np.abs((-X + am * r * r) / r) <= sm)


# ---------------------------------------------------------------------------
# Fourier transform in X
# ---------------------------------------------------------------------------

def fourier_X(bk, xi, Y, branch="analytic", n_gauss=None):
    """F_X K(xi, Y), complex.

    'analytic' evaluates the closed Gaussian form (oscillatory factors from
    the shift and from chi-hat at (xi - iF)|Y| cancel exactly); 'numeric'
    quadratures the truncated kernel on its support.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    r = np.linalg.norm(Y, axis=-1)
    if np.any(r == 0.0):
        raise OnDiagonalError("Y = 0")
    th = np.arctan2(Y[..., 1], Y[..., 0])
    ap = bk.alpha_at(th)
    am = bk.alpha_at(th + np.pi)
    if branch == "analytic":
        b = (xi * xi + bk.F * bk.F) / (2.0 * bk.F)
        val = (np.sqrt(2.0 * np.pi * ap / bk.F) * np.exp(-b * ap * r * r)
               + np.sqrt(2.0 * np.pi * am / bk.F) * np.exp(-b * am * r * r))
        return (r ** (2 - bk.n) * val).astype(complex)
    if branch != "numeric":
        raise ValidationError("branch must be 'analytic' or 'numeric'")
    sm = bk.support_smax()
    if n_gauss is None:
        n_gauss = int(min(4096, 96 + 3.0 * abs(xi) * np.max(r) * sm))
    s, w = gauss_legendre(n_gauss, -sm, sm)
    cpF = bk.F + 1j * xi
    out = np.zeros(len(r), dtype=complex)
    for a, sgn in ((ap, +1.0), (am, -1.0)):
        chi_s = bk.chi_eval(s[None, :], a[:, None])
        phase = np.exp(-sgn * cpF * s[None, :] * r[:, None])
        out += (np.exp(-cpF * a * r * r)
                * np.sum(chi_s * phase * w[None, :], axis=1))
    return r ** (2 - bk.n) * out


# ---------------------------------------------------------------------------
# Fourier transform in (X, Y)
# ---------------------------------------------------------------------------

def _polar_y_nodes(bk, eta_max, n_theta=256, panel=0.5, n_per_panel=16):
    """Composite Gauss radial nodes resolving e^{-i r eta . Yh} up to
    |eta| = eta_max, uniform circle angles."""
    rmax = bk.y_extent()
    # 16-point Gauss handles ~20 radians of phase per panel
    width = min(panel, 16.0 / max(eta_max, 1.0))
    n_panels = int(np.ceil(rmax / width))
    rs, ws = [], []
    for k in range(n_panels):
        r0, r1 = k * width, min((k + 1) * width, rmax)
        x, w = gauss_legendre(n_per_panel, r0, r1)
        rs.append(x)
        ws.append(w)
    r = np.concatenate(rs)
    wr = np.concatenate(ws)
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    wth = 2.0 * np.pi / n_theta
    return r, wr, th, wth


def P_of_u(bk, u, n_theta=256):
    """P(u) = int_{S^1} exp(-(u cos t)^2 F / (2 alpha(t))) dt."""
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    a = bk.alpha_at(th)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    ex = np.exp(-(np.cos(th)[None, :] * u[:, None]) ** 2
                * bk.F / (2.0 * a[None, :]))
    return ex.sum(axis=1) * (2.0 * np.pi / n_theta)


def fourier_XY_gaussian(bk, xi, eta, n_theta=256):
    """Analytic-Gaussian polar reduction with exact constants.

    xi: (...,) array; eta: (..., 2) matching. Requires positive alpha bounds
    (checked at construction).
    """
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    b = (xi * xi + bk.F * bk.F) / (2.0 * bk.F)
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    a = bk.alpha_at(th)
    yh = np.stack([np.cos(th), np.sin(th)], axis=-1)
    dot = np.tensordot(eta, yh, axes=([-1], [-1]))   # (..., n_theta)
    ex = np.exp(-dot ** 2 / (4.0 * b[..., None] * a))
    integral = ex.sum(axis=-1) * (2.0 * np.pi / n_theta)
    return np.pi * np.sqrt(2.0 / bk.F) * integral / np.sqrt(b)


def fourier_XY_quad(bk, xi_list, eta_list, n_theta=256, n_s=None,
                    radial_opts=None):
    """Numeric transform of the truncated kernel: substituted Gauss in X,
    polar Gauss x trapezoid in Y. Exact in X for the truncated chi."""
    xi_list = np.atleast_1d(np.asarray(xi_list, dtype=np.float64))
    eta_list = np.atleast_2d(np.asarray(eta_list, dtype=np.float64))
    eta_max = float(np.max(np.linalg.norm(eta_list, axis=-1)))
    r, wr, th, wth = _polar_y_nodes(bk, eta_max, n_theta=n_theta,
                                    **(radial_opts or {}))
    sm = bk.support_smax()
    if n_s is None:
        n_s = int(min(4096, 128 + 3.0 * np.max(np.abs(xi_list))
                      * np.max(r) * sm))
    s, ws = gauss_legendre(n_s, -sm, sm)
    ap = bk.alpha_at(th)
    am = bk.alpha_at(th + np.pi)
    # FX[i, j, k] = F_X K(xi_i, r_j Yh_k) * r_j^{n-2}  (polar measure folded)
    # FX[i, j, k] = r_j * F_X K(xi_i, r_j Yh_k): the kernel's r^{2-n} and the
    # polar measure r^{n-2} * r cancel to a single factor handled here (n=3)
    FX = np.empty((len(xi_list), len(r), len(th)), dtype=complex)
    chi_p = bk.chi_eval(s[None, :], ap[:, None])     # (th, s)
    chi_m = bk.chi_eval(s[None, :], am[:, None])
    for i, xi in enumerate(xi_list):
        cpF = bk.F + 1j * xi
        damp_p = np.exp(-cpF * np.outer(r * r, ap))   # (r, th)
        damp_m = np.exp(-cpF * np.outer(r * r, am))
        osc = np.exp(-cpF * np.outer(r, s))           # (r, s)
        ip = osc @ (chi_p * ws[None, :]).T            # (r, th)
        im = (1.0 / osc) @ (chi_m * ws[None, :]).T
        FX[i] = damp_p * ip + damp_m * im
    yh = np.stack([np.cos(th), np.sin(th)], axis=-1)
    dots = np.einsum("ed,td->et", eta_list, yh)       # (eta, th)
    out = np.empty((len(xi_list), len(eta_list)), dtype=complex)
    wrth = wr * wth
    for e in range(len(eta_list)):
        ph = np.exp(-1j * np.outer(r, dots[e]))       # (r, th)
        out[:, e] = np.einsum("irt,rt,r->i", FX, ph, wrth)
    return out


def fourier_XY_grid(bk, xi_list, eta_list, m_x=4096, n_theta=256,
                    radial_opts=None, oversample=1.8):
    """All-numeric route on a tensor grid of raw kernel values.

    The X-transform is a midpoint-rule discrete transform on a per-radius
    uniform grid covering the kernel's support there (the support width
    shrinks like |Y| toward the diagonal, so a single global X-grid cannot
    resolve the conormal spike); the Y-integral uses the same polar
    quadrature as the other routes. Raises AliasingError when the requested
    frequencies would alias on the largest relevant support at the given
    m_x.
    """
    xi_list = np.atleast_1d(np.asarray(xi_list, dtype=np.float64))
    eta_list = np.atleast_2d(np.asarray(eta_list, dtype=np.float64))
    eta_max = float(np.max(np.linalg.norm(eta_list, axis=-1)))
    r, wr, th, wth = _polar_y_nodes(bk, eta_max, n_theta=n_theta,
                                    **(radial_opts or {}))
    sm = bk.support_smax()
    xi_max = float(np.max(np.abs(xi_list)))
    # widest support that still carries non-negligible values: the parabola
    # bottom stays below X ~ log(1/TAIL)/F, i.e. r <= r_rel
    r_rel = (sm + np.sqrt(sm * sm + 4.0 * bk.alpha_min * (-np.log(TAIL)) / bk.F)) \
        / (2.0 * bk.alpha_min)
    span_rel = (bk.alpha_max - bk.alpha_min) * r_rel ** 2 + 2.0 * sm * r_rel + 2.0
    if xi_max > 0 and m_x < span_rel * xi_max * oversample / np.pi:
        raise AliasingError(
            f"m_x = {m_x} aliases xi = {xi_max:.1f} on supports of width "
            f"{span_rel:.1f}; need m_x >= {int(span_rel * xi_max * oversample / np.pi) + 1}")
    yh = np.stack([np.cos(th), np.sin(th)], axis=-1)
    ap = bk.alpha_at(th)
    am = bk.alpha_at(th + np.pi)
    lo_a = np.minimum(ap, am)
    hi_a = np.maximum(ap, am)
    ker_xt = np.empty((len(r), len(th), len(xi_list)), dtype=complex)
    grid01 = (np.arange(m_x) + 0.5) / m_x
    uniform = (bk.alpha_max - bk.alpha_min) < 1e-14
    for j, rj in enumerate(r):
        if uniform:
            a = bk.alpha_min
            x_lo = a * rj * rj - sm * rj - 0.5
            x_hi = a * rj * rj + sm * rj + 0.5
            Xj = x_lo + (x_hi - x_lo) * grid01
            Kv = kernel_eval(bk, Xj, np.array([rj, 0.0]))
            dft = np.exp(-1j * np.outer(Xj, xi_list))
            row = (Kv @ dft) * ((x_hi - x_lo) / m_x)
            ker_xt[j] = np.broadcast_to(row, (len(th), len(xi_list)))
            continue
        x_lo = lo_a * rj * rj - sm * rj - 0.5        # (th,)
        x_hi = hi_a * rj * rj + sm * rj + 0.5
        dxj = (x_hi - x_lo) / m_x
        Xj = x_lo[:, None] + (x_hi - x_lo)[:, None] * grid01[None, :]  # (th, m)
        Yc = rj * yh                                  # (th, 2)
        Kv = kernel_eval(bk, Xj, Yc[:, None, :])      # (th, m)
        dft = np.exp(-1j * Xj[:, :, None] * xi_list[None, None, :])
        ker_xt[j] = np.einsum("tm,tmi->ti", Kv, dft) * dxj[:, None]
    ker_xt *= r[:, None, None]                        # polar measure (n = 3)
    dots = np.einsum("ed,td->et", eta_list, yh)
    out = np.empty((len(xi_list), len(eta_list)), dtype=complex)
    for e in range(len(eta_list)):
        ph = np.exp(-1j * np.outer(r, dots[e]))
        out[:, e] = np.einsum("rti,rt,r->i", ker_xt, ph, wr * wth)
    return out


def fourier_XY(bk, xi, eta, route="gaussian", **kw):
    """Dispatch: 'gaussian' (analytic polar reduction), 'quad' (numeric,
    truncated-exact), 'grid' (all-numeric tensor grid)."""
    if route == "gaussian":
        return fourier_XY_gaussian(bk, xi, eta, **kw)
    if route == "quad":
        return fourier_XY_quad(bk, xi, eta, **kw)
    if route == "grid":
        return fourier_XY_grid(bk, xi, eta, **kw)
    raise ValidationError(f"unknown route '{route}'")


# ---------------------------------------------------------------------------
# ellipticity margin
# ---------------------------------------------------------------------------

@dataclass
class MarginReport:
    c_low: float
    argmin: tuple
    regime_split: float
    regime1_min: float
    regime2_min: float
    dirac_values: dict
    grid: dict
    route: str

    def certificate(self):
        lines = ["ellipticity-certificate {",
                  f"  c_low = {self.c_low:.8e}",
                  f"  argmin(xi, eta1, eta2) = {self.argmin}",
                  f"  regime_split_N = {self.regime_split}",
                  f"  regime1_min = {self.regime1_min:.8e}",
                  f"  regime2_min = {self.regime2_min:.8e}"]
        for k, v in self.dirac_values.items():
            lines.append(f"  dirac[u={k}] = {v:.8e}")
        for k, v in self.grid.items():
            lines.append(f"  grid.{k} = {v}")
        lines.append(f"  route = {self.route}")
        lines.append("}")
        return "\n".join(lines)


def ellipticity_margin(bk, freq_box=64.0, n_xi=33, n_eta=33, n_psi=8,
                       regime_split=4.0, route="quad", fail_threshold=0.0,
                       **route_kw):
    """Minimum of |F_{X,Y} K| <(xi, eta)> over the box <(xi, eta)> <= box.

    The (xi, eta) grid is xi x (|eta| x angles); the report splits the box
    at |eta| / <xi> = N and evaluates the Dirac-limit values u P(u) at
    u in {N, 2N, 4N}. Raises EllipticityFailureError when the margin is not
    positive (e.g. adversarial chi).
    """
    xi = np.linspace(0.0, freq_box, n_xi)
    eta_r = np.linspace(0.0, freq_box, n_eta)
    psi = np.linspace(0.0, np.pi, n_psi, endpoint=False)
    eta = np.stack([np.outer(eta_r, np.cos(psi)).ravel(),
                    np.outer(eta_r, np.sin(psi)).ravel()], axis=-1)
    vals = np.abs(fourier_XY(bk, xi, eta, route=route, **route_kw))
    if vals.ndim == 1:
        vals = vals[None, :]
    en = np.linalg.norm(eta, axis=-1)
    brackets = japanese_bracket(xi[:, None], en[None, :], bk.F)
    inside = brackets <= freq_box
    margin = np.where(inside, vals * brackets, np.inf)
    c_low = float(np.min(margin))
    imin = np.unravel_index(int(np.argmin(margin)), margin.shape)
    arg = (float(xi[imin[0]]), float(eta[imin[1], 0]), float(eta[imin[1], 1]))

    xibr = np.sqrt(xi * xi + bk.F * bk.F)
    u = en[None, :] / xibr[:, None]
    reg1 = inside & (u <= regime_split)
    reg2 = inside & (u > regime_split)
    r1 = float(np.min(margin[reg1])) if np.any(reg1) else np.inf
    r2 = float(np.min(margin[reg2])) if np.any(reg2) else np.inf

    dirac = {}
    for mult in (1.0, 2.0, 4.0):
        uu = regime_split * mult
        dirac[uu] = float(uu * P_of_u(bk, uu)[0])

    report = MarginReport(
        c_low=c_low, argmin=arg, regime_split=regime_split,
        regime1_min=r1, regime2_min=r2, dirac_values=dirac,
        grid=dict(freq_box=freq_box, n_xi=n_xi, n_eta=n_eta, n_psi=n_psi,
                  **{k: v for k, v in route_kw.items()
                     if np.isscalar(v)}),
        route=route)
    if c_low <= fail_threshold or not np.isfinite(c_low) \
            or min(dirac.values()) <= 0.0:
        raise EllipticityFailureError(
            f"ellipticity margin {c_low:.3e} <= {fail_threshold} at "
            f"(xi, eta) = {arg}", freq=arg, report=report)
    return c_low, report


def measure_parabolic_support(bk, y_big_factor=10.0, n_samples=4000, seed=7):
    """Measured constant in 'X > C |Y|^2 for |Y| large on supp chi':
    min over sampled support points with |Y| >= Ybig of X / |Y|^2."""
    rng = np.random.default_rng(seed)
    sm = bk.support_smax()
    y_big = y_big_factor * sm / bk.alpha_min
    r = rng.uniform(y_big, 2.0 * y_big, n_samples)
    th = rng.uniform(0.0, 2.0 * np.pi, n_samples)
    ap = bk.alpha_at(th)
    s = rng.uniform(-sm, sm, n_samples)
    X = ap * r * r + s * r      # on the chi_+ support
    return float(np.min(X / (r * r)))
