"""Curve tracing and the near-tangent parameterization.

Curves gamma_{x,y,lam,omega} start at the point with lens coordinates (x, y)
with velocity lam * e_x + omega . e_y and are integrated with fixed-step RK4
in both time directions. Exit through the face x = 0 is located by bisection
on re-integrated states; exit through the chart bounds is flagged separately.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import rk4_step, trace_to_times, flow_second_derivative
from .errors import (BlowUpError, ConfinementViolationError, NoConnectionError,
                     StencilRangeError, ValidationError, AlphaPositivityError)

BLOWUP_FACTOR = 2.0


def _hermite(t, t0, t1, z0, v0, z1, v1):
    """Cubic Hermite interpolation (4th-order dense output)."""
    dt = t1 - t0
    s = (t - t0) / dt
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    z = h00 * z0 + (h10 * dt) * v0 + h01 * z1 + (h11 * dt) * v1
    return z


@dataclass
class ECurve:
    """A traced curve with dense samples and exit metadata."""

    t: np.ndarray                    # (K,) ascending, contains 0
    z: np.ndarray                    # (K, n)
    v: np.ndarray                    # (K, n)
    i0: int                          # index of t = 0
    speed0: float
    params: Optional[tuple] = None   # (x, y, lam, theta) when built from them
    exit_minus: str = "tmax"         # 'tmax' | 'chart' | 'x-cross'
    exit_plus: str = "tmax"
    t_range: tuple = (0.0, 0.0)      # in-window range (clipped at face cross)
    system: object = None

    def z_at(self, tq):
        tq = np.atleast_1d(np.asarray(tq, dtype=np.float64))
        idx = np.clip(np.searchsorted(self.t, tq) - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[idx], self.t[idx + 1]
        out = _hermite(tq[:, None], t0[:, None], t1[:, None],
                       self.z[idx], self.v[idx], self.z[idx + 1], self.v[idx + 1])
        return out

    def v_at(self, tq):
        tq = np.atleast_1d(np.asarray(tq, dtype=np.float64))
        idx = np.clip(np.searchsorted(self.t, tq) - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[idx], self.t[idx + 1]
        w = ((tq - t0) / (t1 - t0))[:, None]
        # derivative of the Hermite cubic
        dt = (t1 - t0)[:, None]
        s = w
        d00 = (6 * s * s - 6 * s) / dt
        d10 = (3 * s * s - 4 * s + 1)
        d01 = (-6 * s * s + 6 * s) / dt
        d11 = (3 * s * s - 2 * s)
        return (d00 * self.z[idx] + d10 * self.v[idx]
                + d01 * self.z[idx + 1] + d11 * self.v[idx + 1])

    def x_at(self, tq):
        return self.system.x_of_z(self.z_at(tq))

    def speeds(self):
        return self.system.chart.norm_v(self.z, self.v)

    def speed_drift(self):
        s = self.speeds()
        return float(np.max(np.abs(s - self.speed0)) / self.speed0)


def _integrate_one_side(system, z0, v0, h, nsteps, sign):
    """Integrate one direction, stopping at chart exit or blow-up."""
    chart, gen = system.chart, system.generator
    zs, vs = [z0], [v0]
    z, v = z0.copy(), v0.copy()
    n0 = float(chart.norm_v(z0[None], v0[None])[0])
    exit_kind = "tmax"
    for k in range(nsteps):
        z, v = rk4_step(chart, gen, z[None], v[None], sign * h)
        z, v = z[0], v[0]
        zs.append(z.copy())
        vs.append(v.copy())
        if not bool(chart.contains(z)):
            exit_kind = "chart"
            break
        if float(chart.norm_v(z[None], v[None])[0]) > BLOWUP_FACTOR * n0:
            raise BlowUpError(
                "velocity doubled while tracing; generator is ill-behaved here")
    return np.array(zs), np.array(vs), exit_kind


def trace(system, params=None, state=None, t_max=None, h=None):
    """Trace a single curve from (x, y, lam, omega) params or a raw state.

    Returns an ECurve with dense samples over the integrated range, the
    in-window t_range (clipped where the x-coordinate crosses 0, located by
    bisection on re-integrated states to ~1e-12) and per-direction exit kinds.
    """
    if (params is None) == (state is None):
        raise ValidationError("give exactly one of params or state")
    delta0 = system.constants.delta0
    if t_max is None:
        t_max = delta0
    if h is None:
        h = delta0 / 400.0
    if params is not None:
        x, y, lam, theta = params
        z0, v0 = system.initial_state(np.atleast_1d(x), np.atleast_2d(y),
                                      np.atleast_1d(lam), np.atleast_1d(theta))
        z0, v0 = z0[0], v0[0]
    else:
        z0, v0 = (np.asarray(a, dtype=np.float64) for a in state)

    nsteps = max(1, int(round(t_max / h)))
    zp, vp, exit_plus = _integrate_one_side(system, z0, v0, h, nsteps, +1.0)
    zm, vm, exit_minus = _integrate_one_side(system, z0, v0, h, nsteps, -1.0)

    km = len(zm) - 1
    t = np.concatenate([-h * np.arange(km, 0, -1), h * np.arange(len(zp))])
    z = np.concatenate([zm[:0:-1], zp])
    v = np.concatenate([vm[:0:-1], vp])
    curve = ECurve(t=t, z=z, v=v, i0=km,
                   speed0=float(system.chart.norm_v(z0[None], v0[None])[0]),
                   params=params, exit_minus=exit_minus, exit_plus=exit_plus,
                   system=system)
    curve.t_range = (t[0], t[-1])
    if system.x_field is not None:
        _clip_at_face(curve, system)
    return curve


def _refine_crossing(system, z0, v0, t_lo, t_hi, h, n_iter=48):
    """Bisect the first zero of x(t) in [t_lo, t_hi]; states re-integrated
    from (z0, v0) at every probe so the bracket shrinks on the true flow."""
    for _ in range(n_iter):
        tm = 0.5 * (t_lo + t_hi)
        zz, _ = trace_to_times(system.chart, system.generator,
                               z0[None], v0[None], np.array([[tm]]), h)
        if system.x_of_z(zz[0, 0]) < 0.0:
            t_hi = tm
        else:
            t_lo = tm
        if abs(t_hi - t_lo) < 1e-13:
            break
    return 0.5 * (t_lo + t_hi)


def _clip_at_face(curve, system):
    xs = system.x_of_z(curve.z)
    i0 = curve.i0
    t_lo, t_hi = curve.t[0], curve.t[-1]
    h = curve.t[1] - curve.t[0] if len(curve.t) > 1 else 1.0
    # forward crossing
    neg = np.nonzero(xs[i0:] < 0.0)[0]
    if len(neg) > 0 and neg[0] > 0:
        j = i0 + neg[0]
        t_hi = _refine_crossing(system, curve.z[j - 1], curve.v[j - 1],
                                0.0, curve.t[j] - curve.t[j - 1], h) + curve.t[j - 1]
        curve.exit_plus = "x-cross"
    neg = np.nonzero(xs[:i0 + 1][::-1] < 0.0)[0]
    if len(neg) > 0 and neg[0] > 0:
        j = i0 - neg[0]  # first negative sample walking backward from t = 0
        tau = _refine_crossing(system, curve.z[j + 1], curve.v[j + 1],
                               0.0, curve.t[j] - curve.t[j + 1], h)
        t_lo = curve.t[j + 1] + tau
        curve.exit_minus = "x-cross"
    curve.t_range = (float(t_lo), float(t_hi))


def alpha_of(system, params, t=0.0, h=1e-3):
    """alpha(x, y, lam, omega, t) = 1/2 d^2/dt^2 (x o gamma)(t), 5-point stencil."""
    delta0 = system.constants.delta0
    if abs(t) + 2 * h >= delta0:
        raise StencilRangeError("stencil leaves the traced range (-delta0, delta0)")
    x, y, lam, theta = params
    z0, v0 = system.initial_state(np.atleast_1d(x), np.atleast_2d(y),
                                  np.atleast_1d(lam), np.atleast_1d(theta))
    if t != 0.0:
        z0, v0 = trace_to_times(system.chart, system.generator, z0, v0,
                                np.array([[t]]), delta0 / 400.0)
        z0, v0 = z0[:, 0], v0[:, 0]
    d2 = flow_second_derivative(system.chart, system.generator,
                                system.x_of_z, z0, v0, h)
    return 0.5 * float(d2[0])


def alpha_states(system, z, v, h=1e-3):
    """Batched alpha = 1/2 d^2/dt^2 (x o gamma)(0) at raw states."""
    d2 = flow_second_derivative(system.chart, system.generator,
                                system.x_of_z, z, v, h)
    return 0.5 * d2


def face_alpha_fn(system, y):
    """Callable theta -> alpha(0, y, 0, omega(theta)) on the face x = 0."""
    y = np.asarray(y, dtype=np.float64)

    def fn(theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        B = len(theta)
        z0, v0 = system.initial_state(np.zeros(B), np.broadcast_to(y, (B, 2)),
                                      np.zeros(B), theta)
        return alpha_states(system, z0, v0)
    return fn


@dataclass
class AlphaField:
    """alpha on the face with a measured uniform lower bound C."""

    system: object
    C: float
    samples: np.ndarray

    def eval(self, y, theta):
        return face_alpha_fn(self.system, y)(theta)


def build_alpha_field(system, n_y=5, n_theta=16, n_lam=5, n_t=3,
                      lam_max=None, safety=0.9):
    """Sample alpha over the validated box and measure C = safety * min.

    Raises AlphaPositivityError when the sampled minimum is not positive
    (e.g. flat level sets with E = 0).
    """
    c = system.constants.c
    delta0 = system.constants.delta0
    if lam_max is None:
        lam_max = min(0.45, 0.45 * delta0)
    ybox = system.base_y_halfwidth()
    ys = np.linspace(-ybox, ybox, n_y)
    xs = np.linspace(0.0, c, 3)
    thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    lams = np.linspace(-lam_max, lam_max, n_lam)
    X, Y1, Y2, L, TH = np.meshgrid(xs, ys, ys, lams, thetas, indexing="ij")
    x = X.ravel()
    y = np.stack([Y1.ravel(), Y2.ravel()], axis=-1)
    lam, th = L.ravel(), TH.ravel()
    z0, v0 = system.initial_state(x, y, lam, th)
    vals = [alpha_states(system, z0, v0)]
    ts = np.linspace(-0.6 * delta0, 0.6 * delta0, n_t)
    ts = ts[ts != 0.0]
    if len(ts) > 0:
        times = np.broadcast_to(np.sort(ts), (len(z0), len(ts))).copy()
        zz, vv = trace_to_times(system.chart, system.generator, z0, v0,
                                times, delta0 / 100.0)
        inb = system.chart.contains(zz.reshape(-1, zz.shape[-1]))
        a = alpha_states(system, zz.reshape(-1, 3), vv.reshape(-1, 3))
        vals.append(a[inb])
    allv = np.concatenate([np.ravel(v) for v in vals])
    amin = float(np.min(allv))
    if amin <= 0.0:
        raise AlphaPositivityError(
            f"alpha not positive on the sampled box (min = {amin:.3e}); "
            "level sets are not strictly convex for this flow")
    return AlphaField(system=system, C=safety * amin, samples=allv)


@dataclass
class ConfinementReport:
    n_curves: int
    worst_min_x: float          # min over curves of min_t x(t); >= -tol if confined
    worst_window_margin: float  # min of x(t) - x0 over |t| > t_excl, lam <= C0 x0
    t_excl: float
    n_violations: int
    offenders: list


def confinement_check(system, x0=None, n_curves=2000, lam_scale=1.0,
                      seed=0, tol_pos=1e-8, raise_on_violation=True,
                      include_window_check=True):
    """Check the half-space confinement estimates on sampled curves.

    With lam_scale = 1 the caps |lam| <= sqrt(2 C x) apply and zero
    violations are expected; lam_scale > 1 exercises the failure path (the
    violation is then reported via ConfinementViolationError carrying the
    report).
    """
    rng = np.random.default_rng(seed)
    cst = system.constants
    C = cst.C
    if x0 is None:
        x0 = cst.x0
    ybox = system.base_y_halfwidth()
    x = rng.uniform(0.02 * cst.c, cst.c, n_curves)
    y = rng.uniform(-ybox, ybox, (n_curves, 2))
    u = rng.uniform(-1.0, 1.0, n_curves)
    lam = lam_scale * np.sqrt(2.0 * C * x) * u
    lam = np.clip(lam, -0.98 * cst.delta0, 0.98 * cst.delta0)
    th = rng.uniform(0.0, 2.0 * np.pi, n_curves)

    z, v = system.initial_state(x, y, lam, th)
    h = cst.delta0 / 400.0
    nsteps = int(round(cst.delta0 / h))
    C0 = cst.C0 if cst.C0 is not None else C
    t_excl = (C0 * x0) / C + np.sqrt(2.0 * x0 / C)
    window_curves = np.abs(lam) <= C0 * x0

    min_x = system.x_of_z(z).copy()
    win_margin = np.full(n_curves, np.inf)
    for sign in (+1.0, -1.0):
        zz, vv = z.copy(), v.copy()
        alive = np.ones(n_curves, dtype=bool)
        for k in range(1, nsteps + 1):
            zn, vn = rk4_step(system.chart, system.generator, zz, vv, sign * h)
            zz = np.where(alive[:, None], zn, zz)
            vv = np.where(alive[:, None], vn, vv)
            inb = system.chart.contains(zz)
            alive &= inb
            if not np.any(alive):
                break
            xs = system.x_of_z(zz)
            upd = alive
            min_x[upd] = np.minimum(min_x[upd], xs[upd])
            if include_window_check and k * h > t_excl:
                sel = upd & window_curves
                win_margin[sel] = np.minimum(win_margin[sel], xs[sel] - x0)

    capped = np.abs(lam) <= np.sqrt(2.0 * C * x) + 1e-15
    # any sampled curve dipping below the face counts; with lam_scale <= 1 the
    # sample respects the cap and none may dip
    viol_face = min_x < -tol_pos
    viol_win = window_curves & (win_margin < -tol_pos) if include_window_check \
        else np.zeros(n_curves, bool)
    n_viol = int(np.sum(viol_face | viol_win))
    offenders = [dict(x=float(x[i]), y=tuple(map(float, y[i])), lam=float(lam[i]),
                      theta=float(th[i]), min_x=float(min_x[i]))
                 for i in np.nonzero(viol_face | viol_win)[0][:10]]
    finite_win = win_margin[np.isfinite(win_margin)]
    report = ConfinementReport(
        n_curves=n_curves,
        worst_min_x=float(np.min(min_x[capped])) if np.any(capped) else np.inf,
        worst_window_margin=float(np.min(finite_win)) if len(finite_win) else np.inf,
        t_excl=float(t_excl), n_violations=n_viol, offenders=offenders)
    if n_viol > 0 and raise_on_violation:
        raise ConfinementViolationError(
            f"{n_viol} curves violated the confinement estimate", report=report)
    return report


# ---------------------------------------------------------------------------
# two-point maps Gamma_+/- inverse
# ---------------------------------------------------------------------------

@dataclass
class GammaSolution:
    params: tuple     # (x, y) of the start point
    lam: float
    theta: float
    t: float
    residual: float

    @property
    def omega(self):
        return np.array([np.cos(self.theta), np.sin(self.theta)])


def _shoot(system, q0, u):
    """gamma_{q0, lam, omega}(t) for u = (lam, theta, t), batched over rows."""
    u = np.atleast_2d(u)
    B = len(u)
    x = np.full(B, q0[0])
    y = np.broadcast_to(np.asarray(q0[1:], float), (B, 2))
    z0, v0 = system.initial_state(x, y, u[:, 0], u[:, 1])
    zz, _ = trace_to_times(system.chart, system.generator, z0, v0,
                           u[:, 2:3], system.constants.delta0 / 400.0)
    return zz[:, 0, :]


def _newton_two_point(system, q0, z_target, u0, tol=1e-9, max_iter=50):
    u = np.asarray(u0, dtype=np.float64).copy()
    fd = 1e-7
    for _ in range(max_iter):
        probes = np.vstack([u, u + fd * np.eye(3)])
        zs = _shoot(system, q0, probes)
        F = zs[0] - z_target
        res = np.linalg.norm(F)
        if res < tol:
            return u, res
        J = (zs[1:] - zs[0]).T / fd
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise NoConnectionError("singular shooting Jacobian")
        lam_damp = 1.0
        for _ in range(8):
            u_new = u + lam_damp * step
            z_new = _shoot(system, q0, u_new)[0]
            if np.linalg.norm(z_new - z_target) < res:
                break
            lam_damp *= 0.5
        u = u + lam_damp * step
    zs = _shoot(system, q0, u)
    res = float(np.linalg.norm(zs[0] - z_target))
    if res >= tol:
        raise NoConnectionError(
            f"two-point solve stalled at residual {res:.3e} (outside the "
            "validated neighborhood?)")
    return u, res


def gamma_maps(system, z, z_prime, tol=1e-9):
    """Solve gamma_{q(z), lam, omega}(t) = z' for both orientations.

    Returns {'plus': GammaSolution (t > 0), 'minus': GammaSolution (t < 0)}.
    """
    z = np.asarray(z, dtype=np.float64)
    z_prime = np.asarray(z_prime, dtype=np.float64)
    if np.allclose(z, z_prime):
        raise ValidationError("z and z' must be distinct")
    q0 = system.param_of_z(z[None])[0]
    q1 = system.param_of_z(z_prime[None])[0]
    dy = q1[1:] - q0[1:]
    dx = q1[0] - q0[0]
    r = np.linalg.norm(dy)
    if r < 1e-12:
        raise NoConnectionError("points are radially separated; no near-tangent connection")
    out = {}
    for name, sgn in (("plus", +1.0), ("minus", -1.0)):
        t0 = sgn * r
        w = sgn * dy / r
        u0 = np.array([dx / t0, np.arctan2(w[1], w[0]), t0])
        u, res = _newton_two_point(system, q0, z_prime, u0, tol=tol)
        out[name] = GammaSolution(params=(float(q0[0]), tuple(q0[1:])),
                                  lam=float(u[0]), theta=float(u[1]),
                                  t=float(u[2]), residual=res)
    return out
