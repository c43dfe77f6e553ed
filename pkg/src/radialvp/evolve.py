"""Nonlinear evolution of the ensemble.

In the sheared action-angle frame the linear Kepler motion is exact and only
the self-consistent field moves particles:

    dtheta/dt = +lam dPsi~/da,    da/dt = -lam dPsi~/dtheta,

so that ``lam > 0`` is a repulsive gas (see the physical path below, whose
acceleration is ``q / (2 r^2) + lam m(r) / r^2``).  Both paths use RK4 and by
default rebuild the field table at every stage.  ``field_update="step"``
freezes the table at the start of each step instead; it is cheaper but only
first order once shells cross.  Each particle always feels its own weight.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import aa
from . import diagnostics as diag
from .field import FieldTable, ParticleEnsemble, PhysicalEnsemble, hessian_Psi_tilde

__all__ = [
    "StepError",
    "GaussianBump",
    "PowerGaussian",
    "make_profile",
    "sample_grid",
    "sample_monte_carlo",
    "step_aa",
    "step_physical",
    "time_steps",
    "advance_aa",
    "advance_physical",
    "RunResult",
    "run",
]

# particle pushes are evaluated in fixed-size chunks; the chunking never
# depends on the thread count, so results are bitwise independent of it
CHUNK = 4096


class StepError(RuntimeError):
    """A step produced an invalid state (``a <= 0`` or ``r <= 0``): dt too large."""


def _taper(s):
    # C^1 compact window on |s| <= 1, value and slope vanish at the edge
    inside = np.abs(s) < 1.0
    one_minus = np.where(inside, 1.0 - s * s, 0.0)
    return one_minus * one_minus, np.where(inside, -4.0 * s * one_minus, 0.0)


@dataclass(frozen=True)
class GaussianBump:
    """``eps exp(-((theta-tc)/st)^2/2 - ((a-ac)/sa)^2/2)`` times a compact taper.

    The taper vanishes at ``cutoff`` widths from the centre in each variable.
    """

    epsilon: float
    theta_center: float
    theta_width: float
    a_center: float
    a_width: float
    cutoff: float

    def _parts(self, theta, a):
        u = (theta - self.theta_center) / self.theta_width
        v = (a - self.a_center) / self.a_width
        tu, dtu = _taper(u / self.cutoff)
        tv, dtv = _taper(v / self.cutoff)
        g = np.exp(-0.5 * (u * u + v * v))
        return u, v, tu, dtu, tv, dtv, g

    def shape(self, theta, a):
        _, _, tu, _, tv, _, g = self._parts(theta, a)
        return g * tu * tv

    def value(self, theta, a):
        return self.epsilon * self.shape(theta, a)

    def grad(self, theta, a):
        u, v, tu, dtu, tv, dtv, g = self._parts(theta, a)
        d_theta = g * tv * (-u * tu + dtu / self.cutoff) / self.theta_width
        d_a = g * tu * (-v * tv + dtv / self.cutoff) / self.a_width
        return self.epsilon * d_theta, self.epsilon * d_a


@dataclass(frozen=True)
class PowerGaussian:
    """``eps b(theta) (a/ap)^p exp(p (1 - (a/ap)^2) / 2) taper(a / a_max)`` for ``a >= a_min``.

    ``b`` is the tapered Gaussian in ``theta``.  Above ``a_min`` the mass with
    action below ``a`` grows like ``a^(2p+1)``, which controls how slowly the
    field decays in the slowest shells.  The ``a`` factor peaks at ``ap``.
    Below ``a_min`` the profile vanishes (a jump, not a taper): shells that
    slow need longer than the run to escape the charge.
    """

    epsilon: float
    theta_center: float
    theta_width: float
    a_peak: float
    a_power: float
    a_max: float
    cutoff: float
    a_min: float = 0.0

    def _parts(self, theta, a):
        u = (theta - self.theta_center) / self.theta_width
        tu, dtu = _taper(u / self.cutoff)
        gu = np.exp(-0.5 * u * u)
        a = np.asarray(a, dtype=float)
        s = a / self.a_peak
        p = self.a_power
        f = s**p * np.exp(0.5 * p * (1.0 - s * s))
        df = f * (p / a - p * s / self.a_peak)
        ta, dta = _taper(a / self.a_max)
        cut = a >= self.a_min
        return u, tu, dtu, gu, f, df, ta * cut, dta * cut

    def shape(self, theta, a):
        _, tu, _, gu, f, _, ta, _ = self._parts(theta, a)
        return gu * tu * f * ta

    def value(self, theta, a):
        return self.epsilon * self.shape(theta, a)

    def grad(self, theta, a):
        u, tu, dtu, gu, f, df, ta, dta = self._parts(theta, a)
        d_theta = gu * (-u * tu + dtu / self.cutoff) / self.theta_width * f * ta
        d_a = gu * tu * (df * ta + f * dta / self.a_max)
        return self.epsilon * d_theta, self.epsilon * d_a


PROFILES = {"gaussian-bump": GaussianBump, "power-gaussian": PowerGaussian}


def make_profile(name: str, epsilon: float, **params):
    try:
        cls = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return cls(epsilon=epsilon, **params)


def _ensemble(profile, theta, a, cell_area, width_a, q, lam, t0):
    keep = profile.shape(theta, a) > 0.0
    theta, a = theta[keep], a[keep]
    gamma = profile.value(theta, a)
    g_theta, g_a = profile.grad(theta, a)
    n = theta.size
    area = np.full(n, cell_area)
    return ParticleEnsemble(
        theta=theta,
        a=a,
        w=gamma * gamma * area,
        t=t0,
        q=q,
        lam=lam,
        width_a=np.full(n, width_a),
        area=area,
        grad0=np.column_stack([g_theta, g_a]),
        jac=np.tile([1.0, 0.0, 0.0, 1.0], (n, 1)),
    )


def sample_grid(profile, theta_range, a_range, n_theta, n_a, q, lam, t0=0.0) -> ParticleEnsemble:
    """Midpoint tensor quadrature: ``w = gamma0^2 dtheta da`` on each cell.

    Cells where the profile vanishes identically are dropped; particle order is
    ``a``-major, ``theta``-minor.
    """
    (t_lo, t_hi), (a_lo, a_hi) = theta_range, a_range
    if not (t_hi > t_lo and a_hi > a_lo >= 0.0):
        raise ValueError("invalid sampling box")
    d_theta = (t_hi - t_lo) / n_theta
    d_a = (a_hi - a_lo) / n_a
    th = t_lo + (np.arange(n_theta) + 0.5) * d_theta
    av = a_lo + (np.arange(n_a) + 0.5) * d_a
    aa_, tt = np.meshgrid(av, th, indexing="ij")
    return _ensemble(profile, tt.ravel(), aa_.ravel(), d_theta * d_a, d_a, q, lam, t0)


def sample_monte_carlo(profile, theta_range, a_range, n, seed, q, lam, t0=0.0) -> ParticleEnsemble:
    """Uniform samples in the box, ``w = gamma0^2 |box| / n``; no cell shape."""
    (t_lo, t_hi), (a_lo, a_hi) = theta_range, a_range
    rng = np.random.default_rng(seed)
    theta = rng.uniform(t_lo, t_hi, n)
    a = rng.uniform(a_lo, a_hi, n)
    a = np.where(a > 0.0, a, a_hi)
    box = (t_hi - t_lo) * (a_hi - a_lo)
    return _ensemble(profile, theta, a, box / n, 0.0, q, lam, t0)


def _chunked(fn, n, threads, *arrays):
    """Apply ``fn`` to fixed-size slices of ``arrays`` and concatenate."""
    if n <= CHUNK:
        return fn(*arrays)
    bounds = [(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]

    def work(lo_hi):
        lo, hi = lo_hi
        return fn(*(x[lo:hi] for x in arrays))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(len(parts[0])))


def _aa_velocity(tbl: FieldTable, theta, a, own_r, w, t, q, lam, threads):
    def fn(th, av, rr, ww):
        kin = aa.kinematics(th, av, t, q)
        factor = -tbl.mass_seen(kin.R, rr, ww) / (kin.R * kin.R)
        return lam * factor * kin.dR_da, -lam * factor * kin.dR_dtheta

    return _chunked(fn, theta.size, threads, theta, a, own_r, w)


def _aa_tangent(tbl, theta, a, jac, t, q, lam, rel_bandwidth):
    # dJ/dt = DF J with F = lam (Psi_a, -Psi_theta)
    p_tt, p_ta, p_aa = hessian_Psi_tilde(tbl, theta, a, t, q, rel_bandwidth)
    j11, j12, j21, j22 = jac.T
    d11 = lam * (p_ta * j11 + p_aa * j21)
    d12 = lam * (p_ta * j12 + p_aa * j22)
    d21 = -lam * (p_tt * j11 + p_ta * j21)
    d22 = -lam * (p_tt * j12 + p_ta * j22)
    return np.column_stack([d11, d12, d21, d22])


FIELD_UPDATES = ("stage", "step")


def _check_step(dt, field_update):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if field_update not in FIELD_UPDATES:
        raise ValueError(f"field_update must be one of {FIELD_UPDATES}, got {field_update!r}")


_RK4 = ((0.0, 1.0 / 6.0), (0.5, 1.0 / 3.0), (0.5, 1.0 / 3.0), (1.0, 1.0 / 6.0))


def step_aa(
    ens: ParticleEnsemble,
    dt: float,
    field_update: str = "stage",
    threads: int = 1,
    tangents: bool = False,
    rel_bandwidth: float = 0.05,
) -> ParticleEnsemble:
    """One RK4 step of the characteristic system in the sheared frame."""
    _check_step(dt, field_update)
    t, q, lam = ens.t, ens.q, ens.lam
    if lam == 0.0 or len(ens) == 0:
        return ens.moved(ens.theta, ens.a, t + dt)
    track = tangents and ens.jac is not None
    r_table = aa.R_tilde(ens.theta, ens.a, t, q)
    tbl = FieldTable.from_radii(r_table, ens.w, t)
    theta0, a0 = ens.theta, ens.a
    jac0 = ens.jac if track else None
    acc_theta = np.zeros_like(theta0)
    acc_a = np.zeros_like(a0)
    acc_jac = np.zeros_like(jac0) if track else None
    k_theta = k_a = k_jac = None
    for c, b in _RK4:
        if k_theta is None:
            th, av, jc = theta0, a0, jac0
        else:
            th = theta0 + c * dt * k_theta
            av = a0 + c * dt * k_a
            jc = jac0 + c * dt * k_jac if track else None
            if np.any(~(av > 0.0)):
                raise StepError(f"action became non-positive at t={t}, dt={dt}")
        s = t + c * dt
        if field_update == "step" or c == 0.0:
            stage_tbl, own_r = tbl, r_table
        else:
            own_r = aa.R_tilde(th, av, s, q)
            stage_tbl = FieldTable.from_radii(own_r, ens.w, s)
        k_theta, k_a = _aa_velocity(stage_tbl, th, av, own_r, ens.w, s, q, lam, threads)
        acc_theta += b * k_theta
        acc_a += b * k_a
        if track:
            k_jac = _aa_tangent(stage_tbl, th, av, jc, s, q, lam, rel_bandwidth)
            acc_jac += b * k_jac
    theta1 = theta0 + dt * acc_theta
    a1 = a0 + dt * acc_a
    if np.any(~(a1 > 0.0)):
        raise StepError(f"action became non-positive at t={t}, dt={dt}")
    return ens.moved(theta1, a1, t + dt, jac0 + dt * acc_jac if track else None)


def _phys_velocity(tbl: FieldTable, r, v, own_r, w, q, lam, threads):
    def fn(rr, vv, r_own, ww):
        return vv, (0.5 * q + lam * tbl.mass_seen(rr, r_own, ww)) / (rr * rr)

    return _chunked(fn, r.size, threads, r, v, own_r, w)


def step_physical(phys: PhysicalEnsemble, dt: float, field_update: str = "stage", threads: int = 1) -> PhysicalEnsemble:
    """One RK4 step of ``r' = v, v' = q / (2 r^2) + lam m(r) / r^2``."""
    _check_step(dt, field_update)
    q, lam = phys.q, phys.lam
    tbl = FieldTable.from_radii(phys.r, phys.w, phys.t)
    r0, v0 = phys.r, phys.v
    acc_r = np.zeros_like(r0)
    acc_v = np.zeros_like(v0)
    k_r = k_v = None
    for c, b in _RK4:
        if k_r is None:
            rr, vv = r0, v0
        else:
            rr = r0 + c * dt * k_r
            vv = v0 + c * dt * k_v
            if np.any(~(rr > 0.0)):
                raise StepError(f"radius became non-positive at t={phys.t}, dt={dt}")
        if field_update == "step" or c == 0.0:
            stage_tbl, own_r = tbl, r0
        else:
            stage_tbl, own_r = FieldTable.from_radii(rr, phys.w, phys.t + c * dt), rr
        k_r, k_v = _phys_velocity(stage_tbl, rr, vv, own_r, phys.w, q, lam, threads)
        acc_r += b * k_r
        acc_v += b * k_v
    r1 = r0 + dt * acc_r
    if np.any(~(r1 > 0.0)):
        raise StepError(f"radius became non-positive at t={phys.t}, dt={dt}")
    return PhysicalEnsemble(r1, v0 + dt * acc_v, phys.w, phys.t + dt, q, lam)


def time_steps(t_start: float, t_stop: float, dt_min: float, dt_factor: float, dt_max: float = math.inf):
    """Step sizes from ``t_start`` landing exactly on ``t_stop``.

    ``dt = clip(dt_factor * t, dt_min, dt_max)``: uniform early, uniform in
    ``ln t`` once ``dt_factor * t > dt_min``.  A final step that would
    overshoot (or leave a sliver below ``dt_min / 4``) is merged into one
    landing step.
    """
    times = [t_start]
    t = t_start
    while t < t_stop:
        dt = min(max(dt_factor * t, dt_min), dt_max)
        if t + dt >= t_stop - 0.25 * dt_min:
            times.append(t_stop)
            break
        t = t + dt
        times.append(t)
    return times


def advance_aa(ens: ParticleEnsemble, t_stop: float, dt_min: float, dt_factor: float = 0.0,
               dt_max: float = math.inf, **step_kw) -> ParticleEnsemble:
    grid = time_steps(ens.t, t_stop, dt_min, dt_factor, dt_max)
    for t_next in grid[1:]:
        ens = step_aa(ens, t_next - ens.t, **step_kw)
        ens.t = t_next
    return ens


def advance_physical(phys: PhysicalEnsemble, t_stop: float, dt_min: float, dt_factor: float = 0.0,
                     dt_max: float = math.inf, **step_kw) -> PhysicalEnsemble:
    grid = time_steps(phys.t, t_stop, dt_min, dt_factor, dt_max)
    for t_next in grid[1:]:
        phys = step_physical(phys, t_next - phys.t, **step_kw)
        phys.t = t_next
    return phys


@dataclass
class RunResult:
    rows: list
    states: list  # ensembles at the diagnostic times, aligned with rows
    snapshots: list
    summary: dict


def run(cfg, threads: int = 1, on_snapshot=None) -> RunResult:
    """Integrate a configured run in the sheared frame.

    Diagnostics rows are recorded at ``cfg.times`` and snapshots kept at
    ``cfg.snapshot_times`` (``on_snapshot(index, ens)`` is called as each is
    reached).  The scattering columns need the final state, so they are
    filled in after the last step.
    """
    ens = cfg.sample()
    diag_times = set(cfg.times)
    snap_times = set(cfg.snapshot_times)
    rows, states, snaps = [], [], []
    step_kw = {
        "field_update": cfg.field_update,
        "threads": threads,
        "tangents": cfg.tangents,
        "rel_bandwidth": cfg.rho_bandwidth,
    }
    for t_check in sorted(diag_times | snap_times):
        if t_check > ens.t:
            ens = advance_aa(ens, t_check, cfg.dt_min, cfg.dt_factor, cfg.dt_max, **step_kw)
        if t_check in diag_times:
            rows.append(diag.record(ens, cfg.norms, cfg.tau_alphas, cfg.tangents, cfg.rho_bandwidth))
            states.append(ens)
        if t_check in snap_times:
            if on_snapshot is not None:
                on_snapshot(len(snaps), ens)
            snaps.append(ens)
    diag.add_scatter_columns(rows, states, cfg.e_inf_window)
    summary = diag.summarize(rows, cfg.field_fit, cfg.average_fit, cfg.scatter_fit, cfg.scatter_compare)
    return RunResult(rows, states, snaps, summary)
