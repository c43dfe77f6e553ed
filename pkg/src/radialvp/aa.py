"""Action-angle coordinates for the radial repulsive Kepler flow.

Physical phase space is ``(r, v)`` with ``r > 0``; the linear characteristics
are ``r' = v, v' = q / (2 r^2)``.  The canonical map

    a     = sqrt(v^2 + q/r)
    theta = sign(v) * r_min * G(r / r_min),    r_min = q / a^2

straightens them: ``a`` is conserved and ``theta`` advances at rate ``a``.
``theta = 0`` is the periapsis.  All functions broadcast over numpy arrays.

Quantities with a ``_tilde`` suffix are evaluated along the linear flow,
``F~(theta, a, t) = F(theta + t a, a)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .structfn import DomainError, eval_G, g_of_w, radial_action_factor, solve_w

__all__ = [
    "PhaseState",
    "AAState",
    "Branch",
    "Kinematics",
    "to_aa",
    "from_aa",
    "R",
    "V",
    "R_tilde",
    "V_tilde",
    "dR",
    "dR_tilde",
    "d2R",
    "d2R_tilde",
    "kinematics",
    "jacobian_to_aa",
    "jacobian_from_aa",
    "invert_R",
    "in_bulk",
    "in_bulk_star",
    "check_transform",
]


class PhaseState(NamedTuple):
    r: np.ndarray | float
    v: np.ndarray | float


class AAState(NamedTuple):
    theta: np.ndarray | float
    a: np.ndarray | float


@dataclass(frozen=True)
class Branch:
    """A root of ``R~(theta, a) = r``; ``kind`` is ``"R0"``, ``"R1"`` or ``"R2"``."""

    kind: str
    state: AAState


class Kinematics(NamedTuple):
    """``R~`` and its first derivatives at one time, from a single inversion."""

    R: np.ndarray
    dR_dtheta: np.ndarray
    dR_da: np.ndarray


def _sign(x):
    # sign(0) := +1; every use multiplies a factor that vanishes at 0
    return np.where(np.asarray(x) >= 0.0, 1.0, -1.0)


def _maybe_scalar(*arrays):
    if all(np.ndim(x) == 0 for x in arrays):
        return tuple(float(x) for x in arrays)
    return arrays


def _check_q(q):
    if not q > 0:
        raise DomainError("charge coupling q must be positive")


def to_aa(r, v, q: float) -> AAState:
    """Map ``(r, v)`` to ``(theta, a)``."""
    _check_q(q)
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(~(r > 0.0)):
        raise DomainError("radius must be positive")
    a2 = v * v + q / r
    # r / r_min = 1 + r v^2 / q, so G(r / r_min) = g(|v| sqrt(r / q))
    theta = _sign(v) * (q / a2) * g_of_w(np.abs(v) * np.sqrt(r / q))
    return AAState(*_maybe_scalar(theta, np.sqrt(a2)))


def _radial_w(theta, a, q):
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(~(a > 0.0)):
        raise DomainError("action must be positive")
    return solve_w(a * a * np.abs(theta) / q), theta, a


def from_aa(theta, a, q: float) -> PhaseState:
    """Map ``(theta, a)`` back to ``(r, v)``."""
    _check_q(q)
    w, theta, a = _radial_w(theta, a, q)
    c = np.sqrt(1.0 + w * w)
    r = (q / (a * a)) * (1.0 + w * w)
    v = _sign(theta) * a * w / c
    return PhaseState(*_maybe_scalar(r, v))


def R(theta, a, q: float):
    return from_aa(theta, a, q).r


def V(theta, a, q: float):
    return from_aa(theta, a, q).v


def R_tilde(theta, a, t: float, q: float):
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    return R(theta + t * a, a, q)


def V_tilde(theta, a, t: float, q: float):
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    return V(theta + t * a, a, q)


def dR(theta, a, q: float):
    """First derivatives ``(dR/dtheta, dR/da)`` of ``R(theta, a)``.

    ``dR/da = (2q/a^3) (x H'(x) - H(x))`` with ``x = a^2 |theta| / q``; the
    bracket is the closed form of ``-1 + (1/2) int_0^x s/H(s)^2 ds``.
    """
    _check_q(q)
    w, theta, a = _radial_w(theta, a, q)
    d_theta = _sign(theta) * w / np.sqrt(1.0 + w * w)
    d_a = (2.0 * q / a**3) * radial_action_factor(w)
    return _maybe_scalar(d_theta, d_a)


def dR_tilde(theta, a, t: float, q: float):
    """``(dR~/dtheta, dR~/da) = (dR/dtheta, t dR/dtheta + dR/da)`` at ``theta + t a``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    d_theta, d_a = dR(theta + t * a, a, q)
    return d_theta, t * d_theta + d_a


def d2R(theta, a, q: float):
    """Second derivatives ``(R_tt, R_ta, R_aa)`` of ``R(theta, a)``; diagnostics only."""
    _check_q(q)
    w, theta, a = _radial_w(theta, a, q)
    h = 1.0 + w * w
    x = a * a * np.abs(theta) / q
    r_tt = a * a / (2.0 * q * h * h)
    r_ta = _sign(theta) * x / (a * h * h)
    r_aa = (q / a**4) * (-6.0 * radial_action_factor(w) + 2.0 * x * x / (h * h))
    return _maybe_scalar(r_tt, r_ta, r_aa)


def d2R_tilde(theta, a, t: float, q: float):
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    r_tt, r_ta, r_aa = d2R(theta + t * a, a, q)
    return r_tt, t * r_tt + r_ta, t * t * r_tt + 2.0 * t * r_ta + r_aa


def kinematics(theta, a, t: float, q: float) -> Kinematics:
    """``R~``, ``dR~/dtheta`` and ``dR~/da`` sharing one inversion of ``G``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    shifted = theta + t * a
    w = solve_w(a * a * np.abs(shifted) / q)
    c = np.sqrt(1.0 + w * w)
    radius = (q / (a * a)) * (1.0 + w * w)
    d_theta = _sign(shifted) * w / c
    d_a = t * d_theta + (2.0 * q / a**3) * radial_action_factor(w)
    return Kinematics(radius, d_theta, d_a)


def _central_5(f, x, h):
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def _fd_det(fwd, x, y, hx, hy):
    def col(fn_x, fn_y):
        dx = _central_5(lambda s: np.stack(fn_x(s)), x, hx)
        dy = _central_5(lambda s: np.stack(fn_y(s)), y, hy)
        return dx, dy

    dx, dy = col(lambda s: fwd(s, y), lambda s: fwd(x, s))
    return dx[0] * dy[1] - dy[0] * dx[1]


def jacobian_to_aa(r, v, q: float, rel_step: float = 1e-3):
    """Finite-difference ``det d(theta, a)/d(r, v)``; requires ``v != 0``.

    Fourth-order central differences with steps proportional to ``r`` and
    ``|v|``, so the stencil never crosses ``v = 0``.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v == 0.0):
        raise DomainError("finite-difference Jacobian needs v != 0")
    det = _fd_det(lambda x, y: to_aa(x, y, q), r, v, rel_step * r, rel_step * np.abs(v))
    return float(det) if det.ndim == 0 else det


def jacobian_from_aa(theta, a, q: float, rel_step: float = 1e-3):
    """Finite-difference ``det d(r, v)/d(theta, a)``; requires ``theta != 0``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(theta == 0.0):
        raise DomainError("finite-difference Jacobian needs theta != 0")
    det = _fd_det(
        lambda x, y: from_aa(x, y, q), theta, a, rel_step * np.abs(theta), rel_step * a
    )
    return float(det) if det.ndim == 0 else det


def invert_R(
    r: float,
    t: float,
    q: float,
    a_grid: Sequence[float] = (),
    theta_grid: Sequence[float] = (),
    c: float = 0.125,
    rtol: float = 1e-10,
) -> list[Branch]:
    """Solve ``R~(theta, a) = r`` at fixed ``t``.

    For each action in ``a_grid`` with ``a^2 r >= q`` both angle roots
    ``-t a -/+ (q/a^2) G(a^2 r / q)`` are returned.  For each angle in
    ``theta_grid`` the action roots in ``sqrt(q/r) <= a <= 2 sqrt(q/r)`` are
    returned.  ``kind`` names the region the root lies in: ``"R0"`` below
    ``A = sqrt(q/r) (1 + hbar)``, otherwise ``"R1"`` (``theta <= -t a``) or
    ``"R2"``.
    """
    _check_q(q)
    if not r > 0:
        raise DomainError("radius must be positive")
    if t < 0:
        raise DomainError("time must be non-negative")
    a_star = np.sqrt(q / r)
    hbar = c * min(1.0, r**3 / (q**5 * t * t)) if t > 0 else c
    a_top = a_star * (1.0 + hbar)

    found: list[Branch] = []

    def accept(kind, theta, a):
        if abs(R_tilde(theta, a, t, q) - r) <= rtol * r:
            found.append(Branch(kind, AAState(float(theta), float(a))))

    for a in np.asarray(a_grid, dtype=float):
        if not (a > 0 and a * a * r >= q):
            continue
        reach = (q / (a * a)) * eval_G(a * a * r / q)
        if a < a_top:
            kinds = ("R0", "R0")
        else:
            kinds = ("R1", "R2")
        accept(kinds[0], -t * a - reach, a)
        if reach > 0:
            accept(kinds[1], -t * a + reach, a)

    for theta in np.asarray(theta_grid, dtype=float):
        f = lambda a: R_tilde(theta, a, t, q) - r  # noqa: E731
        grid = np.linspace(a_star, 2.0 * a_star, 129)
        vals = f(grid)
        roots = [grid[k] for k in np.flatnonzero(vals == 0.0)]
        for k in np.flatnonzero(vals[:-1] * vals[1:] < 0.0):
            roots.append(brentq(f, grid[k], grid[k + 1], xtol=1e-15 * a_star, rtol=1e-15))
        for a in roots:
            if a <= a_top:
                kind = "R0"
            else:
                kind = "R1" if theta <= -t * a else "R2"
            accept(kind, theta, a)
    return found


def in_bulk(theta, a, t: float):
    """Mask of the bulk region ``{a >= t^(-1/4), |theta| <= t a / 2}``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    if t <= 0:
        return np.zeros(np.broadcast(theta, a).shape, dtype=bool)
    return (a >= t**-0.25) & (np.abs(theta) <= 0.5 * t * a)


def in_bulk_star(theta, a, t: float):
    """Mask of ``{|theta| <= t^(1/4), t^(-1/4) <= a <= t^(1/4)}``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    if t <= 0:
        return np.zeros(np.broadcast(theta, a).shape, dtype=bool)
    s = t**0.25
    return (np.abs(theta) <= s) & (a >= 1.0 / s) & (a <= s)


def check_transform(
    q: float,
    n: int = 100,
    r_range: tuple[float, float] = (1e-2, 1e2),
    v_range: tuple[float, float] = (1e-2, 1e1),
    a_range: tuple[float, float] = (1e-1, 1e1),
    theta_range: tuple[float, float] = (1e-2, 1e3),
    roundtrip_tol: float = 1e-10,
    jacobian_tol: float = 1e-8,
    forward=None,
) -> dict:
    """Round-trip and unit-Jacobian checks on ``n x n`` log-spaced grids.

    ``forward`` replaces :func:`to_aa` (negative controls).  Returns a JSON-able
    report; ``report["passed"]`` is the overall verdict.
    """
    fwd = forward or to_aa
    half = n // 2
    r = np.logspace(*np.log10(r_range), n)
    vmag = np.logspace(*np.log10(v_range), half)
    v = np.concatenate([-vmag[::-1], vmag])
    rr, vv = np.meshgrid(r, v, indexing="ij")

    th, aa_ = fwd(rr, vv, q)
    r_back, v_back = from_aa(th, aa_, q)
    err_phys = np.maximum(np.abs(r_back - rr) / rr, np.abs(v_back - vv) / np.abs(vv))

    a = np.logspace(*np.log10(a_range), n)
    tmag = np.logspace(*np.log10(theta_range), half)
    theta = np.concatenate([-tmag[::-1], tmag])
    ta, at = np.meshgrid(theta, a, indexing="ij")
    r2, v2 = from_aa(ta, at, q)
    th2, a2 = fwd(r2, v2, q)
    err_aa = np.maximum(np.abs(th2 - ta) / np.abs(ta), np.abs(a2 - at) / at)

    jac_fwd = _fd_det(lambda x, y: fwd(x, y, q), rr, vv, 1e-3 * rr, 1e-3 * np.abs(vv))
    jac_inv = jacobian_from_aa(ta, at, q)
    dev_fwd = np.abs(jac_fwd - 1.0)
    dev_inv = np.abs(jac_inv - 1.0)

    def offenders(err, tol, xs, ys, names):
        idx = np.argwhere(err > tol)[:10]
        return [
            {names[0]: float(xs[i, j]), names[1]: float(ys[i, j]), "error": float(err[i, j])}
            for i, j in idx
        ]

    checks = {
        "roundtrip_phys": (err_phys, roundtrip_tol, rr, vv, ("r", "v")),
        "roundtrip_aa": (err_aa, roundtrip_tol, ta, at, ("theta", "a")),
        "jacobian_to_aa": (dev_fwd, jacobian_tol, rr, vv, ("r", "v")),
        "jacobian_from_aa": (dev_inv, jacobian_tol, ta, at, ("theta", "a")),
    }
    report = {"q": q, "n": n, "passed": True, "checks": {}}
    for name, (err, tol, xs, ys, names) in checks.items():
        ok = bool(np.all(err <= tol))
        report["checks"][name] = {
            "max_error": float(np.max(err)),
            "tolerance": tol,
            "passed": ok,
            "offenders": offenders(err, tol, xs, ys, names),
        }
        report["passed"] &= ok
    return report
