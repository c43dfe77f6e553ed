"""Monitored quantities of a run.

Everything here is a pure reduction over an ensemble (or a list of them).
Sums use :func:`math.fsum` so the result does not depend on summation order,
which keeps the diagnostics CSV bitwise reproducible.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import aa
from .field import FieldTable, ParticleEnsemble, grad_Psi_tilde, interaction_energy

__all__ = [
    "WeightError",
    "parse_weight",
    "weighted_norm",
    "indicator",
    "max_kernel",
    "averages",
    "asymptotic_field",
    "e_inf_at",
    "scatter_residual",
    "FitResult",
    "decay_fit",
    "field_observables",
    "bulk_fractions",
    "energy",
    "tangent_norms",
    "record",
    "add_scatter_columns",
    "summarize",
]


class WeightError(ValueError):
    """Weight expression outside the supported monomial family."""


_FACTOR = re.compile(r"^(theta|a)(?:\^\(?([+-]?[0-9.eE+-]+)\)?)?$")


def _parse_term(term: str):
    coef, p, q = 1.0, 0, 0.0
    for factor in term.split("*"):
        factor = factor.strip()
        if not factor:
            raise WeightError(f"empty factor in {term!r}")
        m = _FACTOR.match(factor)
        if m is None:
            try:
                coef *= float(factor)
            except ValueError:
                raise WeightError(f"unsupported factor {factor!r}") from None
            continue
        name, power = m.group(1), m.group(2)
        try:
            value = 1.0 if power is None else float(power)
        except ValueError:
            raise WeightError(f"bad exponent in {factor!r}") from None
        if name == "theta":
            if value != int(value) or value < 0:
                raise WeightError(f"theta exponent must be a non-negative integer: {factor!r}")
            p += int(value)
        else:
            q += value
    return coef, p, q


def parse_weight(expr: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Parse ``"a^-20 + theta^20 + a^20"``-style weights into ``omega(theta, a)``.

    A weight is a sum of terms ``c * theta^p * a^q`` with ``p`` a
    non-negative integer and ``q`` real.  ``"1"`` is the unit weight.
    """
    if not expr or not expr.strip():
        raise WeightError("empty weight expression")
    # split on '+' that is not part of an exponent such as a^+2 or 1e+3
    parts = re.split(r"(?<![\^eE(])\+", expr.replace(" ", ""))
    terms = [_parse_term(p) for p in parts]

    def omega(theta, a):
        theta = np.asarray(theta, dtype=float)
        a = np.asarray(a, dtype=float)
        out = np.zeros(np.broadcast(theta, a).shape)
        for c, p, q in terms:
            out = out + c * theta**p * a**q
        return out

    return omega


def weighted_norm(ens: ParticleEnsemble, weight) -> float:
    """``sqrt(sum_j w_j omega(theta_j, a_j)^2)``, the particle form of ``||omega gamma||``."""
    omega = parse_weight(weight) if isinstance(weight, str) else weight
    om = omega(ens.theta, ens.a)
    return math.sqrt(math.fsum(ens.w * om * om))


def _cell_fraction_below(a_query, centers, widths):
    # fraction of each particle's cell [a_j - h/2, a_j + h/2] lying below a_query;
    # zero width falls back to the sharp indicator a_j <= a_query
    a_query = np.asarray(a_query, dtype=float)[..., None]
    h = np.asarray(widths, dtype=float)
    sharp = (centers <= a_query).astype(float)
    safe_h = np.where(h > 0, h, 1.0)
    smooth = np.clip((a_query - centers) / safe_h + 0.5, 0.0, 1.0)
    return np.where(h > 0, smooth, sharp)


def indicator(alpha: float):
    """``tau(a) = 1_{alpha <= a}``; flagged so :func:`averages` can smooth it."""

    def tau(a):
        return (np.asarray(a) >= alpha).astype(float)

    tau.alpha = alpha
    return tau


def max_kernel(alpha: float):
    """``tau(a) = 1 / max(a, alpha)``."""

    def tau(a):
        return 1.0 / np.maximum(a, alpha)

    return tau


def averages(ens: ParticleEnsemble, tau, smooth: bool = True) -> float:
    """``<tau> = sum_j w_j tau(a_j)``.

    Indicators are discontinuous in ``a``; with ``smooth`` and a sampled
    ensemble each particle is spread uniformly over its sampling cell in
    ``a`` (width ``ens.width_a``), which is the quadrature of the continuum
    average rather than a count.
    """
    alpha = getattr(tau, "alpha", None)
    if alpha is not None and smooth and ens.width_a is not None:
        below = _cell_fraction_below(alpha, ens.a, ens.width_a)
        return math.fsum(ens.w * (1.0 - below))
    return math.fsum(ens.w * tau(ens.a))


def _mass_below(ens: ParticleEnsemble, x, smooth: bool):
    """``sum_j w_j * (fraction of cell j below x)`` for every query ``x``.

    Cells sorted by upper edge: those entirely below ``x`` come from a prefix
    sum, and only cells straddling ``x`` (upper edge within one maximal width
    above it) are visited individually.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = ens.width_a if (smooth and ens.width_a is not None) else np.zeros_like(ens.a)
    lo, hi = ens.a - 0.5 * h, ens.a + 0.5 * h
    order = np.argsort(hi, kind="stable")
    hi_s, lo_s, h_s, w_s = hi[order], lo[order], h[order], ens.w[order]
    prefix = np.concatenate([[0.0], np.cumsum(w_s)])
    k = np.searchsorted(hi_s, x, side="right")
    full = prefix[k]
    h_max = float(h.max()) if h.size else 0.0
    if h_max == 0.0:
        return full
    k2 = np.searchsorted(hi_s, x + h_max, side="right")
    counts = k2 - k
    query = np.repeat(np.arange(x.size), counts)
    starts = np.repeat(k - np.cumsum(counts) + counts, counts)
    idx = starts + np.arange(query.size)
    safe_h = np.where(h_s[idx] > 0, h_s[idx], 1.0)
    frac = np.clip((x[query] - lo_s[idx]) / safe_h, 0.0, 1.0)
    frac = np.where(h_s[idx] > 0, frac, 0.0)
    return full + np.bincount(query, weights=w_s[idx] * frac, minlength=x.size)


def asymptotic_field(ensembles: ParticleEnsemble | Sequence[ParticleEnsemble], a_grid, smooth: bool = True):
    """Tables of ``E_inf(a) = a^-2 sum_{a_j <= a} w_j`` and ``Psi_inf(a) = sum_j w_j / max(a, a_j)``.

    Passing several late-time ensembles averages the tables over that window.
    """
    if isinstance(ensembles, ParticleEnsemble):
        ensembles = [ensembles]
    a_grid = np.atleast_1d(np.asarray(a_grid, dtype=float))
    if np.any(~(a_grid > 0)):
        raise ValueError("a_grid must be positive")
    e_tab = np.zeros_like(a_grid)
    p_tab = np.zeros_like(a_grid)
    for ens in ensembles:
        e_tab += _mass_below(ens, a_grid, smooth) / a_grid**2
        p_tab += np.array([math.fsum(ens.w / np.maximum(x, ens.a)) for x in a_grid])
    return e_tab / len(ensembles), p_tab / len(ensembles)


def e_inf_at(reference, a, smooth: bool = True):
    """``E_inf`` of the reference ensemble(s) evaluated at the actions ``a``.

    Several reference ensembles are averaged, as in :func:`asymptotic_field`.
    """
    refs = [reference] if isinstance(reference, ParticleEnsemble) else list(reference)
    a = np.asarray(a, dtype=float)
    total = sum(_mass_below(r, a, smooth) for r in refs)
    return total / len(refs) / a**2


def scatter_residual(ens: ParticleEnsemble, reference: ParticleEnsemble, e_inf=None) -> float:
    """Particle-wise distance to the reference state after undoing the log phase.

    ``theta_hat = theta + lam ln t E_inf(a)``; with ``e_inf=None`` the raw
    angles are compared.  ``e_inf`` holds per-particle values (same order).
    At ``t = 0`` no correction is applied.
    """
    if len(ens) != len(reference) or not np.array_equal(ens.w, reference.w):
        raise ValueError("ensembles must hold the same particles")
    th, th_ref = ens.theta, reference.theta
    if e_inf is not None:
        e_inf = np.asarray(e_inf, dtype=float)
        th = th + ens.lam * math.log(ens.t) * e_inf if ens.t > 0 else th
        th_ref = th_ref + reference.lam * math.log(reference.t) * e_inf
    d_theta = th - th_ref
    d_a = ens.a - reference.a
    return math.sqrt(math.fsum(ens.w * (d_theta * d_theta + d_a * d_a)))


@dataclass(frozen=True)
class FitResult:
    slope: float
    stderr: float
    intercept: float
    n: int

    def as_dict(self):
        return {"slope": self.slope, "stderr": self.stderr, "intercept": self.intercept, "n": self.n}


def decay_fit(t, values, window=None) -> FitResult:
    """Least-squares line through ``(ln t, ln value)`` for ``t`` in ``window``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.ones(t.shape, dtype=bool)
    if window is not None:
        lo, hi = window
        keep = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    t, values = t[keep], values[keep]
    if t.size < 5:
        raise ValueError(f"need at least 5 points in the fit window, got {t.size}")
    if np.any(~(values > 0)):
        raise ValueError("decay fit needs positive values")
    x, y = np.log(t), np.log(values)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    stderr = math.sqrt(np.sum(resid**2) / (x.size - 2) / sxx)
    return FitResult(float(slope), stderr, float(intercept), int(x.size))


def _table(ens, tbl):
    return tbl if tbl is not None else FieldTable.from_radii(ens.radii(), ens.w, ens.t)


def field_observables(ens: ParticleEnsemble, tbl: FieldTable | None = None, rel_bandwidth: float = 0.05):
    """Sup-norm field observables sampled at the particles.

    ``sup (1/a)|dPsi~/dtheta|`` over the ensemble, ``sup |dPsi~/da|`` over
    the particles in the bulk region and in its inner core, and
    ``sup rho(R~_j)``.
    """
    tbl = _table(ens, tbl)
    out = {"sup_dtheta_psi": 0.0, "sup_da_psi_bulk": 0.0, "sup_da_psi_bulk_star": 0.0, "sup_rho": 0.0}
    if len(ens) == 0:
        return out
    g_theta, g_a = grad_Psi_tilde(tbl, ens.theta, ens.a, ens.t, ens.q)
    out["sup_dtheta_psi"] = float(np.max(np.abs(g_theta) / ens.a))
    for key, mask in (
        ("sup_da_psi_bulk", aa.in_bulk(ens.theta, ens.a, ens.t)),
        ("sup_da_psi_bulk_star", aa.in_bulk_star(ens.theta, ens.a, ens.t)),
    ):
        out[key] = float(np.max(np.abs(g_a[mask]))) if np.any(mask) else 0.0
    r = ens.radii()
    out["sup_rho"] = float(np.max(tbl.density_estimate(r, rel_bandwidth * r)))
    return out


def bulk_fractions(ens: ParticleEnsemble):
    """Mass fractions of the ensemble in the bulk region and its inner core."""
    total = ens.total_mass
    if total == 0:
        return 0.0, 0.0
    b = aa.in_bulk(ens.theta, ens.a, ens.t)
    bs = aa.in_bulk_star(ens.theta, ens.a, ens.t)
    return math.fsum(ens.w[b]) / total, math.fsum(ens.w[bs]) / total


def energy(ens: ParticleEnsemble, tbl: FieldTable | None = None) -> float:
    """``sum_j w_j a_j^2 + lam (sum_{j,k} w_j w_k / max(R_j, R_k) + sum_j w_j^2 / R_j)``.

    ``a^2 = V^2 + q / R`` exactly, so the first sum is the physical kinetic
    plus charge energy.
    """
    if len(ens) == 0:
        return 0.0
    tbl = _table(ens, tbl)
    kinetic = math.fsum(ens.w * ens.a * ens.a)
    if ens.lam == 0.0:
        return kinetic
    return kinetic + ens.lam * interaction_energy(tbl, ens.radii(), ens.w)


def tangent_norms(ens: ParticleEnsemble):
    """Derivative norms ``||(a + 1/a) d_theta gamma||`` and ``||a d_a gamma||``.

    Estimated from the transported flow-map Jacobian: the flow is area
    preserving, so ``grad gamma(t) = J^-T grad gamma_0`` with
    ``J^-T = [[J22, -J21], [-J12, J11]]``, integrated with the cell areas.
    Diagnostic quality only.
    """
    if ens.jac is None or ens.grad0 is None or ens.area is None:
        return math.nan, math.nan
    j11, j12, j21, j22 = ens.jac.T
    g_theta0, g_a0 = ens.grad0.T
    d_theta = j22 * g_theta0 - j21 * g_a0
    d_a = -j12 * g_theta0 + j11 * g_a0
    n1 = math.fsum(ens.area * ((ens.a + 1.0 / ens.a) * d_theta) ** 2)
    n2 = math.fsum(ens.area * (ens.a * d_a) ** 2)
    return math.sqrt(n1), math.sqrt(n2)


def record(ens: ParticleEnsemble, norms: Sequence[str] = (), tau_alphas: Sequence[float] = (),
           tangents: bool = False, rel_bandwidth: float = 0.05) -> dict:
    """One diagnostics row in the fixed column order.

    ``t, mass, energy``, the weighted norms in declaration order, the field
    observables, bulk fractions, indicator averages and (optionally) the
    tangent-vector derivative norms.
    """
    tbl = _table(ens, None) if len(ens) else None
    row = {"t": float(ens.t), "mass": ens.total_mass, "energy": energy(ens, tbl)}
    for expr in norms:
        row[f"norm[{expr}]"] = weighted_norm(ens, expr)
    if len(ens):
        row.update(field_observables(ens, tbl, rel_bandwidth))
    else:
        row.update({"sup_dtheta_psi": 0.0, "sup_da_psi_bulk": 0.0, "sup_da_psi_bulk_star": 0.0, "sup_rho": 0.0})
    row["bulk_fraction"], row["bulk_star_fraction"] = bulk_fractions(ens)
    for alpha in tau_alphas:
        row[f"avg[{alpha!r}]"] = averages(ens, indicator(alpha))
    if tangents:
        row["dtheta_norm"], row["da_norm"] = tangent_norms(ens)
    return row


def add_scatter_columns(rows: list, states: Sequence[ParticleEnsemble], window: int = 1) -> list:
    """Append ``scatter_raw`` and ``scatter_unsheared`` to each row.

    The reference is the last state; ``E_inf`` comes from the last ``window``
    states.  Rows and states are aligned by position.
    """
    if len(rows) != len(states):
        raise ValueError("rows and states must be aligned")
    if not states:
        return rows
    ref = states[-1]
    refs = states[-window:]
    for row, ens in zip(rows, states):
        row["scatter_raw"] = scatter_residual(ens, ref)
        row["scatter_unsheared"] = scatter_residual(ens, ref, e_inf_at(refs, ens.a))
    return rows


def _fit_or_error(t, values, window):
    try:
        return decay_fit(t, values, window).as_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def summarize(rows: Sequence[dict], field_fit=(1e2, 1e4), average_fit=(1e2, 1e3),
              scatter_fit=(1e2, 1e3), scatter_compare=1e3) -> dict:
    """Decay fits, average convergence, scattering residual fit and conservation."""
    if not rows:
        return {}
    t = np.array([r["t"] for r in rows])
    out = {"times": len(rows), "t_end": float(t[-1])}
    out["mass_constant"] = all(r["mass"] == rows[0]["mass"] for r in rows)
    e0 = rows[0]["energy"]
    drift = max(abs(r["energy"] - e0) for r in rows)
    out["energy_drift_relative"] = drift / abs(e0) if e0 != 0 else drift
    for key in ("sup_dtheta_psi", "sup_da_psi_bulk", "sup_rho"):
        out[f"fit[{key}]"] = _fit_or_error(t, [r[key] for r in rows], field_fit)
    for key in rows[0]:
        if key.startswith("avg["):
            last = rows[-1][key]
            out[f"fit[{key}]"] = _fit_or_error(t, [abs(r[key] - last) for r in rows], average_fit)
    if "scatter_unsheared" in rows[0]:
        for key in ("scatter_unsheared", "scatter_raw"):
            out[f"fit[{key}]"] = _fit_or_error(t, [r[key] for r in rows], scatter_fit)
        k = int(np.argmin(np.abs(np.log(np.maximum(t, 1e-300)) - math.log(scatter_compare))))
        raw, un = rows[k]["scatter_raw"], rows[k]["scatter_unsheared"]
        out["scatter_compare"] = {
            "t": float(t[k]),
            "raw": raw,
            "unsheared": un,
            "ratio": raw / un if un > 0 else math.inf,
        }
    return out
