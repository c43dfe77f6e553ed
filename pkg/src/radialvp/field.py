"""Self-consistent radial field of a weighted particle ensemble.

Particles carry ``(theta, a)`` in the sheared action-angle frame and a mass
weight; at time ``t`` particle ``j`` sits at radius ``R~_j = R(theta_j + t a_j, a_j)``.
The field is the shell-model field of those radii:

    m(r)   = sum_{R_j <= r} w_j
    E(r)   = m(r) / r^2
    Psi(r) = sum_j w_j / max(r, R_j)

A :class:`FieldTable` stores the radii sorted with inclusive prefix sums of the
weights and suffix sums of ``w / R``, so each query costs one binary search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import aa
from .structfn import DomainError

__all__ = [
    "ParticleEnsemble",
    "PhysicalEnsemble",
    "FieldTable",
    "build",
    "grad_Psi_tilde",
    "hessian_Psi_tilde",
    "to_physical",
    "from_physical",
    "interaction_energy",
]


@dataclass
class ParticleEnsemble:
    """Weighted samples of ``gamma^2 dtheta da`` at time ``t``.

    Row ``j`` of every array is the same particle for the whole run.  Optional
    per-particle data: ``width_a`` (sampling cell width in ``a``, used as the
    particle shape by smoothed averages), ``area`` (sampling cell area),
    ``grad0`` (gradient of the initial profile at the initial point, ``(N, 2)``)
    and ``jac`` (flow-map Jacobian ``[[J11, J12], [J21, J22]]`` flattened, ``(N, 4)``).
    """

    theta: np.ndarray
    a: np.ndarray
    w: np.ndarray
    t: float
    q: float
    lam: float
    width_a: np.ndarray | None = None
    area: np.ndarray | None = None
    grad0: np.ndarray | None = None
    jac: np.ndarray | None = None
    total_mass: float = field(init=False)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=float)
        self.a = np.ascontiguousarray(self.a, dtype=float)
        self.w = np.ascontiguousarray(self.w, dtype=float)
        if not (self.theta.shape == self.a.shape == self.w.shape) or self.theta.ndim != 1:
            raise ValueError("theta, a and w must be 1-d arrays of equal length")
        if not self.q > 0:
            raise DomainError("charge coupling q must be positive")
        if np.any(~(self.a > 0.0)):
            raise DomainError("all actions must be positive")
        if np.any(~(self.w >= 0.0)):
            raise ValueError("weights must be non-negative")
        # fsum makes the total independent of summation order
        self.total_mass = math.fsum(self.w)

    def __len__(self):
        return self.theta.size

    def moved(self, theta, a, t, jac=None) -> "ParticleEnsemble":
        """Same particles and weights at a new state."""
        out = replace(self, theta=theta, a=a, t=t)
        if jac is not None:
            out.jac = jac
        return out

    def radii(self, t: float | None = None) -> np.ndarray:
        t = self.t if t is None else t
        return aa.R_tilde(self.theta, self.a, t, self.q)


@dataclass
class PhysicalEnsemble:
    """The same particles in physical coordinates ``(r, v)``."""

    r: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float
    q: float
    lam: float

    def __post_init__(self):
        self.r = np.ascontiguousarray(self.r, dtype=float)
        self.v = np.ascontiguousarray(self.v, dtype=float)
        self.w = np.ascontiguousarray(self.w, dtype=float)
        if np.any(~(self.r > 0.0)):
            raise DomainError("all radii must be positive")

    def __len__(self):
        return self.r.size


def to_physical(ens: ParticleEnsemble) -> PhysicalEnsemble:
    r, v = aa.from_aa(ens.theta + ens.t * ens.a, ens.a, ens.q)
    return PhysicalEnsemble(np.atleast_1d(r), np.atleast_1d(v), ens.w, ens.t, ens.q, ens.lam)


def from_physical(phys: PhysicalEnsemble, template: ParticleEnsemble | None = None) -> ParticleEnsemble:
    """Pull physical states back to the sheared frame: ``theta = Theta - t A``."""
    theta, a = aa.to_aa(phys.r, phys.v, phys.q)
    theta = np.atleast_1d(theta) - phys.t * np.atleast_1d(a)
    if template is not None:
        return template.moved(theta, np.atleast_1d(a), phys.t)
    return ParticleEnsemble(theta, np.atleast_1d(a), phys.w, phys.t, phys.q, phys.lam)


@dataclass(frozen=True)
class FieldTable:
    """Sorted radii with inclusive cumulative mass; immutable after build."""

    radii: np.ndarray
    cummass: np.ndarray
    tail: np.ndarray  # tail[k] = sum_{i >= k} w_i / radii_i, tail[N] = 0
    built_at: float
    order: np.ndarray

    @classmethod
    def from_radii(cls, radii, w, t: float = 0.0) -> "FieldTable":
        radii = np.asarray(radii, dtype=float)
        w = np.asarray(w, dtype=float)
        if np.any(~(radii > 0.0)):
            raise DomainError("radii must be positive")
        order = np.argsort(radii, kind="stable")
        r_sorted = radii[order]
        w_sorted = w[order]
        cummass = np.cumsum(w_sorted)
        tail = np.zeros(r_sorted.size + 1)
        tail[:-1] = np.cumsum((w_sorted / r_sorted)[::-1])[::-1]
        for arr in (r_sorted, cummass, tail, order):
            arr.setflags(write=False)
        return cls(r_sorted, cummass, tail, float(t), order)

    def __len__(self):
        return self.radii.size

    @property
    def total_mass(self) -> float:
        return float(self.cummass[-1]) if self.cummass.size else 0.0

    def _count(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(~(r > 0.0)):
            raise DomainError("query radius must be positive")
        return r, np.searchsorted(self.radii, r, side="right")

    def query_m(self, r):
        """Mass at radius ``<= r`` (inclusive)."""
        r, k = self._count(r)
        if self.cummass.size == 0:
            return np.zeros_like(r) if r.ndim else 0.0
        m = np.where(k > 0, self.cummass[np.maximum(k - 1, 0)], 0.0)
        return float(m) if m.ndim == 0 else m

    def query_E(self, r):
        r = np.asarray(r, dtype=float)
        out = self.query_m(r) / (r * r)
        return float(out) if np.ndim(out) == 0 else out

    def query_Psi(self, r):
        """``sum_j w_j / max(r, R_j)``: inner mass over ``r`` plus the outer tail."""
        r, k = self._count(r)
        inner = np.where(k > 0, self.cummass[np.maximum(k - 1, 0)], 0.0) if self.cummass.size else 0.0
        out = inner / r + self.tail[k] if self.cummass.size else np.zeros_like(r)
        return float(out) if np.ndim(out) == 0 else out

    def density_estimate(self, r, bandwidth):
        """Box-kernel difference quotient ``(m(r + h/2) - m(r - h/2)) / h``."""
        r = np.asarray(r, dtype=float)
        h = np.asarray(bandwidth, dtype=float)
        if np.any(~(h > 0.0)):
            raise DomainError("bandwidth must be positive")
        lo = r - 0.5 * h
        hi = r + 0.5 * h
        m_hi = self._m_any(hi)
        m_lo = self._m_any(lo)
        out = (m_hi - m_lo) / h
        return float(out) if np.ndim(out) == 0 else out

    def _m_any(self, r):
        # like query_m but defined (as 0) for r <= 0, which the stencil can reach
        k = np.searchsorted(self.radii, r, side="right")
        if self.cummass.size == 0:
            return np.zeros(np.shape(r))
        return np.where(k > 0, self.cummass[np.maximum(k - 1, 0)], 0.0)

    def mass_seen(self, r, own_radius, own_weight):
        """``m(r)`` as felt by a particle that built the table at ``own_radius``.

        Within a step the table is frozen while the particle moves; its own
        weight must stay counted even after it moves inside its table radius.
        """
        m = self.query_m(r)
        inside = np.asarray(own_radius) <= np.asarray(r)
        return m - np.where(inside, own_weight, 0.0) + own_weight

    def mass_seen_by_particles(self):
        """``m(R_j)`` for each particle in input order (own weight included)."""
        seen = np.empty_like(self.cummass)
        # ties: every particle at a tied radius sees the whole tie group
        k = np.searchsorted(self.radii, self.radii, side="right")
        seen[self.order] = self.cummass[k - 1]
        return seen


def build(ens: ParticleEnsemble, t: float | None = None) -> FieldTable:
    """Sort the ensemble radii at time ``t`` (default: the ensemble time)."""
    t = ens.t if t is None else t
    return FieldTable.from_radii(np.atleast_1d(ens.radii(t)), ens.w, t)


def grad_Psi_tilde(tbl: FieldTable, theta, a, t: float, q: float):
    """``(d Psi~/d theta, d Psi~/d a) = -(m(R~) / R~^2) (dR~/dtheta, dR~/da)``."""
    kin = aa.kinematics(theta, a, t, q)
    if len(tbl) == 0:
        zero = np.zeros_like(kin.R)
        return zero, zero.copy()
    factor = -tbl.query_m(kin.R) / (kin.R * kin.R)
    return factor * kin.dR_dtheta, factor * kin.dR_da


def hessian_Psi_tilde(tbl: FieldTable, theta, a, t: float, q: float, rel_bandwidth: float = 0.05):
    """Second derivatives ``(Psi_tt, Psi_ta, Psi_aa)`` of ``Psi~ = Phi(R~)``.

    ``Phi' = -m / R^2`` and ``Phi'' = 2 m / R^3 - rho / R^2`` with ``rho`` the
    box-kernel density at relative bandwidth ``rel_bandwidth``.  Diagnostic
    quality: the shell field has jumps, ``rho`` is a smoothed stand-in.
    """
    R = aa.R_tilde(theta, a, t, q)
    d_t, d_a = aa.dR_tilde(theta, a, t, q)
    r_tt, r_ta, r_aa = aa.d2R_tilde(theta, a, t, q)
    m = tbl.query_m(R)
    rho = tbl.density_estimate(R, rel_bandwidth * R)
    phi1 = -m / R**2
    phi2 = 2.0 * m / R**3 - rho / R**2
    return (
        phi1 * r_tt + phi2 * d_t * d_t,
        phi1 * r_ta + phi2 * d_t * d_a,
        phi1 * r_aa + phi2 * d_a * d_a,
    )


def interaction_energy(tbl: FieldTable, radii, w) -> float:
    """``sum_{j,k} w_j w_k / max(R_j, R_k) + sum_j w_j^2 / R_j``.

    The first sum includes the diagonal; the extra diagonal term makes this
    the potential of the inclusive convention, in which particle ``j`` feels
    its own full weight.
    """
    radii = np.asarray(radii, dtype=float)
    w = np.asarray(w, dtype=float)
    psi = tbl.query_Psi(radii)
    return math.fsum(w * psi) + math.fsum(w * w / radii)
