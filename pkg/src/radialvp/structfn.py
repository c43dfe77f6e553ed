"""Structure functions of the radial repulsive Kepler problem.

``G(s) = sqrt(s(s-1)) + ln(sqrt(s) + sqrt(s-1))`` on ``[1, inf)`` and its
inverse ``H = G^{-1}`` on ``[0, inf)``.

Everything here is parametrised by ``w = sqrt(s - 1)``.  In that variable

    g(w) := G(1 + w^2) = w sqrt(1 + w^2) + asinh(w),   g'(w) = 2 sqrt(1 + w^2),

which is smooth, increasing and convex on ``w >= 0``.  Inverting ``g`` by
Newton's method has none of the ``G'(1) = inf`` singularity that plagues a
direct solve for ``H``, and ``H - 1 = w^2`` is available without cancellation.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DomainError",
    "ConvergenceError",
    "g_of_w",
    "solve_w",
    "eval_G",
    "eval_G_offset",
    "eval_H",
    "eval_H_prime",
    "eval_H_second",
    "eval_H_minus_one",
    "radial_action_factor",
    "G_large",
    "G_small",
    "H_large",
    "H_small",
]

LN2 = float(np.log(2.0))

# below this offset G is evaluated from its periapsis series
SERIES_CUTOFF = 1e-8
DEFAULT_RTOL = 1e-12
_MAX_NEWTON = 60


class DomainError(ValueError):
    """Argument outside the domain of a structure function."""


class ConvergenceError(RuntimeError):
    """The inversion of G did not converge (a defect for valid input)."""


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _out(arr, scalar):
    return float(arr) if scalar else arr


def g_of_w(w):
    """``G(1 + w**2)`` for ``w >= 0``."""
    w = np.asarray(w, dtype=float)
    return w * np.sqrt(1.0 + w * w) + np.arcsinh(w)


def _g_series(u):
    # G(1+u) = 2 u^(1/2) + u^(3/2)/3 - u^(5/2)/20 + O(u^(7/2))
    su = np.sqrt(u)
    return su * (2.0 + u * (1.0 / 3.0 - u / 20.0))


def eval_G(s):
    """Evaluate ``G(s)`` for ``s >= 1`` (scalar or array)."""
    s, scalar = _as_array(s)
    if np.any(~(s >= 1.0)):
        raise DomainError("G is defined on [1, inf)")
    u = s - 1.0
    near = u < SERIES_CUTOFF
    out = g_of_w(np.sqrt(u))
    if np.any(near):
        out = np.where(near, _g_series(u), out)
    return _out(out, scalar)


def eval_G_offset(u):
    """``G(1 + u)`` for ``u >= 0``.

    Pairs with :func:`eval_H_minus_one`: a float ``H(x)`` cannot resolve
    ``x`` below about ``1e-4`` because ``H - 1 ~ x^2/4`` is lost to rounding.
    """
    u, scalar = _as_array(u)
    if np.any(~(u >= 0.0)):
        raise DomainError("G(1 + u) needs u >= 0")
    out = np.where(u < SERIES_CUTOFF, _g_series(u), g_of_w(np.sqrt(u)))
    return _out(out, scalar)


def _initial_w(x):
    # upper bounds: H <= x + 1 gives w <= sqrt(x); g(w) >= 2w gives w <= x/2
    hi = np.minimum(np.sqrt(x), 0.5 * x)
    lx = np.log(np.maximum(x, 1.0))
    h_big = x - 0.5 * lx - LN2 + 0.5 + 0.25 * lx / np.maximum(x, 1.0)
    guess = np.where(x > 4.0, np.sqrt(np.maximum(h_big - 1.0, 0.0)), 0.5 * x)
    lo = np.sqrt(np.maximum(0.5 * x - 1.0, 0.0))
    return np.clip(guess, lo, hi), lo, hi


def solve_w(x, rtol: float = DEFAULT_RTOL):
    """Return ``w >= 0`` with ``g(w) = x``, i.e. ``H(x) = 1 + w**2``.

    Safeguarded Newton: the iterate is kept inside the bracket
    ``sqrt(max(x/2 - 1, 0)) <= w <= min(sqrt(x), x/2)`` implied by
    ``x/2 <= H(x) <= x + 1`` and ``G(1 + w^2) >= 2w``; a step leaving the
    bracket is replaced by bisection.
    """
    x, scalar = _as_array(x)
    if np.any(~(x >= 0.0)):
        raise DomainError("H is defined on [0, inf)")
    w, lo, hi = _initial_w(x)
    w = w.copy()
    lo = lo.copy()
    hi = hi.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(_MAX_NEWTON):
        if not active.any():
            break
        res = g_of_w(w) - x
        # shrink the bracket with the sign of the residual
        hi = np.where(res > 0.0, np.minimum(hi, w), hi)
        lo = np.where(res < 0.0, np.maximum(lo, w), lo)
        step = res / (2.0 * np.sqrt(1.0 + w * w))
        trial = w - step
        bad = (trial < lo) | (trial > hi)
        trial = np.where(bad, 0.5 * (lo + hi), trial)
        done = np.abs(trial - w) <= 0.25 * rtol * np.maximum(w, 1e-300)
        done |= res == 0.0
        w = np.where(active, trial, w)
        active &= ~done
    if active.any():
        raise ConvergenceError("inversion of G failed to converge")
    return _out(w, scalar)


def eval_H(x, rtol: float = DEFAULT_RTOL):
    """Evaluate ``H(x) = G^{-1}(x)`` for ``x >= 0``."""
    w = solve_w(x, rtol)
    return 1.0 + w * w


def eval_H_minus_one(x, rtol: float = DEFAULT_RTOL):
    """``H(x) - 1`` without cancellation (``~ x**2/4`` near 0)."""
    w = solve_w(x, rtol)
    return w * w


def eval_H_prime(x, rtol: float = DEFAULT_RTOL):
    """``H'(x) = sqrt((H - 1)/H)``, in ``[0, 1)``."""
    w = solve_w(x, rtol)
    return w / np.sqrt(1.0 + w * w)


def eval_H_second(x, rtol: float = DEFAULT_RTOL):
    """``H''(x) = 1 / (2 H(x)**2)``."""
    h = eval_H(x, rtol)
    return 0.5 / (h * h)


def radial_action_factor(w):
    """``x H'(x) - H(x)`` expressed through ``w = sqrt(H(x) - 1)``.

    Equals ``-1 + (1/2) * int_0^x s / H(s)**2 ds``; the closed form
    ``w asinh(w) / sqrt(1 + w^2) - 1`` follows from ``x = g(w)``.
    """
    w = np.asarray(w, dtype=float)
    return w * np.arcsinh(w) / np.sqrt(1.0 + w * w) - 1.0


# Asymptotic expansions, used as independent checks.

def G_large(s):
    """``s + ln(s)/2 + ln 2 - 1/2``; error ``O(1/s)``."""
    s = np.asarray(s, dtype=float)
    return s + 0.5 * np.log(s) + LN2 - 0.5


def G_small(hbar):
    """Leading periapsis term ``2 sqrt(hbar)`` of ``G(1 + hbar)``."""
    return 2.0 * np.sqrt(np.asarray(hbar, dtype=float))


def H_large(x):
    """``x - ln(x)/2 - ln 2 + 1/2 + ln(x)/(4x)``; error ``O(1/x)``."""
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    return x - 0.5 * lx - LN2 + 0.5 + 0.25 * lx / x


def H_small(h):
    """``1 + (h/2)**2``; error ``O(h**5)``."""
    h = np.asarray(h, dtype=float)
    return 1.0 + 0.25 * h * h
