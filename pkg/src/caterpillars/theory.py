"""Deterministic limits: rescaled caterpillar curves, their drift field and the
limiting number of r-caterpillars per individual.

With ``a = alpha / (alpha - 1)``:

* ``x_0(t) = (1+t)**(-1/(alpha-1))``, ``x_1(t) = (1+t)**(-a)``,
* ``x_r(t) = (1+t)**(-a) (alpha t / (1+t))**(r-1) / (2 (r-1)!)`` for r >= 2,
* ``x_up_r(t) = alpha**(r-1) / (2 (r-2)!) * int_0^t s**(r-2) (1+s)**(-r-a) ds``,
* ``x_up_r(inf) = alpha**(r-1) Gamma(1+a) / (2 Gamma(r+a))``.

At alpha = 2 no expression involving ``Gamma(2 - alpha)`` is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate


def _check_alpha(alpha: float) -> None:
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")


def _check_t(t: float) -> None:
    if not t >= 0.0:
        raise ValueError(f"t must be non-negative, got {t}")


def x_r(alpha: float, r: int, t: float) -> float:
    """Limit of the rescaled number of r-caterpillars (r >= 1) or blocks (r = 0)."""
    _check_alpha(alpha)
    _check_t(t)
    if r < 0:
        raise ValueError(f"need r >= 0, got {r}")
    if r == 0:
        return (1.0 + t) ** (-1.0 / (alpha - 1.0))
    decay = (1.0 + t) ** (-alpha / (alpha - 1.0))
    if r == 1:
        return decay
    return decay * (alpha * t / (1.0 + t)) ** (r - 1) / (2.0 * math.factorial(r - 1))


def x_curves(alpha: float, r_max: int, t) -> np.ndarray:
    """``x_0..x_r_max`` at the times ``t``; shape ``(len(t), r_max + 1)``."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([[x_r(alpha, r, float(s)) for r in range(r_max + 1)] for s in ts])


def drift_field(alpha: float, state) -> np.ndarray:
    """Drift of ``(X_0, ..., X_r_max)``.

    ``d0 = -X0**alpha/(alpha-1)``, ``d1 = -c X1 X0**(alpha-1)`` with
    ``c = alpha/(alpha-1)``, ``d2 = alpha X1**2 / (2 X0**(2-alpha)) - c X2 X0**(alpha-1)``
    and ``dr = alpha X_{r-1} X1 / X0**(2-alpha) - c Xr X0**(alpha-1)`` for r >= 3.
    """
    _check_alpha(alpha)
    x = [float(v) for v in state]
    if len(x) < 2:
        raise ValueError("state must contain at least X_0 and X_1")
    x0 = x[0]
    if not x0 > 0.0:
        raise ZeroDivisionError(f"the drift field is singular at X_0 = {x0}")
    c = alpha / (alpha - 1.0)
    loss = c * x0 ** (alpha - 1.0)
    gain = alpha * x[1] / x0 ** (2.0 - alpha)
    out = [-(x0**alpha) / (alpha - 1.0), -loss * x[1]]
    for r in range(2, len(x)):
        made = gain * x[1] / 2.0 if r == 2 else gain * x[r - 1]
        out.append(made - loss * x[r])
    return np.array(out)


@dataclass
class DriftSolution:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), r_max + 1)
    sup_error: float  # sup-norm distance to the closed forms


def integrate_drift(alpha: float, r_max: int, T: float, step: float = 1e-4) -> DriftSolution:
    """Fixed-step classical Runge-Kutta solution of the drift system from
    ``x_0 = x_1 = 1``, ``x_r = 0`` (r >= 2), compared against the closed forms."""
    _check_alpha(alpha)
    if r_max < 1:
        raise ValueError(f"need r_max >= 1, got {r_max}")
    if not 0.0 < step <= 1e-2:
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    if not 0.0 <= T <= 100.0:
        raise ValueError(f"T must lie in [0, 100], got {T}")
    n_steps = int(round(T / step))
    if T > 0.0 and not math.isclose(n_steps * step, T, rel_tol=1e-9):
        raise ValueError("T must be a whole number of steps")
    y = [1.0, 1.0] + [0.0] * (r_max - 1)
    values = np.empty((n_steps + 1, r_max + 1))
    values[0] = y
    field = _drift_list(alpha, r_max)
    h = step
    for i in range(n_steps):
        k1 = field(y)
        k2 = field([a + 0.5 * h * b for a, b in zip(y, k1)])
        k3 = field([a + 0.5 * h * b for a, b in zip(y, k2)])
        k4 = field([a + h * b for a, b in zip(y, k3)])
        y = [a + h / 6.0 * (p + 2.0 * q + 2.0 * s + w) for a, p, q, s, w in zip(y, k1, k2, k3, k4)]
        values[i + 1] = y
    times = np.arange(n_steps + 1) * step
    exact = x_curves(alpha, r_max, times)
    return DriftSolution(times, values, float(np.max(np.abs(values - exact))))


def _drift_list(alpha: float, r_max: int):
    # Plain-float version of drift_field for the integrator's inner loop.
    c = alpha / (alpha - 1.0)
    am1 = alpha - 1.0
    tma = 2.0 - alpha

    def field(x):
        x0 = x[0]
        loss = c * x0**am1
        gain = alpha * x[1] / x0**tma
        out = [-(x0**alpha) / am1, -loss * x[1], 0.5 * gain * x[1] - loss * x[2]] if r_max >= 2 else [
            -(x0**alpha) / am1,
            -loss * x[1],
        ]
        for r in range(3, r_max + 1):
            out.append(gain * x[r - 1] - loss * x[r])
        return out

    return field


def cumulative_rate(alpha: float, r: int, s: float) -> float:
    """Rate at which r-caterpillars are created at rescaled time ``s``."""
    if r < 2:
        raise ValueError(f"need r >= 2, got {r}")
    a = alpha / (alpha - 1.0)
    return alpha ** (r - 1) / (2.0 * math.factorial(r - 2)) * s ** (r - 2) * (1.0 + s) ** (-r - a)


def x_up(alpha: float, r: int, t: float) -> float:
    """Limit of the rescaled number of r-caterpillars seen up to time ``t``.

    Finite ``t`` integrates :func:`cumulative_rate` adaptively after the
    substitution ``u = s/(1+s)``; ``t = inf`` returns :func:`limit_constant`.
    """
    _check_alpha(alpha)
    _check_t(t)
    if r < 2:
        raise ValueError(f"need r >= 2, got {r}")
    if math.isinf(t):
        return limit_constant(alpha, r)
    if t == 0.0:
        return 0.0
    # u = s/(1+s) maps [0, t] onto [0, t/(1+t)] with integrand u**(r-2) (1-u)**a.
    a = alpha / (alpha - 1.0)
    value, _ = integrate.quad(
        lambda u: u ** (r - 2) * (1.0 - u) ** a, 0.0, t / (1.0 + t), epsabs=0.0, epsrel=1e-12, limit=200
    )
    value *= alpha ** (r - 1) / (2.0 * math.factorial(r - 2))
    return value


def limit_constant(alpha: float, r: int) -> float:
    """Limit of ``xi_r / n``: ``alpha**(r-1) Gamma(1+a) / (2 Gamma(r+a))``, ``a = alpha/(alpha-1)``.

    At alpha = 2 this is ``2**(r-1) / (r+1)!``.
    """
    _check_alpha(alpha)
    if r < 2:
        raise ValueError(f"need r >= 2, got {r}")
    a = alpha / (alpha - 1.0)
    return math.exp(
        (r - 1) * math.log(alpha) + math.lgamma(1.0 + a) - math.lgamma(r + a) - math.log(2.0)
    )


def kingman_limit_constant(r: int) -> float:
    return 2.0 ** (r - 1) / math.factorial(r + 1)


def limit_constant_quadrature(alpha: float, r: int) -> float:
    """The limit as ``alpha**(r-1) / (2 (r-2)!) * int_0^1 u**(r-2) (1-u)**a du``,
    integrated numerically after the substitution ``u = t / (1 + t)``."""
    _check_alpha(alpha)
    a = alpha / (alpha - 1.0)
    value, _ = integrate.quad(
        lambda u: u ** (r - 2) * (1.0 - u) ** a, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200
    )
    return alpha ** (r - 1) / (2.0 * math.factorial(r - 2)) * value


@dataclass(frozen=True)
class TheoryCurve:
    """Bundle of the deterministic limits for one ``alpha``."""

    alpha: float
    r_max: int

    def __post_init__(self):
        _check_alpha(self.alpha)

    def x(self, r: int, t: float) -> float:
        return x_r(self.alpha, r, t)

    def x_up(self, r: int, t: float) -> float:
        return x_up(self.alpha, r, t)

    def drift(self, state) -> np.ndarray:
        return drift_field(self.alpha, state)

    def limits(self) -> dict[int, float]:
        return {r: limit_constant(self.alpha, r) for r in range(2, self.r_max + 1)}
