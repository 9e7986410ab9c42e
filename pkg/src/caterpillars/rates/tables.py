"""Merger rates: single rates, per-block-count tables and merger-size draws.

All products ``C(b, k) * lambda_{b,k}`` are formed in log space; ``b`` in the
hundreds of thousands would overflow the binomial coefficients otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import betaln, gammaln, logsumexp

from .measures import BETA, DENSITY, KINGMAN, LambdaMeasure, QuadratureError, RateDomainError

DEFAULT_TAIL_EPS = 1e-12
DEFAULT_QUAD_TOL = 1e-10
# Geometric tail domination applies once successive block rates shrink by this factor.
TAIL_RATIO = 0.5


def _check_bk(b: int, k: int) -> None:
    if b < 2:
        raise RateDomainError(f"need b >= 2, got b={b}")
    if not 2 <= k <= b:
        raise RateDomainError(f"need 2 <= k <= b, got k={k}, b={b}")


def log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _log_density_integral(
    measure: LambdaMeasure, j: int, m: int, tol: float = DEFAULT_QUAD_TOL
) -> float:
    """log of the integral of ``p**j (1-p)**m f(p)`` over (0, 1), for the unscaled f.

    On (0, 1/2] the substitution ``p = u**(1/(2-alpha))`` turns
    ``f(p) dp`` into ``f(p) p**(alpha-1) du / (2-alpha)``, which is bounded.
    The integrand is divided by its peak value so that tiny rates at large
    ``b`` do not underflow.
    """
    alpha = measure.alpha
    f = measure.density
    if j + m > 0:
        peak = j / (j + m)
        shift = (j * math.log(peak) if j else 0.0) + (m * math.log1p(-peak) if m else 0.0)
    else:
        peak, shift = 0.0, 0.0

    def kernel(p):
        out = -shift
        if j:
            out += j * math.log(p)
        if m:
            out += m * math.log1p(-p)
        return math.exp(out)

    def head_integrand(u):
        if u <= 0.0:
            return 0.0 if j else kernel(0.0) * _regular_part_at_zero(measure)
        p = u ** (1.0 / (2.0 - alpha))
        return kernel(p) * f(p) * p ** (alpha - 1.0)

    def tail_integrand(p):
        if p >= 1.0:
            return 0.0
        return kernel(p) * f(p)

    u_split = 0.5 ** (2.0 - alpha)
    head_points = [peak ** (2.0 - alpha)] if 0.0 < peak < 0.5 else None
    tail_points = [peak] if 0.5 < peak < 1.0 else None
    total = 0.0
    for func, lo, hi, points, weight in (
        (head_integrand, 0.0, u_split, head_points, 1.0 / (2.0 - alpha)),
        (tail_integrand, 0.5, 1.0, tail_points, 1.0),
    ):
        value, err, info, *rest = integrate.quad(
            func, lo, hi, epsabs=0.0, epsrel=tol, limit=400, points=points, full_output=1
        )
        achieved = err / abs(value) if value else math.inf
        if rest and achieved > 10 * tol:
            raise QuadratureError(f"lambda quadrature for j={j}, m={m}: {rest[0].splitlines()[0]}", achieved)
        total += weight * value
    if total <= 0.0:
        return -math.inf
    return shift + math.log(total)


def _regular_part_at_zero(measure: LambdaMeasure) -> float:
    return measure.A_Lambda / measure.scale


def log_lambda_bk(measure: LambdaMeasure, b: int, k: int, tol: float = DEFAULT_QUAD_TOL) -> float:
    """Natural log of ``lambda_{b,k}``; ``-inf`` when the rate vanishes."""
    _check_bk(b, k)
    if measure.kind == KINGMAN:
        return math.log(measure.scale) if k == 2 else -math.inf
    log_scale = math.log(measure.scale)
    a = measure.alpha
    if measure.kind == BETA:
        return float(betaln(k - a, b - k + a) - betaln(2.0 - a, a)) + log_scale
    return _log_density_integral(measure, k - 2, b - k, tol) + log_scale


def lambda_bk(measure: LambdaMeasure, b: int, k: int, tol: float = DEFAULT_QUAD_TOL) -> float:
    """Rate at which ``k`` given blocks merge when ``b`` blocks are present.

    >>> lambda_bk(LambdaMeasure.beta(1.5), 3, 2)
    0.75
    """
    return math.exp(log_lambda_bk(measure, b, k, tol))


@dataclass(frozen=True, eq=False)
class RateTable:
    """Block rates ``C(b, k) lambda_{b,k}`` for one block count ``b``.

    ``log_block_rates[i]`` belongs to ``k = 2 + i``.  When the table was
    truncated, ``tail_mass`` bounds the probability of the omitted sizes and
    ``total_rate`` includes that bound.
    """

    b: int
    log_block_rates: np.ndarray
    total_rate: float
    tail_mass: float
    first_moment: float
    second_factorial_moment: float
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        weights = np.exp(self.log_block_rates - self.log_block_rates.max())
        cdf = np.cumsum(weights)
        object.__setattr__(self, "_cdf", cdf / cdf[-1])

    @property
    def k_max(self) -> int:
        return 1 + len(self.log_block_rates)

    @property
    def ks(self) -> np.ndarray:
        return np.arange(2, self.k_max + 1)

    @property
    def size_probabilities(self) -> np.ndarray:
        """Probability of each merger size ``k = 2..k_max``; sums to ``1 - tail_mass``."""
        return np.exp(self.log_block_rates - math.log(self.total_rate))

    def block_rate(self, k: int) -> float:
        if not 2 <= k <= self.b:
            raise RateDomainError(f"need 2 <= k <= b, got k={k}")
        if k > self.k_max:
            return 0.0
        return math.exp(self.log_block_rates[k - 2])

    def draw_size(self, u: float) -> int:
        """Inverse-CDF draw of the merger size, conditional on the kept sizes."""
        return 2 + min(int(np.searchsorted(self._cdf, u, side="right")), len(self._cdf) - 1)


def _truncation_index(log_terms: np.ndarray, tail_eps: float) -> tuple[int, float]:
    """Number of terms to keep and an upper bound on the omitted ones (linear units
    relative to ``exp(log_terms.max())``).

    The tail after a kept term is dominated geometrically once the successive
    ratio is below ``TAIL_RATIO`` and no larger than the ratio before it.
    """
    n = len(log_terms)
    if tail_eps <= 0.0 or n < 3:
        return n, 0.0
    top = log_terms.max()
    terms = np.exp(log_terms - top)
    running = np.cumsum(terms)
    log_ratio = np.diff(log_terms)
    ratio = np.exp(log_ratio)
    # ratio[i] links term i to term i+1; keep through i+1, bound what follows.
    decreasing = np.empty_like(ratio, dtype=bool)
    decreasing[0] = False
    decreasing[1:] = ratio[1:] <= ratio[:-1]
    candidates = np.nonzero((ratio < TAIL_RATIO) & decreasing)[0]
    for i in candidates:
        if i + 2 >= n:
            break
        bound = terms[i + 1] * ratio[i] / (1.0 - ratio[i])
        if bound < tail_eps * running[i + 1]:
            return i + 2, float(bound)
    return n, 0.0


def _table_from_log_terms(b: int, log_terms: np.ndarray, tail_eps: float) -> RateTable:
    keep, bound = _truncation_index(log_terms, tail_eps)
    log_terms = np.ascontiguousarray(log_terms[:keep])
    ks = np.arange(2, keep + 2)
    top = log_terms.max()
    kept = float(np.exp(logsumexp(log_terms)))
    tail = bound * math.exp(top)
    total = kept + tail
    first = float(np.exp(logsumexp(log_terms + np.log(ks))))
    second = float(np.exp(logsumexp(log_terms + np.log(ks) + np.log(ks - 1))))
    return RateTable(b, log_terms, total, tail / total, first, second)


def _density_log_terms(measure: LambdaMeasure, b: int, tail_eps: float) -> np.ndarray:
    """Block rates by quadrature, streaming in ``k`` so truncation saves work."""
    log_scale = math.log(measure.scale)
    out = []
    running = 0.0
    top = -math.inf
    prev_ratio = math.inf
    for k in range(2, b + 1):
        lt = float(log_binom(b, k)) + _log_density_integral(measure, k - 2, b - k) + log_scale
        out.append(lt)
        if lt > top:
            running = running * math.exp(top - lt) if running else 0.0
            top = lt
        running += math.exp(lt - top)
        if tail_eps > 0.0 and len(out) >= 3:
            ratio = math.exp(out[-1] - out[-2])
            if ratio < TAIL_RATIO and ratio <= prev_ratio:
                bound = math.exp(out[-1] - top) * ratio / (1.0 - ratio)
                if bound < tail_eps * running and k < b:
                    break
            prev_ratio = ratio
    return np.array(out)


def block_log_rates(measure: LambdaMeasure, b: int) -> np.ndarray:
    """``log(C(b, k) lambda_{b,k})`` for ``k = 2..b`` (no truncation)."""
    if b < 2:
        raise RateDomainError(f"need b >= 2, got b={b}")
    ks = np.arange(2, b + 1, dtype=float)
    if measure.kind == KINGMAN:
        out = np.full(len(ks), -np.inf)
        out[0] = float(log_binom(b, 2)) + math.log(measure.scale)
        return out
    if measure.kind == BETA:
        a = measure.alpha
        log_first = math.log(beta_block_rate_pair(a, b)) + math.log(measure.scale)
        k = ks[:-1]
        log_ratio = np.log(b - k) + np.log(k - a) - np.log(k + 1) - np.log(b - k - 1 + a)
        out = np.empty(len(ks))
        out[0] = log_first
        out[1:] = log_first + np.cumsum(log_ratio)
        return out
    return _density_log_terms(measure, b, 0.0)


def build_rate_table(
    measure: LambdaMeasure, b: int, tail_eps: float = DEFAULT_TAIL_EPS
) -> RateTable:
    """Build the table of block rates, total rate and moments at block count ``b``."""
    if b < 2:
        raise RateDomainError(f"need b >= 2, got b={b}")
    if not 0.0 <= tail_eps <= 1e-6:
        raise RateDomainError(f"tail_eps must lie in [0, 1e-6], got {tail_eps}")
    if measure.kind == KINGMAN:
        log_rate = float(log_binom(b, 2)) + math.log(measure.scale)
        rate = math.exp(log_rate)
        return RateTable(b, np.array([log_rate]), rate, 0.0, 2.0 * rate, 2.0 * rate)
    if measure.kind == DENSITY:
        return _table_from_log_terms(b, _density_log_terms(measure, b, tail_eps), tail_eps)
    return _table_from_log_terms(b, block_log_rates(measure, b), tail_eps)


@lru_cache(maxsize=4096)
def cached_rate_table(
    measure: LambdaMeasure, b: int, tail_eps: float = DEFAULT_TAIL_EPS
) -> RateTable:
    """Memoised :func:`build_rate_table`; tables are immutable and safe to share."""
    return build_rate_table(measure, b, tail_eps)


def rate_moment(measure: LambdaMeasure, b: int, order: int) -> float:
    """``sum_k k C(b,k) lambda_{b,k}`` (order 1) or ``sum_k k(k-1) C(b,k) lambda_{b,k}`` (order 2)."""
    if order not in (1, 2):
        raise RateDomainError(f"order must be 1 or 2, got {order}")
    table = cached_rate_table(measure, b)
    return table.first_moment if order == 1 else table.second_factorial_moment


# B_{2n} / (2n (2n-1)) for the Stirling series of log Gamma.
_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360, 1 / 156, -3617 / 122400)
_SHIFT_TO = 20.0


def gamma_ratio(z: float, s: float) -> float:
    """``Gamma(z + s) / Gamma(z)`` for ``z > 0`` and ``z + s > 0``.

    Accurate to a few ulps for all ``z``: small ``z`` is shifted up by the
    recurrence, then the difference of Stirling series is taken with
    ``log1p``/``expm1`` so nothing cancels.  ``scipy.special.poch`` drifts to
    about 1e-11 relative error for ``z`` in the thousands.
    """
    if not (z > 0.0 and z + s > 0.0):
        raise RateDomainError(f"gamma_ratio needs z > 0 and z + s > 0, got z={z}, s={s}")
    prod = 1.0
    while z < _SHIFT_TO:
        prod *= z / (z + s)
        z += 1.0
    ratio = s / z
    l1 = math.log1p(ratio)
    # (z+s-1/2) log(z+s) - (z-1/2) log z - s, with log(z+s) = log z + l1
    log_val = (z + s - 0.5) * l1 - s + s * math.log(z)
    zpow = 1.0 / z
    z2 = zpow * zpow
    for n, c in enumerate(_STIRLING, start=1):
        log_val += c * zpow * math.expm1((1 - 2 * n) * l1)
        zpow *= z2
    return math.exp(log_val) * prod


def beta_total_rate(alpha: float, b: int) -> float:
    """Closed-form total merger rate of the unit Beta(2 - alpha, alpha) measure.

    Summing ``C(b,k) B(k-alpha, b-k+alpha) / B(2-alpha, alpha)`` over ``k``
    with the convolution ``(1-z)**alpha (1-z)**(-alpha) = 1`` gives
    ``(b-1) Gamma(b+alpha-1) / (alpha Gamma(alpha) Gamma(b))``.
    """
    return (b - 1) * gamma_ratio(b, alpha - 1.0) / (alpha * math.gamma(alpha))


def beta_block_rate_pair(alpha: float, b: int) -> float:
    """``C(b, 2) lambda_{b,2}`` for the unit Beta(2 - alpha, alpha) measure."""
    return 0.5 * b * (b - 1) * gamma_ratio(b, alpha - 2.0) / math.gamma(alpha)


class MergerLaw:
    """Total merger rate and merger-size draws as used by the simulation engines.

    Sizes are drawn from the unit-scale measure, so measures that differ only
    in ``scale`` produce bit-identical size sequences from the same uniforms.
    """

    def __init__(self, measure: LambdaMeasure, tail_eps: float = DEFAULT_TAIL_EPS):
        self.measure = measure
        self.scale = measure.scale
        self.unit = measure.unscaled()
        self.tail_eps = tail_eps

    def unit_total_rate(self, b: int) -> float:
        return cached_rate_table(self.unit, b, self.tail_eps).total_rate

    def total_rate(self, b: int) -> float:
        return self.scale * self.unit_total_rate(b)

    def draw_size(self, b: int, u: float) -> int:
        if b == 2:
            return 2
        return cached_rate_table(self.unit, b, self.tail_eps).draw_size(u)


class KingmanLaw(MergerLaw):
    def unit_total_rate(self, b: int) -> float:
        return 0.5 * b * (b - 1)

    def draw_size(self, b: int, u: float) -> int:
        return 2


class BetaLaw(MergerLaw):
    """Beta(2 - alpha, alpha) sizes by a sequential inverse-CDF walk.

    Successive block rates satisfy ``t(k+1) / t(k) = (b-k)(k-alpha) /
    ((k+1)(b-k-1+alpha))``, so a draw costs O(k) and needs no table; the
    expected size stays bounded as ``b`` grows.
    """

    def __init__(self, measure: LambdaMeasure, tail_eps: float = DEFAULT_TAIL_EPS):
        super().__init__(measure, tail_eps)
        self.alpha = measure.alpha

    def unit_total_rate(self, b: int) -> float:
        return _beta_constants(self.alpha, b)[0]

    def draw_size(self, b: int, u: float) -> int:
        if b == 2:
            return 2
        a = self.alpha
        total, term = _beta_constants(a, b)
        target = u * total
        acc = term
        k = 2
        while acc < target and k < b:
            term *= (b - k) * (k - a) / ((k + 1) * (b - k - 1 + a))
            k += 1
            acc += term
        return k


@lru_cache(maxsize=1 << 20)
def _beta_constants(alpha: float, b: int) -> tuple[float, float]:
    return beta_total_rate(alpha, b), beta_block_rate_pair(alpha, b)


def merger_law(measure: LambdaMeasure, tail_eps: float = DEFAULT_TAIL_EPS) -> MergerLaw:
    if measure.kind == KINGMAN:
        return KingmanLaw(measure, tail_eps)
    if measure.kind == BETA:
        return BetaLaw(measure, tail_eps)
    return MergerLaw(measure, tail_eps)


def gamma_sum_closed_form(alpha: float, b: int, order: int) -> float:
    """Closed forms of ``sum_{k=2}^b k**order Gamma(k-alpha) / Gamma(k+1)``.

    order 0: ``Gamma(2-alpha)/alpha - Gamma(b+1-alpha) / (alpha Gamma(b+1))``
    order 1: ``Gamma(2-alpha)/(alpha-1) - Gamma(b-alpha+1) b (b+1) / ((alpha-1) Gamma(b+2))``
    """
    if not 1.0 < alpha < 2.0:
        raise RateDomainError(f"alpha must lie strictly inside (1, 2), got {alpha}")
    if b < 2:
        raise RateDomainError(f"need b >= 2, got b={b}")
    g = math.gamma(2.0 - alpha)
    if order == 0:
        return g / alpha - math.exp(math.lgamma(b + 1.0 - alpha) - math.lgamma(b + 1.0)) / alpha
    if order == 1:
        tail = math.exp(math.lgamma(b - alpha + 1.0) - math.lgamma(b + 2.0)) * b * (b + 1)
        return (g - tail) / (alpha - 1.0)
    raise RateDomainError(f"order must be 0 or 1, got {order}")


def gamma_sum_terms(alpha: float, b: int, order: int) -> float:
    """Left-hand side of :func:`gamma_sum_closed_form`, summed term by term."""
    if order not in (0, 1):
        raise RateDomainError(f"order must be 0 or 1, got {order}")
    return math.fsum(
        k**order * math.exp(math.lgamma(k - alpha) - math.lgamma(k + 1.0)) for k in range(2, b + 1)
    )


def write_rate_dump(measure: LambdaMeasure, bs, fh, tail_eps: float = DEFAULT_TAIL_EPS) -> None:
    """CSV rows ``b,k,lambda_bk,log_block_rate`` for each block count in ``bs``."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["b", "k", "lambda_bk", "log_block_rate"])
    for b in bs:
        table = cached_rate_table(measure, int(b), tail_eps)
        for k, lr in zip(table.ks, table.log_block_rates):
            lam = math.exp(lr - float(log_binom(b, k)))
            writer.writerow([int(b), int(k), repr(lam), repr(float(lr))])
