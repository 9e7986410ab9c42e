"""Large-``b`` limits of the merger rates and a validator comparing against them.

Every check evaluates a finite-``b`` quantity at block counts ``round(b * x)``
for ``x`` in a grid, and records the supremum over the grid of its distance
to the limit, one value per ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import LambdaMeasure
from .tables import cached_rate_table, lambda_bk

CHECKS = ("block_rate", "total_rate", "first_moment", "second_moment")


@dataclass
class RateCheck:
    name: str
    b_grid: list[int]
    deviations: list[float]
    note: str = ""

    @property
    def decreasing(self) -> bool:
        d = self.deviations
        return all(later < earlier for earlier, later in zip(d, d[1:]))

    @property
    def nonincreasing(self) -> bool:
        d = self.deviations
        return all(later <= earlier for earlier, later in zip(d, d[1:]))


@dataclass
class ValidatorReport:
    measure: str
    applicable: bool
    checks: dict[str, RateCheck] = field(default_factory=dict)
    reason: str = ""

    def rows(self):
        """Flat ``(check, b, deviation, decreasing)`` rows for tabular output."""
        for name, check in self.checks.items():
            for b, dev in zip(check.b_grid, check.deviations):
                yield name, b, dev, check.decreasing


def block_rate_limit(measure: LambdaMeasure, k: int, x: float) -> float:
    """Limit of ``b**(k-alpha) lambda_{bx,k}``: ``A_Lambda Gamma(k-alpha) x**(alpha-k)``."""
    a = measure.alpha
    return measure.A_Lambda * math.gamma(k - a) * x ** (a - k)


def total_rate_limit(measure: LambdaMeasure, x: float) -> float:
    a = measure.alpha
    return measure.A_Lambda * math.gamma(2.0 - a) / a * x**a


def first_moment_limit(measure: LambdaMeasure, x: float) -> float:
    a = measure.alpha
    return measure.A_Lambda * math.gamma(2.0 - a) / (a - 1.0) * x**a


def second_moment_limit(measure: LambdaMeasure, x: float) -> float:
    """Limit of ``b**-2 sum_k k(k-1) C(bx,k) lambda_{bx,k}``.

    The binomial identity ``sum_k k(k-1) C(b,k) p**k (1-p)**(b-k) = b(b-1) p**2``
    makes the finite sum exactly ``b(b-1) Lambda[0,1]``.
    """
    return measure.total_mass * x**2


def printed_second_moment_limit(measure: LambdaMeasure, x: float) -> float:
    """``A_Lambda x**(2(alpha-1)) / (2-alpha)``, to be paired with ``b**(-2(alpha-1))``."""
    a = measure.alpha
    return measure.A_Lambda * x ** (2.0 * (a - 1.0)) / (2.0 - a)


def _block_count(b: int, x: float) -> int:
    return max(2, int(round(b * x)))


def asymptotic_validator(
    measure: LambdaMeasure,
    b_grid,
    x_grid=(0.25, 0.5, 1.0),
    ks=(2,),
) -> ValidatorReport:
    """Deviation of each finite-``b`` rate functional from its large-``b`` limit.

    Checks: ``block_rate[k=..]`` (``b**(k-alpha) lambda_{bx,k}``),
    ``total_rate`` and ``first_moment`` (normalised by ``b**alpha``) and
    ``second_moment`` (normalised by ``b**2``).  The report also carries
    ``second_moment_b2alpha``, the second moment normalised by
    ``b**(2(alpha-1))``, which diverges; it is informational only.
    """
    b_grid = [int(b) for b in b_grid]
    report = ValidatorReport(measure.spec(), applicable=not measure.is_kingman)
    if measure.is_kingman:
        report.reason = "not applicable: the rate limits hold for alpha in (1, 2), Kingman has alpha = 2"
        return report
    if any(b < 2 for b in b_grid):
        raise ValueError("every b in the grid must be at least 2")
    x_grid = [float(x) for x in x_grid]
    if any(not 0.0 < x <= 1.0 for x in x_grid):
        raise ValueError("x values must lie in (0, 1]")
    a = measure.alpha

    for k in ks:
        devs = []
        for b in b_grid:
            sup = 0.0
            for x in x_grid:
                bx = _block_count(b, x)
                if bx < k:
                    continue
                value = b ** (k - a) * lambda_bk(measure, bx, k)
                sup = max(sup, abs(value - block_rate_limit(measure, k, bx / b)))
            devs.append(sup)
        report.checks[f"block_rate[k={k}]"] = RateCheck(
            f"block_rate[k={k}]", b_grid, devs,
            note=f"limit without the 1/k factor; the divided form differs by a factor {k}",
        )

    totals, firsts, seconds, printed = [], [], [], []
    for b in b_grid:
        sup_t = sup_f = sup_s = sup_p = 0.0
        for x in x_grid:
            bx = _block_count(b, x)
            xe = bx / b
            table = cached_rate_table(measure, bx)
            sup_t = max(sup_t, abs(table.total_rate / b**a - total_rate_limit(measure, xe)))
            sup_f = max(sup_f, abs(table.first_moment / b**a - first_moment_limit(measure, xe)))
            m2 = table.second_factorial_moment
            sup_s = max(sup_s, abs(m2 / b**2 - second_moment_limit(measure, xe)))
            sup_p = max(
                sup_p, abs(m2 / b ** (2.0 * (a - 1.0)) - printed_second_moment_limit(measure, xe))
            )
        totals.append(sup_t)
        firsts.append(sup_f)
        seconds.append(sup_s)
        printed.append(sup_p)
    report.checks["total_rate"] = RateCheck("total_rate", b_grid, totals)
    report.checks["first_moment"] = RateCheck("first_moment", b_grid, firsts)
    report.checks["second_moment"] = RateCheck(
        "second_moment", b_grid, seconds,
        note="normalised by b**2 with limit Lambda[0,1] x**2",
    )
    report.checks["second_moment_b2alpha"] = RateCheck(
        "second_moment_b2alpha", b_grid, printed,
        note="normalised by b**(2(alpha-1)); expected to grow with b",
    )
    return report


def estimate_A_Lambda(measure: LambdaMeasure, ps=(1e-2, 1e-4, 1e-6, 1e-8)) -> np.ndarray:
    """``f(p) / p**(1-alpha)`` along ``ps``; should approach ``A_Lambda``."""
    return np.array([measure.pdf(p) / p ** (1.0 - measure.alpha) for p in ps])
