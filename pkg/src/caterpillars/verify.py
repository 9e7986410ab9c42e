"""Property suite behind ``caterpillars verify``: engine equivalence on small
n, exact rate identities, the rate recursion, time-change invariance and
the drift integrator."""

from __future__ import annotations

from dataclasses import dataclass

from .census import run_totals
from .oracle import census_replay, definition_flags, run_oracle
from .rates import LambdaMeasure, gamma_sum_closed_form, gamma_sum_terms, lambda_bk, merger_law
from .rates.measures import PurePower
from .theory import integrate_drift, limit_constant, limit_constant_quadrature

IDENTITY_ALPHAS = (1.1, 1.25, 1.5, 1.75, 1.9)
DRIFT_ALPHAS = (1.25, 1.5, 1.75, 2.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def equivalence_mismatches(n: int, measure: LambdaMeasure, runs: int, seed: int = 0) -> int:
    """Runs whose census-rule classification differs from the definition on
    some block of the simulated history."""
    law = merger_law(measure)
    bad = 0
    for replica in range(runs):
        history = run_oracle(n, law, seed, replica)
        _, category = census_replay(history, n)
        if category != definition_flags(history):
            bad += 1
    return bad


def check_equivalence(small_n: int, runs: int, seed: int = 0) -> CheckResult:
    total = bad = 0
    for measure in (LambdaMeasure.kingman(), LambdaMeasure.beta(1.5)):
        for n in range(2, small_n + 1):
            bad += equivalence_mismatches(n, measure, runs, seed)
            total += runs
    return CheckResult(
        "engine_equivalence", bad == 0, f"{bad} mismatching runs of {total} (n <= {small_n})"
    )


def check_gamma_sums(b_max: int = 1000, alphas=IDENTITY_ALPHAS, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for alpha in alphas:
        for b in range(2, b_max + 1):
            for order in (0, 1):
                closed = gamma_sum_closed_form(alpha, b, order)
                terms = gamma_sum_terms(alpha, b, order)
                worst = max(worst, abs(closed - terms) / abs(terms))
    return CheckResult("gamma_sum_identities", worst <= tol, f"max relative error {worst:.3e}")


def pascal_measures():
    return (
        LambdaMeasure.kingman(),
        LambdaMeasure.beta(1.5),
        LambdaMeasure.with_density(1.5, PurePower(1.5)),
    )


def pascal_worst(measure: LambdaMeasure, b_max: int) -> float:
    """Largest relative violation of ``l(b,k) = l(b+1,k) + l(b+1,k+1)`` over
    ``2 <= k <= b < b_max``; Kingman rows are zero beyond k = 2."""
    rows = {b: [0.0, 0.0] + [lambda_bk(measure, b, k) for k in range(2, b + 1)] for b in range(2, b_max + 1)}
    worst = 0.0
    for b in range(2, b_max):
        upper = rows[b + 1]
        for k in range(2, b + 1):
            lhs = rows[b][k]
            rhs = upper[k] + upper[k + 1]
            scale = max(abs(lhs), abs(rhs))
            if scale > 0.0:
                worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def check_pascal(b_max: int = 200, tol: float = 1e-9) -> list[CheckResult]:
    out = []
    for measure in pascal_measures():
        worst = pascal_worst(measure, b_max)
        out.append(CheckResult(f"pascal[{measure.kind}]", worst <= tol, f"max relative error {worst:.3e}"))
    return out


def check_time_change(seeds=range(20), n: int = 500, r_max: int = 6, factor: float = 7.3) -> CheckResult:
    base = LambdaMeasure.beta(1.5)
    scaled = LambdaMeasure.beta(1.5, factor)
    bad = sum(
        run_totals(n, base, r_max, seed).xi != run_totals(n, scaled, r_max, seed).xi for seed in seeds
    )
    return CheckResult("time_change_invariance", bad == 0, f"{bad} differing seeds of {len(seeds)}")


def check_drift(T: float = 5.0, step: float = 1e-4, r_max: int = 5, tol: float = 1e-6) -> CheckResult:
    worst = max(integrate_drift(alpha, r_max, T, step).sup_error for alpha in DRIFT_ALPHAS)
    return CheckResult("drift_integrator", worst <= tol, f"sup error {worst:.3e}")


def check_limit_quadrature(r_values=range(2, 8), tol: float = 1e-8) -> CheckResult:
    worst = max(
        abs(limit_constant(alpha, r) - limit_constant_quadrature(alpha, r))
        for alpha in DRIFT_ALPHAS
        for r in r_values
    )
    return CheckResult("limit_constant_quadrature", worst <= tol, f"max error {worst:.3e}")


def run_suite(small_n: int = 8, runs: int = 1000, seed: int = 0, fast: bool = False) -> list[CheckResult]:
    """Every check; ``fast`` shrinks the identity and drift grids."""
    results = [check_equivalence(small_n, runs, seed)]
    results.append(check_gamma_sums(b_max=200 if fast else 1000))
    results.extend(check_pascal(b_max=60 if fast else 200))
    results.append(check_time_change(seeds=range(seed, seed + (5 if fast else 20))))
    results.append(check_drift(T=1.0 if fast else 5.0, step=1e-3 if fast else 1e-4, tol=1e-6))
    results.append(check_limit_quadrature())
    return results


def all_passed(results) -> bool:
    return bool(results) and all(res.passed for res in results)
