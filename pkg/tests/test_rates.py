import io
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caterpillars.rates import (
    BetaDensity,
    LambdaMeasure,
    PurePower,
    RateDomainError,
    asymptotic_validator,
    beta_total_rate,
    build_rate_table,
    cached_rate_table,
    estimate_A_Lambda,
    gamma_sum_closed_form,
    gamma_sum_terms,
    lambda_bk,
    log_lambda_bk,
    merger_law,
    parse_measure,
    rate_moment,
    write_rate_dump,
)
from caterpillars.rates.tables import beta_block_rate_pair

from exact_oracles import beta15_rate, mp_beta_rate, mp_pure_power_rate, mp_total_rate

BETA15 = LambdaMeasure.beta(1.5)
KING = LambdaMeasure.kingman()
POWER15 = LambdaMeasure.with_density(1.5, PurePower(1.5))


# --- measures -------------------------------------------------------------


def test_kingman_constants():
    m = LambdaMeasure.kingman(2.5)
    assert m.alpha == 2.0 and m.A_Lambda == 2.5 and m.total_mass == 2.5
    assert m.is_kingman


def test_beta_constants_match_gamma_formula():
    for a in (1.1, 1.5, 1.9):
        m = LambdaMeasure.beta(a, 3.0)
        assert m.total_mass == pytest.approx(3.0)
        assert m.A_Lambda == pytest.approx(3.0 / (math.gamma(2 - a) * math.gamma(a)), rel=1e-14)


def test_density_measure_mass_by_quadrature():
    m = LambdaMeasure.with_density(1.5, PurePower(1.5))
    assert m.total_mass == pytest.approx(2.0, rel=1e-12)
    m = LambdaMeasure.with_density(1.3, BetaDensity(1.3))
    assert m.total_mass == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("alpha", [1.0, 2.5, -1.0, float("nan")])
def test_beta_rejects_alpha_outside_domain(alpha):
    with pytest.raises(RateDomainError):
        LambdaMeasure.beta(alpha)


def test_rejects_nonpositive_scale():
    with pytest.raises(RateDomainError):
        LambdaMeasure.beta(1.5, 0.0)
    with pytest.raises(RateDomainError):
        LambdaMeasure.kingman(-1.0)


@pytest.mark.parametrize(
    "text",
    [
        "kind=kingman",
        "kind=kingman scale=2.0",
        "kind=beta alpha=1.5",
        "kind=beta alpha=1.25 scale=7.3",
        "kind=density alpha=1.5 density=pure_power",
        "kind=density alpha=1.7 density=beta_density",
    ],
)
def test_parse_measure_round_trips_through_spec(text):
    m = parse_measure(text)
    assert parse_measure(m.spec()) == m


@pytest.mark.parametrize(
    "text",
    [
        "kind=beta",
        "kind=beta alpha=1.5 colour=red",
        "kind=weird alpha=1.5",
        "kind=kingman alpha=1.5",
        "kind=density alpha=1.5 density=nope",
        "alpha",
        "kind=beta alpha=1.5 alpha=1.6",
    ],
)
def test_parse_measure_rejects_bad_text(text):
    with pytest.raises(RateDomainError):
        parse_measure(text)


def test_estimate_A_Lambda_converges():
    m = LambdaMeasure.beta(1.5)
    est = estimate_A_Lambda(m)
    errs = np.abs(est - m.A_Lambda)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 1e-6


# --- single rates ---------------------------------------------------------


@pytest.mark.parametrize("b", [2, 3, 5, 10, 30, 60])
def test_beta15_rates_equal_exact_rationals(b):
    for k in range(2, b + 1):
        exact = float(beta15_rate(b, k))
        assert lambda_bk(BETA15, b, k) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("alpha", [1.1, 1.25, 1.75, 1.95])
@pytest.mark.parametrize("b,k", [(2, 2), (7, 3), (50, 2), (50, 50), (200, 17), (1000, 3)])
def test_beta_rates_match_mpmath(alpha, b, k):
    assert lambda_bk(LambdaMeasure.beta(alpha), b, k) == pytest.approx(
        float(mp_beta_rate(alpha, b, k)), rel=1e-12
    )


@pytest.mark.parametrize("b,k", [(2, 2), (6, 4), (40, 2), (40, 40), (150, 9)])
def test_density_rates_by_quadrature_match_mpmath(b, k):
    assert lambda_bk(POWER15, b, k) == pytest.approx(float(mp_pure_power_rate(1.5, b, k)), rel=1e-10)


def test_beta_density_quadrature_matches_closed_form():
    m = LambdaMeasure.with_density(1.4, BetaDensity(1.4))
    closed = LambdaMeasure.beta(1.4)
    for b, k in [(2, 2), (10, 3), (80, 40), (120, 120)]:
        assert lambda_bk(m, b, k) == pytest.approx(lambda_bk(closed, b, k), rel=1e-10)


def test_kingman_rates():
    m = LambdaMeasure.kingman(4.0)
    assert lambda_bk(m, 10, 2) == 4.0
    assert lambda_bk(m, 10, 3) == 0.0
    assert log_lambda_bk(m, 10, 5) == -math.inf


def test_scale_multiplies_rates():
    assert lambda_bk(LambdaMeasure.beta(1.5, 7.3), 20, 4) == pytest.approx(7.3 * lambda_bk(BETA15, 20, 4), rel=1e-14)


@pytest.mark.parametrize("b,k", [(1, 2), (5, 1), (5, 6)])
def test_rate_domain_errors(b, k):
    with pytest.raises(RateDomainError):
        lambda_bk(BETA15, b, k)


def test_two_block_rate_is_total_mass():
    for m in (BETA15, KING, POWER15, LambdaMeasure.beta(1.2, 3.0)):
        assert lambda_bk(m, 2, 2) == pytest.approx(m.total_mass, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(
    alpha=st.floats(1.05, 1.95),
    b=st.integers(2, 400),
    data=st.data(),
)
def test_pascal_recursion_beta(alpha, b, data):
    k = data.draw(st.integers(2, b))
    m = LambdaMeasure.beta(alpha)
    lhs = lambda_bk(m, b, k)
    rhs = lambda_bk(m, b + 1, k) + lambda_bk(m, b + 1, k + 1)
    assert lhs == pytest.approx(rhs, rel=1e-11)


@settings(max_examples=25, deadline=None)
@given(b=st.integers(2, 120), data=st.data())
def test_pascal_recursion_density(b, data):
    k = data.draw(st.integers(2, b))
    lhs = lambda_bk(POWER15, b, k)
    rhs = lambda_bk(POWER15, b + 1, k) + lambda_bk(POWER15, b + 1, k + 1)
    assert lhs == pytest.approx(rhs, rel=1e-9)


# --- totals and tables ----------------------------------------------------


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
@pytest.mark.parametrize("b", [2, 3, 17, 250, 1000])
def test_beta_total_rate_matches_mpmath_sum(alpha, b):
    ref = mp_total_rate(lambda bb, kk: mp_beta_rate(alpha, bb, kk), b)
    assert beta_total_rate(alpha, b) == pytest.approx(float(ref), rel=1e-12)


def test_beta_total_rate_closed_form_at_large_b():
    # (b-1) Gamma(b+alpha-1) / (alpha Gamma(alpha) Gamma(b)) at 40 digits
    a = mpmath.mpf("1.5")
    for b in (10**4, 10**5, 10**6):
        ref = (b - 1) * mpmath.gamma(b + a - 1) / (a * mpmath.gamma(a) * mpmath.gamma(b))
        assert beta_total_rate(1.5, b) == pytest.approx(float(ref), rel=1e-12)


def test_beta_pair_rate_matches_single_rate():
    for b in (2, 10, 1000):
        assert beta_block_rate_pair(1.5, b) == pytest.approx(math.comb(b, 2) * lambda_bk(BETA15, b, 2), rel=1e-12)


@pytest.mark.parametrize("measure", [BETA15, KING, POWER15], ids=["beta", "kingman", "density"])
def test_table_probabilities_sum_to_one(measure):
    table = build_rate_table(measure, 80)
    assert table.size_probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    assert table.tail_mass <= 1e-12


def test_table_total_matches_direct_sum():
    table = build_rate_table(BETA15, 60)
    direct = math.fsum(math.comb(60, k) * lambda_bk(BETA15, 60, k) for k in range(2, 61))
    assert table.total_rate == pytest.approx(direct, rel=1e-12)


def test_beta_tables_keep_every_size():
    # polynomial tails never meet the geometric bound, so nothing is dropped
    table = build_rate_table(LambdaMeasure.beta(1.9), 5000, tail_eps=1e-12)
    assert table.k_max == 5000 and table.tail_mass == 0.0


def test_truncation_bound_on_geometric_terms():
    from caterpillars.rates.tables import _table_from_log_terms

    q = 0.1
    log_terms = np.log(q) * np.arange(200)
    table = _table_from_log_terms(201, log_terms, 1e-12)
    assert table.k_max < 20
    assert 0.0 < table.tail_mass <= 1e-12
    # kept sum plus the bound covers the exact geometric total 1/(1-q)
    assert table.total_rate >= (1.0 - q**200) / (1.0 - q) * (1.0 - 1e-15)
    assert table.total_rate == pytest.approx(1.0 / (1.0 - q), rel=1e-11)


def test_tail_eps_domain():
    with pytest.raises(RateDomainError):
        build_rate_table(BETA15, 10, tail_eps=0.1)


def test_second_factorial_moment_identity():
    # sum_k k(k-1) C(b,k) lambda_{b,k} = b(b-1) Lambda[0,1]
    for m in (BETA15, LambdaMeasure.beta(1.2, 2.0), KING):
        for b in (2, 10, 500):
            assert rate_moment(m, b, 2) == pytest.approx(b * (b - 1) * m.total_mass, rel=1e-10)


def test_rate_moment_orders():
    table = cached_rate_table(BETA15, 40)
    assert rate_moment(BETA15, 40, 1) == table.first_moment
    assert rate_moment(BETA15, 40, 2) == table.second_factorial_moment
    with pytest.raises(RateDomainError):
        rate_moment(BETA15, 40, 3)


def test_table_draw_size_edges():
    table = build_rate_table(BETA15, 30)
    assert table.draw_size(0.0) == 2
    assert table.draw_size(1.0 - 1e-16) == table.k_max


@pytest.mark.parametrize("measure", [BETA15, KING, POWER15], ids=["beta", "kingman", "density"])
def test_merger_law_agrees_with_table(measure):
    law = merger_law(measure)
    rng = np.random.default_rng(5)
    for b in (2, 3, 9, 64):
        table = build_rate_table(measure, b)
        assert law.total_rate(b) == pytest.approx(table.total_rate, rel=1e-12)
        for u in rng.random(200):
            assert law.draw_size(b, float(u)) == table.draw_size(float(u))


def test_merger_law_size_draws_ignore_scale():
    unit = merger_law(BETA15)
    scaled = merger_law(LambdaMeasure.beta(1.5, 7.3))
    for b in (5, 100, 10000):
        assert scaled.total_rate(b) == pytest.approx(7.3 * unit.total_rate(b), rel=1e-14)
        for u in np.linspace(0.0, 0.999, 97):
            assert scaled.draw_size(b, float(u)) == unit.draw_size(b, float(u))


# --- gamma sums -----------------------------------------------------------


@pytest.mark.parametrize("alpha", [1.1, 1.25, 1.5, 1.75, 1.9])
@pytest.mark.parametrize("order", [0, 1])
def test_gamma_sum_closed_forms(alpha, order):
    for b in (2, 3, 10, 100, 1000):
        assert gamma_sum_closed_form(alpha, b, order) == pytest.approx(gamma_sum_terms(alpha, b, order), rel=1e-10)


def test_gamma_sum_matches_mpmath():
    a = mpmath.mpf("1.3")
    ref = mpmath.fsum(mpmath.gamma(k - a) / mpmath.gamma(k + 1) for k in range(2, 301))
    assert gamma_sum_closed_form(1.3, 300, 0) == pytest.approx(float(ref), rel=1e-12)


def test_gamma_sum_domain():
    with pytest.raises(RateDomainError):
        gamma_sum_closed_form(2.0, 10, 0)
    with pytest.raises(RateDomainError):
        gamma_sum_terms(1.5, 10, 2)


# --- dump and validator ---------------------------------------------------


def test_rate_dump_rows():
    fh = io.StringIO()
    write_rate_dump(BETA15, [3, 4], fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "b,k,lambda_bk,log_block_rate"
    assert len(lines) == 1 + 2 + 3
    b, k, lam, lr = lines[1].split(",")
    assert (b, k) == ("3", "2")
    assert float(lam) == pytest.approx(float(beta15_rate(3, 2)), rel=1e-12)
    assert float(lr) == pytest.approx(math.log(3 * float(beta15_rate(3, 2))), rel=1e-12)


def test_validator_not_applicable_to_kingman():
    report = asymptotic_validator(KING, [100, 1000])
    assert not report.applicable and report.checks == {}
    assert "alpha = 2" in report.reason


def test_validator_deviations_shrink():
    report = asymptotic_validator(BETA15, [100, 1000, 10000])
    for name in ("block_rate[k=2]", "total_rate", "first_moment", "second_moment"):
        assert report.checks[name].decreasing, name
    # the b**(2(alpha-1)) normalisation diverges
    printed = report.checks["second_moment_b2alpha"].deviations
    assert printed[0] < printed[1] < printed[2]


def test_validator_second_moment_is_exact_up_to_lattice():
    # m2 / b**2 = (bx)(bx-1)/b**2 exactly, so the deviation is x/b at x = 1
    report = asymptotic_validator(BETA15, [1000], x_grid=(1.0,))
    assert report.checks["second_moment"].deviations[0] == pytest.approx(1e-3, rel=1e-8)


def test_validator_grid_domain():
    with pytest.raises(ValueError):
        asymptotic_validator(BETA15, [1, 10])
    with pytest.raises(ValueError):
        asymptotic_validator(BETA15, [10], x_grid=(0.0,))
