"""Lambda measures, merger rates and their large-``b`` asymptotics."""

from .asymptotics import (
    RateCheck,
    ValidatorReport,
    asymptotic_validator,
    estimate_A_Lambda,
)
from .measures import (
    BETA,
    DENSITY,
    KINGMAN,
    BetaDensity,
    LambdaMeasure,
    PurePower,
    QuadratureError,
    RateDomainError,
    parse_measure,
)
from .tables import (
    DEFAULT_TAIL_EPS,
    MergerLaw,
    RateTable,
    beta_total_rate,
    build_rate_table,
    cached_rate_table,
    gamma_sum_closed_form,
    gamma_sum_terms,
    lambda_bk,
    log_lambda_bk,
    merger_law,
    rate_moment,
    write_rate_dump,
)

__all__ = [
    "BETA",
    "DENSITY",
    "KINGMAN",
    "DEFAULT_TAIL_EPS",
    "BetaDensity",
    "LambdaMeasure",
    "RateCheck",
    "MergerLaw",
    "PurePower",
    "QuadratureError",
    "RateDomainError",
    "RateTable",
    "ValidatorReport",
    "asymptotic_validator",
    "beta_total_rate",
    "build_rate_table",
    "cached_rate_table",
    "estimate_A_Lambda",
    "gamma_sum_closed_form",
    "gamma_sum_terms",
    "lambda_bk",
    "log_lambda_bk",
    "merger_law",
    "parse_measure",
    "rate_moment",
    "write_rate_dump",
]
