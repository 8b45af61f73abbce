"""lsvx: small-time expansions for stochastic-volatility models with Levy jumps."""

__version__ = "0.1.0"

from lsvx.config import RunConfig
from lsvx.errors import (
    ConfigError,
    ContractError,
    DomainError,
    LsvxError,
    ModelConditionError,
    NumericError,
    UnsupportedModelError,
)
from lsvx.expansions import (
    EvaluationForm,
    Expansion,
    ExpansionKind,
    PayoffKind,
    PayoffSpec,
    SVCorrectionReport,
    call_expansion_itm,
    call_expansion_otm,
    density_expansion,
    evaluate,
    exp_levy_expansion,
    expand_payoff,
    general_payoff_expansion,
    measure_transform,
    normalize,
    sv_correction_terms,
    tail_expansion,
)
from lsvx.generators import (
    DerivativeOracle,
    GeneratorKind,
    GrowthTag,
    SVCoefficientTable,
    SVModel,
    apply_generator,
    iterated_generator_at,
    l1_power,
    sv_coefficients,
)
from lsvx.levy_kernel import (
    GridConfig,
    LevyDensity,
    SplitLevyModel,
    TruncationScheme,
    build_truncation,
    split_levy,
)
from lsvx.oracles import (
    CharExponent,
    MCConfig,
    MCEstimate,
    Scheme,
    coefficient_fit,
    convergence_slope,
    fourier_call,
    fourier_density,
    fourier_put,
    mc_call,
    mc_tail,
    simulate_z,
)
from lsvx.smile import (
    BSQuote,
    bs_asymptotic,
    bs_price,
    implied_vol,
    iv_first_order,
    iv_second_order,
)
from lsvx.verify import CriterionResult, VerifyContext, VerifyReport, run_criteria

__all__ = [
    "__version__",
    # Errors
    "LsvxError",
    "ConfigError",
    "ModelConditionError",
    "DomainError",
    "ContractError",
    "UnsupportedModelError",
    "NumericError",
    # Levy kernel
    "LevyDensity",
    "TruncationScheme",
    "build_truncation",
    "GridConfig",
    "SplitLevyModel",
    "split_levy",
    # Generators
    "DerivativeOracle",
    "GrowthTag",
    "GeneratorKind",
    "l1_power",
    "iterated_generator_at",
    "apply_generator",
    "SVModel",
    "SVCoefficientTable",
    "sv_coefficients",
    # Expansions
    "ExpansionKind",
    "EvaluationForm",
    "Expansion",
    "PayoffKind",
    "PayoffSpec",
    "normalize",
    "evaluate",
    "tail_expansion",
    "call_expansion_otm",
    "call_expansion_itm",
    "general_payoff_expansion",
    "expand_payoff",
    "density_expansion",
    "exp_levy_expansion",
    "measure_transform",
    "sv_correction_terms",
    "SVCorrectionReport",
    # Smile
    "BSQuote",
    "bs_price",
    "bs_asymptotic",
    "implied_vol",
    "iv_first_order",
    "iv_second_order",
    # Oracles
    "MCConfig",
    "MCEstimate",
    "Scheme",
    "simulate_z",
    "mc_tail",
    "mc_call",
    "CharExponent",
    "fourier_call",
    "fourier_put",
    "fourier_density",
    "coefficient_fit",
    "convergence_slope",
    # Config and verification
    "RunConfig",
    "CriterionResult",
    "VerifyReport",
    "VerifyContext",
    "run_criteria",
]
