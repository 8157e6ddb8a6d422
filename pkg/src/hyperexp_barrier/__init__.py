"""Barrier options under additive processes with hyper-exponential jumps.

Prices of down-and-in digital and call options are obtained by inverting
multi-dimensional Laplace transforms built from a matrix Wiener-Hopf
factorisation; a Monte Carlo oracle and a bootstrap calibrator complete the
toolkit.
"""

from .exceptions import DomainError, InversionError, ModelError, NumericalFailure
from .model import (
    ModelPeriod,
    PiecewiseModel,
    char_exponent,
    char_function_cumulative,
    laplace_exponent,
    levy_density,
    load_model,
    risk_neutral_drift,
    save_model,
    eurostoxx_levy_model,
    eurostoxx_model,
    validate_model,
)
from .pricing import (
    DIC,
    DID,
    BarrierContract,
    PriceAndGreeks,
    dic_greeks,
    dic_price_grid,
    dic_prices,
    dic_transform,
    did_curve,
    did_greeks,
    did_price,
    did_transform,
    european_call,
)
from .transforms import FrfftPlan, carr_madan_call, frfft, talbot_invert
from .wiener_hopf import assemble_factorization, build_generator, find_roots

__version__ = "0.1.0"

__all__ = [
    "DIC",
    "DID",
    "BarrierContract",
    "DomainError",
    "FrfftPlan",
    "InversionError",
    "ModelError",
    "ModelPeriod",
    "NumericalFailure",
    "PiecewiseModel",
    "PriceAndGreeks",
    "assemble_factorization",
    "build_generator",
    "carr_madan_call",
    "char_exponent",
    "char_function_cumulative",
    "dic_greeks",
    "dic_price_grid",
    "dic_prices",
    "dic_transform",
    "did_curve",
    "did_greeks",
    "did_price",
    "did_transform",
    "european_call",
    "find_roots",
    "frfft",
    "laplace_exponent",
    "levy_density",
    "load_model",
    "risk_neutral_drift",
    "save_model",
    "eurostoxx_levy_model",
    "eurostoxx_model",
    "talbot_invert",
    "validate_model",
]
