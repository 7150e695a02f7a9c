"""Sampling, likelihood and precision tooling for masked diffusion models."""

__version__ = "0.1.0"

from .core import (
    FactorizedPredictor,
    FunctionPredictor,
    NoiseSchedule,
    Predictor,
    SampleTrace,
    TemperedPredictor,
    TimeInterpolatedPredictor,
    UniformPredictor,
    Vocabulary,
    all_mask,
    apply_temperature,
    cosine_schedule,
    get_schedule,
    linear_schedule,
    mask_count,
    power_schedule,
    schedule_alpha,
    schedule_alpha_inv,
)
from .estimators import MaskedDiffusionSampler
from .gumbel import (
    BINARY32,
    BINARY64,
    M_BINARY32,
    M_BINARY64,
    PrecisionMode,
    gumbel_max_categorical,
    max_gumbel_for_precision,
    sample_truncated_gumbel,
    truncated_argmax_probs,
)
from .oracle import (
    ExactDistribution,
    ToyDistribution,
    make_toy,
    optimal_predictor,
    order_enum_distribution,
    total_variation,
)
from .samplers import DecodingSchedule, SamplerConfig, sample

__all__ = [name for name in dir() if not name.startswith("_")]
