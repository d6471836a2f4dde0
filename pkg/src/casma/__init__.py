"""Systematic-review automation and random-effects meta-analysis of risk ratios."""

__version__ = "0.1.0"

from .effects import EffectEstimate, log_risk_ratio, split_control  # noqa: E402
from .meta import PooledResult, pool_random_effects  # noqa: E402

__all__ = ["EffectEstimate", "PooledResult", "log_risk_ratio", "pool_random_effects", "split_control", "__version__"]
