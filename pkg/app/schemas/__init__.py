from .run_config import (
    InversionConfig,
    MomentConfig,
    PairConfig,
    PotentialConfig,
    ResonanceConfig,
    RunConfig,
    RunSection,
    TraceConfig,
)

__all__ = [
    "RunConfig", "RunSection",
    "PotentialConfig", "PairConfig", "ResonanceConfig",
    "TraceConfig", "MomentConfig", "InversionConfig",
]
