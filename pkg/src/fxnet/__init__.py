"""Neural modelling of time-varying audio effects with gated TCNs and TFiLM."""

from .models import ModelSpec, PRESETS, assemble, describe, param_count, preset, receptive_field

__all__ = ["ModelSpec", "PRESETS", "assemble", "describe", "param_count", "preset", "receptive_field"]
__version__ = "0.1.0"
