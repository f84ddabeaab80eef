"""Iterative multimodal fusion experiments (C++ core)."""

try:
    from . import _profusion as _impl  # wheel layout
except ImportError:
    import _profusion as _impl  # build-tree layout

_names = [
    "__version__",
    "ProfusionError",
    "ConfigError",
    "ExperimentConfig",
    "CommandResult",
    "RobustnessCurve",
    "load_config",
    "parse_config",
    "run_command",
    "run_and_write",
    "robust_auc",
    "minmax_scale",
    "derive_trial_seeds",
]
globals().update({n: getattr(_impl, n) for n in _names})
__all__ = [n for n in _names if not n.startswith("__")]
