"""Python bindings for the rcil core library."""

from ._rcil import (
    Config,
    ConfigError,
    Error,
    ablate,
    ablation_axes,
    pcd_loss,
    report,
    run,
    verify,
)

__all__ = [
    "Config",
    "ConfigError",
    "Error",
    "ablate",
    "ablation_axes",
    "pcd_loss",
    "report",
    "run",
    "verify",
]
