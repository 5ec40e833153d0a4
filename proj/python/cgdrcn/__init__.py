# SPDX-License-Identifier: Apache-2.0
"""Confidence-guided deep residual crowd counting."""

from ._cgdrcn import (
    AnnotationError,
    CheckpointError,
    Model,
    TrainError,
    __version__,
    dataset_stats,
    density_band,
    density_map,
    level_scale,
    mae_mse,
    pyramid_targets,
    run_cli,
    synth_scene,
)
from ._cgdrcn import evaluate as _evaluate
from ._cgdrcn import train as _train


def train(model, data, settings=None):
    """Trains `model` in place on a dataset directory.

    `settings` maps config-file keys to values, e.g. ``{"max_steps": 10, "crop_size": 64}``.
    """
    return _train(model, str(data), _settings(settings))


def evaluate(model, data, split="test", settings=None):
    """Per-category MAE/MSE report for one split of a dataset directory."""
    return _evaluate(model, str(data), split, _settings(settings))


def _settings(settings):
    return {str(k): _format(v) for k, v in (settings or {}).items()}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


__all__ = [
    "AnnotationError",
    "CheckpointError",
    "Model",
    "TrainError",
    "__version__",
    "dataset_stats",
    "density_band",
    "density_map",
    "evaluate",
    "level_scale",
    "mae_mse",
    "pyramid_targets",
    "run_cli",
    "synth_scene",
    "train",
]
