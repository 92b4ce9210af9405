"""Neural substrate: autodiff tape, model graphs, gradient checks."""

from .model import (  # noqa: F401
    ArchConfig, Batch, HeadPrediction, ModelParams, Trace, backward,
    count_params, forward, forward_batch, init_params, load_checkpoint,
    save_checkpoint,
)
