from .adam import Adam
from .checkpoint import CheckpointError, flow_from_bytes, flow_to_bytes, load_flow, save_flow
from .made import LOG_SCALE_BOUND, MadeBlock, made_masks
from .maf import ConditionalFlow
from .train import TrainConfig, TrainingDivergedError, TrainingReport, train_flow


def flow_log_density(flow, x, ctx=None):
    return flow.log_density(x, ctx)


def flow_sample(flow, ctx=None, rng=None, n=None):
    return flow.sample(ctx, rng, n)


def flow_logdensity_grad(flow, x, ctx=None):
    """Mean log-density of the batch and its gradient w.r.t. the flat parameters."""
    return flow.log_density_grad(x, ctx)


__all__ = [
    "Adam", "CheckpointError", "ConditionalFlow", "LOG_SCALE_BOUND", "MadeBlock", "TrainConfig",
    "TrainingDivergedError", "TrainingReport", "flow_from_bytes", "flow_log_density",
    "flow_logdensity_grad", "flow_sample", "flow_to_bytes", "load_flow", "made_masks",
    "save_flow", "train_flow",
]
