from .anderson import AndersonState, anderson_coefficients, anderson_solve, anderson_update
from .pd import (
    ContractionError,
    Operators,
    PDConfig,
    PDNets,
    default_steps,
    hybrid_reconstruct,
    init_pd_nets,
    init_postproc_net,
    make_operators,
    mcpd_reconstruct,
    pd_step,
    pddeq_backward,
    pddeq_forward,
    postprocess_reconstruct,
)
from .train import METHODS, TrainConfig, TrainingAborted, TrainResult, reconstruct, train

__all__ = [
    "AndersonState",
    "ContractionError",
    "METHODS",
    "Operators",
    "PDConfig",
    "PDNets",
    "TrainConfig",
    "TrainResult",
    "TrainingAborted",
    "anderson_coefficients",
    "anderson_solve",
    "anderson_update",
    "default_steps",
    "hybrid_reconstruct",
    "init_pd_nets",
    "init_postproc_net",
    "make_operators",
    "mcpd_reconstruct",
    "pd_step",
    "pddeq_backward",
    "pddeq_forward",
    "postprocess_reconstruct",
    "reconstruct",
    "train",
]
