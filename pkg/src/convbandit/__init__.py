"""Contextual bandits with a convolutional reward model and gradient UCB."""

from .baselines import (
    FcTopology,
    KernelUcbState,
    LinUcbState,
    fc_forward_gradient,
    init_fc_params,
    kernelucb_new,
    kernelucb_select,
    kernelucb_step,
    kernelucb_update,
    linucb_new,
    linucb_scores,
    linucb_select,
    linucb_update,
)
from .bench import ExperimentConfig, RoundRecord, run_experiment, summarize
from .bounds import BoundReport, ExploreConfig, theory_bounds
from .cnn import (
    CnnParams,
    ForwardTrace,
    GradientVec,
    TrainingHistory,
    batch_forward,
    forward,
    init_params,
    loss,
    network_gradient,
    param_distance,
    train_gd,
)
from .data import (
    BanditRound,
    LabeledImageSet,
    SyntheticTask,
    build_round,
    classification_stream,
    load_cifar10,
    load_idx,
    normalize_unit_frobenius,
    synthetic_stream,
)
from .ntk import cntk_kernel, cntk_predict, effective_dimension, gram_matrix
from .precision import (
    PrecisionState,
    new_state,
    ridge_theta_hat,
    update_state,
    width,
    widths,
)
from .theory import (
    RunArtifacts,
    SweepReport,
    construct_theta_star,
    logdet_report,
    width_sweep,
)
from .topology import Grid, Line, NetTopology, extract_patches
from .ucb import UcbScore, psi1, score_arm, score_arms, select_arm

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
