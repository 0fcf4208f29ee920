"""Single-view depth CNN trained without depth labels through a stereo reconstruction loss."""

from . import kernels
from .baseline import HSConfig, ProxyLabel, hs_stereo, make_proxy_labels, train_proxy_supervised
from .dataio import (
    SceneFamily,
    StereoSample,
    SyntheticSceneSpec,
    augment,
    generate_synthetic_pair,
    load_image,
    make_dataset,
    normalize,
    resize_for_stage,
)
from .encoder import NetworkConfig, StageDescriptor, build_network, grow_stage
from .errors import (
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    NumericError,
    SpecError,
    UnsupDepthError,
    UsageError,
)
from .evalkit import MetricsReport, compute_metrics, error_heatmap, evaluation_protocol
from .geometry import (
    Calibration,
    disparity_to_depth,
    inverse_warp,
    linearized_warp,
    photometric_loss,
    smoothness_loss,
    total_loss,
)
from .tensor import Tape, Tensor, backward, default_dtype
from .trainer import OptimizerConfig, TrainConfig, Trainer, lr_schedule, sgd_step

__version__ = "0.1.0"
