"""One-step generative modeling lab: average-velocity fields trained with a
tunable gradient-modulated objective, verified against analytic flow oracles."""

__version__ = "0.1.0"

from .autodiff import (
    Tensor,
    DualTensor,
    Tape,
    ShapeMismatchError,
    as_tensor,
    backward,
    jvp,
    stopgrad,
    sg_lambda,
)
from .field_model import (
    FieldConfig,
    TimeEmbedding,
    VelocityField,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .meanflow_math import (
    AnalyticFlow,
    ConstantFlow,
    HarmonicFlow,
    ReferencePath,
    average_velocity_field,
    average_velocity_oracle,
    consistency_residual,
    identity_residual,
    instantaneous_velocity,
    limit_slope,
    rk4_solve,
    trajectory,
)
from .objectives import (
    ConstantSchedule,
    TimePairConfig,
    TrainingBatch,
    WarmupSchedule,
    build_batch,
    interpolate,
    lambda_at,
    loss_full,
    loss_lambda,
    sample_time_pairs,
    target_velocity,
)
from .sampler_eval import (
    SamplePath,
    SamplePathSet,
    energy_distance,
    few_step_sample,
    one_step_mse,
    one_step_sample,
    path_deviation,
    smoothness,
)
from .tasks import Gmm2dTask, OdeHarmonicTask, PointMassTask, SamplePair
from .trainer import (
    OptimizerState,
    TrainConfig,
    TrainLog,
    adam_step,
    cosine_lr,
    loss_variance,
    train,
)

__all__ = [
    "__version__",
    "Tensor",
    "DualTensor",
    "Tape",
    "ShapeMismatchError",
    "as_tensor",
    "backward",
    "jvp",
    "stopgrad",
    "sg_lambda",
    "FieldConfig",
    "TimeEmbedding",
    "VelocityField",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "AnalyticFlow",
    "ConstantFlow",
    "HarmonicFlow",
    "ReferencePath",
    "average_velocity_field",
    "average_velocity_oracle",
    "consistency_residual",
    "identity_residual",
    "instantaneous_velocity",
    "limit_slope",
    "rk4_solve",
    "trajectory",
    "ConstantSchedule",
    "TimePairConfig",
    "TrainingBatch",
    "WarmupSchedule",
    "build_batch",
    "interpolate",
    "lambda_at",
    "loss_full",
    "loss_lambda",
    "sample_time_pairs",
    "target_velocity",
    "SamplePath",
    "SamplePathSet",
    "energy_distance",
    "few_step_sample",
    "one_step_mse",
    "one_step_sample",
    "path_deviation",
    "smoothness",
    "Gmm2dTask",
    "OdeHarmonicTask",
    "PointMassTask",
    "SamplePair",
    "OptimizerState",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "cosine_lr",
    "loss_variance",
    "train",
]
