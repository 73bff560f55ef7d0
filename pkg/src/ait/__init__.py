"""Forecasting toolkit for irregular multivariate time series.

The model embeds each variable's ragged observation series through a
time-adaptive linear layer, fuses a learnable static embedding, attends
across variables with Transformer blocks, and decodes values at
arbitrary query times with a second adaptive linear layer.  Everything
runs on a small float64 tensor core with taped reverse-mode
differentiation and a finite-difference oracle for verification.
"""

from .alinear import (
    ALinearInput,
    ALinearParams,
    alinear_forward,
    embed_keys,
    embed_queries,
    export_weight_matrix,
    init_alinear,
)
from .data import (
    Batch,
    Dataset,
    GeneratorConfig,
    NormStats,
    QuerySet,
    Sample,
    VariableSeries,
    apply_norm,
    fit_norm,
    generate_synthetic,
    load_dataset,
    make_batches,
    save_dataset,
    split,
)
from .evaluation import MetricsReport, TimingReport, evaluate, metric_mae, metric_mse, time_run
from .model import (
    AiTConfig,
    AiTModel,
    MeanBaseline,
    PredictionOutput,
    StaticLinearModel,
    baseline_mean,
    baseline_static_linear,
    forward,
    mse_loss,
)
from .numerics import (
    ParameterSet,
    Tape,
    Tensor,
    backward,
    check_gradients,
    finite_diff_grad,
)
from .training import AdamState, TrainConfig, TrainReport, adam_step, cosine_lr, fit

__version__ = "0.1.0"
