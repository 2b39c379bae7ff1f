"""Cascaded cross-modal transformer: token fusion of two text modalities
and audio, trained with a self-contained reverse-mode autodiff engine."""

from .attention import (
    CrossAttentionParams,
    ResidualMode,
    ccmt_block_forward,
    multi_head_cross_attention,
    scaled_dot_attention,
)
from .baselines import FusionKind, majority_vote, mlp_fusion_forward, vanilla_transformer_fusion
from .data import (
    Dataset,
    DatasetHeader,
    DatasetSplit,
    SyntheticSpec,
    export_class_embeddings,
    gen_synthetic,
    iter_dataset,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .errors import (
    CCMTError,
    DataFormatError,
    DivergenceError,
    FiniteDifferenceError,
    ModelFormatError,
    ShapeError,
    ValidationError,
)
from .model import (
    CCMTConfig,
    CCMTModel,
    build_model,
    forward,
    load_model,
    parameter_count,
    predict,
    save_model,
)
from .tensor import (
    AdamState,
    Parameter,
    Tensor,
    adam_step,
    backward,
    finite_diff_grad,
    layer_norm,
    matmul,
    softmax_rows,
    zero_grads,
)
from .tokens import (
    Modality,
    ModalityTokens,
    SampleRecord,
    UniformTokenSet,
    assemble,
    mix_seed,
    select_variant,
    uniformize,
)
from .train import (
    GradCheckReport,
    MetricsReport,
    TrainConfig,
    evaluate,
    grad_check_model,
    metrics_from_confusion,
    train,
)

__version__ = "0.1.0"
