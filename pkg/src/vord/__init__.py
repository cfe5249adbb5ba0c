"""vord: ordinal contrastive decoding and an ordinal margin loss for
vision-conditioned token models.

The package keeps two next-token distributions per generation step, one from
the clean image and one from a corrupted copy, and either masks tokens whose
corrupted confidence overtakes their clean confidence by more than a margin
(decoding) or penalizes them with a hinge objective (training).  The margin
can adapt to how far the corruption moved the image in embedding space.
A desk-scale synthetic benchmark makes the behavior measurable end to end.
"""

from .core import (
    ImageTensor,
    LogitsVector,
    RngSeed,
    TokenDistribution,
    Vocabulary,
    as_generator,
    normalize,
    softmax,
)
from .errors import VordError
from .corruption import CorruptionSpec, common_corruption, corrupt, diffusion_noise, mixup, sample_lambda
from .vision import ToyPatchEncoder, VisualEmbedding, VisualEncoder, adaptive_margin, mean_pool
from .decoding import (
    ConditionalModel,
    DecodeConfig,
    GenerationTrace,
    StepOutcome,
    StepRecord,
    generate,
    ordinal_mask,
    plausibility_set,
    sample,
    vord_step,
)
from .loss import (
    LossConfig,
    TrainExample,
    TrainResult,
    TrainState,
    TrainableModel,
    batch_loss,
    cross_entropy,
    loss_gradient,
    prepare_batch,
    total_loss,
    train,
    vord_penalty,
)
from .calibration import (
    BinaryMetrics,
    CalibrationReport,
    PredictionRecord,
    answer_confidence,
    binary_metrics,
    ece,
)
from .image_io import load_image, read_ppm, read_vten, write_ppm, write_vten
from . import harness

__version__ = "0.1.0"

__all__ = [
    "ImageTensor", "LogitsVector", "RngSeed", "TokenDistribution", "Vocabulary",
    "as_generator", "normalize", "softmax", "VordError",
    "CorruptionSpec", "common_corruption", "corrupt", "diffusion_noise", "mixup", "sample_lambda",
    "ToyPatchEncoder", "VisualEmbedding", "VisualEncoder", "adaptive_margin", "mean_pool",
    "ConditionalModel", "DecodeConfig", "GenerationTrace", "StepOutcome", "StepRecord",
    "generate", "ordinal_mask", "plausibility_set", "sample", "vord_step",
    "LossConfig", "TrainExample", "TrainResult", "TrainState", "TrainableModel",
    "batch_loss", "cross_entropy", "loss_gradient", "prepare_batch", "total_loss",
    "train", "vord_penalty",
    "BinaryMetrics", "CalibrationReport", "PredictionRecord",
    "answer_confidence", "binary_metrics", "ece",
    "load_image", "read_ppm", "read_vten", "write_ppm", "write_vten",
    "harness",
]
