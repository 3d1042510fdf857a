"""Supervised video hashing with category-masked Hamming retrieval."""

from .dataset import (
    Dataset,
    FrameSet,
    IntraPair,
    Video,
    generate_synthetic,
    load_dataset,
    sample_frame_set,
    sample_intra_pair,
    save_dataset,
    split,
)
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    MaskHashError,
    NumericError,
    SamplingError,
    SplitError,
    TrainingError,
)
from .estimator import CategoryMaskHasher
from .evaluation import MetricReport, average_precision, map_hamming, ratio_sweep
from .index import PackedIndex, build_index, load_index, masked_hamming, pack, query, save_index
from .mask import CategoryMask, bit_contribution, build_mask, category_vector
from .model import Architecture, ModelParams, binarize, forward, init_params, predict_class
from .training import LossBreakdown, TrainConfig, backward, grad_check, total_loss, train

__version__ = "0.1.0"
