"""Learnable spectral probing of contextual embedding sequences."""

__version__ = "0.1.0"

from .analysis import (
    OverlapMatrix,
    SpectralProfile,
    average_profile,
    export_profile,
    extract_profile,
    overlap,
    overlap_matrix,
)
from .dataset import Dataset, EmbeddingSequence, TaskKind
from .dct import dct2, dct2_matrix, idct2, idct2_matrix
from .errors import FormatError, SpecprobeError, TrainingDivergedError, ValidationError
from .fileio import (
    load_checkpoint,
    read_checkpoint,
    read_dataset,
    save_checkpoint,
    write_dataset,
)
from .filters import (
    BANDS,
    FilterBand,
    SpectralFilter,
    adapt_filter,
    adapt_filter_backward,
    apply_filter,
    band_weights,
)
from .probe import LinearProbe, ProbeModel, forward, loss_and_grads, predict_accuracy
from .synthetic import SyntheticSpec, gen_synthetic
from .training import DEFAULT_SEEDS, TrainConfig, TrainReport, adam_step, run_multiseed, train
