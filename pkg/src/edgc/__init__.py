"""Entropy-driven dynamic gradient compression at desk scale.

Library layout:
    matrix_core   dense matrix primitives and exact spectral oracles
    compressor    rank-r power-iteration compression with error feedback
    entropy       gradient down-sampling and entropy estimation
    rank_model    spectral rank/error model and its inversions
    controller    comm calibration, rank bounds, warm-up, window adjustment,
                  stage alignment
    pipeline_sim  deterministic 1F1B pipeline communication timeline
    grad_source   trace replay, synthetic streams, toy data-parallel trainer
    cli           reproducible experiment runner
"""

from .compressor import (
    CompressorState,
    LowRankFactors,
    compress,
    compressed_element_count,
    decompress,
    set_rank,
)
from .controller import (
    CommModel,
    RankBounds,
    RankControllerState,
    RankDecision,
    adjust_rank_window,
    align_stage_ranks,
    calibrate_comm_model,
    clamp_rank_step,
    compute_rank_bounds,
    warmup_step,
)
from .entropy import (
    EntropyTracker,
    EntropyWindow,
    SamplerConfig,
    close_window,
    entropy_gaussian_plugin,
    entropy_histogram,
    relative_change_rate,
    should_sample_iteration,
    subsample_entries,
)
from .errors import (
    CalibrationError,
    CompressionInfeasibleError,
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    EdgcError,
    TraceFormatError,
)
from .grad_source import (
    CompressionPolicy,
    SynthSchedule,
    ToyDataConfig,
    ToyModelConfig,
    TrainResult,
    replay_trace,
    synth_stream,
    train_toy,
    write_trace,
)
from .matrix_core import (
    GradientMatrix,
    frobenius_norm,
    optimal_rank_r_error,
    pearson_correlation,
)
from .pipeline_sim import PipelineConfig, StageTiming, TimelineReport, simulate_iteration, simulate_training
from .rank_model import (
    GTable,
    MpSupport,
    build_g_table,
    estimate_g,
    g_table,
    invert_g,
    mp_cdf,
    mp_support,
    rank_from_entropy,
    rank_from_sigma,
    sample_eigenvalues,
)

__version__ = "0.1.0"
