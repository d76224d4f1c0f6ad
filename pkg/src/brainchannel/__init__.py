"""Frequency-domain MIMO channel estimation for paired multichannel recordings.

The pipeline: bandpass both recordings, segment them into symbols, DFT each
symbol, group symbols into frames, and estimate a per-frequency channel
matrix per frame by least squares, linear MMSE, or a spatially and temporally
regularized ADMM solver. A synthetic layer generates ground-truth channels so
every estimator can be validated end to end.
"""

from .errors import (
    AlignmentError,
    BrainChannelError,
    ConfigError,
    DegenerateInputError,
    InsufficientDataError,
    InvalidEdgeError,
    InvalidInputError,
    InvalidRecipeError,
    InvalidSpecError,
    NumericError,
    ShapeError,
)
from .frontend import (
    BandpassSpec,
    FrequencyFrame,
    Recording,
    SegmentationPlan,
    assemble_frames,
    bandpass_filter,
    dft_symbol,
    frames_from_recordings,
    load_recording,
    read_recording_csv,
    save_recording,
    segment,
)
from .graph import (
    ElectrodeGraph,
    complete_graph,
    graph_from_edge_list,
    graph_from_positions,
    load_edge_list,
    preset_graph,
    save_edge_list,
    smoothness_penalty,
    ten_twenty_17_montage,
)
from .estimators import (
    AdmmState,
    ChannelMatrix,
    ChannelTensor,
    StareConfig,
    estimate_ls,
    estimate_mmse,
    estimate_sequence,
    load_tensor,
    save_tensor,
    stare_frame,
    stare_objective,
)
from .synthetic import (
    FrequencyDomainRecipe,
    SyntheticChannelSpec,
    SyntheticDataset,
    TimeDomainData,
    TimeDomainRecipe,
    ToneSpec,
    gen_channel,
    gen_dataset,
    gen_frames,
    gen_time_domain,
    load_recipe,
    truth_tensor_for_plan,
)
from .evaluation import (
    ComparisonResult,
    MseReport,
    SweepResult,
    aggregate_mse_avg,
    compare_estimators,
    comparison_from_means,
    evaluate_tensor,
    mse_frequency,
    percent_reduction,
    sweep_symbol_length,
)

__version__ = "0.1.0"
