"""Buffer-free continual learning for streaming time series.

A variational encoder maps each look-back window to a latent initial state,
a learned ODE evolves it over the window's (possibly irregular) timestamps,
and an LSTM over the same window is fused in before the forecast head.  The
model is warmed up offline on a short prefix and then updated online, one
prequential step per incoming row, without any replay buffer.
"""

from .data import (TimeSeriesDataset, cutout_irregular, load_csv, make_windows, select_task,
                   split_chronological, synthesize)
from .drift import AdwinDetector, annotate_report, detect_drifts
from .errors import (CheckpointError, ConfigMismatchError, ContractError, DataError, DimensionError,
                     NumericError, OdeStreamError)
from .model import ModelConfig, OdeStreamModel, OnlineState, checkpoint_load, checkpoint_save
from .pipeline import RunConfig, run_experiment
from .report import MetricsTable, cumulative_mse, emit_outputs, measure_resources, rolling_mse_trace
from .stream import StreamReport, StreamStep, run_naive_baseline, run_stream, run_stream_irregular
from .training import WarmupConfig, kl_loss, l1_loss, warmup_train

__version__ = "0.1.0"
