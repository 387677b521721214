"""Training, evaluation, inference, benchmarking and plotting."""

from .bench import BenchReport, benchmark_speed
from .evaluation import EvalReport, evaluate, format_report, write_report
from .inference import infer
from .plots import emit_scatter
from .runconfig import RunConfig
from .training import TrainResult, TrainingAbort, train

__all__ = [
    "BenchReport", "EvalReport", "RunConfig", "TrainResult", "TrainingAbort",
    "benchmark_speed", "emit_scatter", "evaluate", "format_report", "infer",
    "train", "write_report",
]
