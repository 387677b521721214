"""Forward-pass latency and memory comparison: joint model vs three singles.

The joint network computes the shared encoder once per frame where three
single-task networks compute it three times, so its frame time should beat
the sum of the three. Absolute numbers depend on the machine and are
reported for information only, together with a hardware descriptor.
"""

from __future__ import annotations

import platform
import statistics
import threading
import time
from dataclasses import dataclass

import psutil
import torch
from torch import nn

from ..network import NetworkConfig, TASKS, build_single_task_model


@dataclass(frozen=True)
class ModelTiming:
    name: str
    median_ms: float
    fps: float
    peak_rss_mb: float


@dataclass(frozen=True)
class BenchReport:
    resolution: tuple[int, int]
    iterations: int
    warmup: int
    hardware: str
    joint: ModelTiming
    singles: tuple[ModelTiming, ...]
    singles_sum_ms: float
    speedup: float       # singles_sum / joint median

    def summary(self) -> str:
        lines = [
            f"resolution {self.resolution[0]}x{self.resolution[1]}, "
            f"{self.iterations} iterations ({self.warmup} warmup)",
            f"hardware: {self.hardware}",
            f"{'model':20s} {'median ms':>10s} {'fps':>8s} {'peak RSS MB':>12s}",
        ]
        for t in (self.joint, *self.singles):
            lines.append(f"{t.name:20s} {t.median_ms:10.2f} {t.fps:8.2f} "
                         f"{t.peak_rss_mb:12.1f}")
        lines.append(f"{'singles summed':20s} {self.singles_sum_ms:10.2f} "
                     f"{1000.0 / self.singles_sum_ms:8.2f}")
        lines.append(f"joint is {self.speedup:.2f}x faster than running "
                     "the three tasks separately")
        return "\n".join(lines)


class _RssSampler:
    """Background sampling of the process RSS high-water mark."""

    def __init__(self, interval: float = 0.005):
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        proc = psutil.Process()
        while not self._stop.is_set():
            self.peak = max(self.peak, proc.memory_info().rss)
            time.sleep(self.interval)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()


def hardware_descriptor() -> str:
    return (f"{platform.platform()}, {platform.processor() or platform.machine()}, "
            f"{torch.get_num_threads()} torch threads, torch {torch.__version__}")


def time_forward(model: nn.Module, name: str, resolution: tuple[int, int],
                 iterations: int, warmup: int) -> ModelTiming:
    model.eval()
    images = torch.rand(1, 3, resolution[0], resolution[1],
                        generator=torch.Generator().manual_seed(0))
    times = []
    with torch.no_grad(), _RssSampler() as sampler:
        for _ in range(warmup):
            model(images)
        for _ in range(iterations):
            started = time.perf_counter()
            model(images)
            times.append((time.perf_counter() - started) * 1000.0)
    median = statistics.median(times)
    return ModelTiming(name=name, median_ms=median, fps=1000.0 / median,
                       peak_rss_mb=sampler.peak / 1e6)


def benchmark_speed(joint_model: nn.Module,
                    single_models: dict[str, nn.Module] | None,
                    resolution: tuple[int, int],
                    iterations: int = 100, warmup: int = 10) -> BenchReport:
    """Measure the joint model against the three single-task models.

    When no single-task checkpoints are given, fresh models with the joint
    model's recipe are built; latency does not depend on trained weights.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if resolution[0] % 8 or resolution[1] % 8:
        raise ValueError("resolution must be a multiple of 8")
    if single_models is None:
        config: NetworkConfig = joint_model.config
        single_models = {task: build_single_task_model(config, task)
                         for task in TASKS}

    joint = time_forward(joint_model, "joint", resolution, iterations, warmup)
    singles = tuple(
        time_forward(model, f"single:{task}", resolution, iterations, warmup)
        for task, model in single_models.items())
    singles_sum = sum(t.median_ms for t in singles)
    return BenchReport(
        resolution=resolution,
        iterations=iterations,
        warmup=warmup,
        hardware=hardware_descriptor(),
        joint=joint,
        singles=singles,
        singles_sum_ms=singles_sum,
        speedup=singles_sum / joint.median_ms,
    )
