"""Inference-latency and training-throughput microbenchmarks.

Latency runs on synthetic random batches so the numbers isolate compute from
disk I/O.  The headline statistic is the median; mean and p95 are reported
alongside, raw per-iteration samples are retained so every statistic can be
re-derived.  Reports always embed batch size, thread count, backend, and a
hardware descriptor so numbers are never compared across machines silently.

Published comparison rows (ResNet18, VGG16 and the reference timings for the
two custom models) are rendered as clearly labeled literature values; this
package never measures those architectures.
"""

import json
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import backend, train as train_mod
from .data import ArrayDataset
from .errors import ConfigError
from .models import build, published_count_note
from .train import TrainConfig, fit

# reference ms/batch at batch 128 from the published comparison, reported
# verbatim and never asserted against local measurements
LITERATURE_MS_PER_BATCH = {
    "Br35H": {"BTBCNN": 0.9, "BTMCNN": 1.2, "ResNet18": 3.8, "VGG16": 2.8},
    "Brain Tumor MRI": {"BTBCNN": 0.9, "BTMCNN": 1.4, "ResNet18": 4.0,
                        "VGG16": 2.8},
}

# reference training wall-clock, 50 epochs on the multi-class MRI dataset
LITERATURE_TRAIN_SECONDS = {"BTMCNN": 550.37, "ResNet18": 569.48,
                            "VGG16": 2474.92}


@dataclass(frozen=True)
class BenchConfig:
    batch_size: int = 128
    warmup: int = 2
    measured: int = 10
    threads: int = 1
    input_size: int = 224

    def __post_init__(self):
        if self.measured < 5:
            raise ConfigError(f"measured iterations must be >= 5, got {self.measured}")
        if self.warmup < 1:
            raise ConfigError(f"warmup iterations must be >= 1, got {self.warmup}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def hardware_descriptor(threads):
    bits = [platform.platform(), f"python {platform.python_version()}",
            f"numpy {np.__version__}", f"cpus {os.cpu_count()}",
            f"threads {threads}", f"kernels {backend.active_name()}"]
    return "; ".join(bits)


@dataclass
class LatencyEntry:
    model: str
    batch_size: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    ms_per_image: float
    param_count: int
    threads: int
    hardware: str
    samples_ms: list = field(default_factory=list)
    source: str = "measured"

    def to_dict(self):
        return {"model": self.model, "batch_size": self.batch_size,
                "mean_ms": self.mean_ms, "median_ms": self.median_ms,
                "p95_ms": self.p95_ms, "ms_per_image": self.ms_per_image,
                "param_count": self.param_count, "threads": self.threads,
                "hardware": self.hardware, "samples_ms": self.samples_ms,
                "source": self.source}


def _check_not_training():
    if train_mod.ENGINE_BUSY:
        raise ConfigError(
            "benchmarks own the process; refusing to run while a training "
            "loop is active in this invocation")


def time_inference(model, config, seed=0):
    """Measure eval-mode forward latency on synthetic batches."""
    _check_not_training()
    was_training = model.training
    model.set_mode(False)
    try:
        rng = np.random.Generator(np.random.PCG64(seed))
        s = model.spec
        x = rng.random((config.batch_size, s.in_channels, s.input_size,
                        s.input_size), dtype=np.float32)
        for _ in range(config.warmup):
            model.forward(x)
        samples = []
        for _ in range(config.measured):
            t0 = time.perf_counter()
            model.forward(x)
            samples.append((time.perf_counter() - t0) * 1000.0)
    finally:
        model.set_mode(was_training)
    arr = np.asarray(samples)
    median = float(np.median(arr))
    return LatencyEntry(
        model=s.kind, batch_size=config.batch_size,
        mean_ms=float(arr.mean()), median_ms=median,
        p95_ms=float(np.percentile(arr, 95)),
        ms_per_image=median / config.batch_size,
        param_count=model.param_count(), threads=config.threads,
        hardware=hardware_descriptor(config.threads),
        samples_ms=[float(v) for v in samples])


@dataclass
class TrainingBench:
    model: str
    epochs: int
    n_train: int
    batch_size: int
    seconds: float
    epoch_seconds: list
    threads: int
    hardware: str

    def to_dict(self):
        return {"model": self.model, "epochs": self.epochs,
                "n_train": self.n_train, "batch_size": self.batch_size,
                "seconds": self.seconds, "epoch_seconds": self.epoch_seconds,
                "threads": self.threads, "hardware": self.hardware,
                "source": "measured"}


def time_training(spec, epochs, config, n_train=64, lr=5e-4, seed=0):
    """Wall-clock a full training loop on a synthetic dataset."""
    _check_not_training()
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.random((n_train, spec.in_channels, spec.input_size,
                    spec.input_size), dtype=np.float32)
    n_classes = max(spec.num_classes, 2)
    y = rng.integers(0, n_classes, size=n_train)
    ds = ArrayDataset(x, y, [f"class{i}" for i in range(n_classes)])
    model = build(spec, seed)
    tc = TrainConfig(lr=lr, epochs=epochs, batch_size=config.batch_size,
                     seed=seed, eval_every=0)
    t0 = time.perf_counter()
    history = fit(model, ds, tc)
    wall = time.perf_counter() - t0
    return TrainingBench(model=spec.kind, epochs=epochs, n_train=n_train,
                         batch_size=config.batch_size, seconds=wall,
                         epoch_seconds=[s.seconds for s in history],
                         threads=config.threads,
                         hardware=hardware_descriptor(config.threads))


def literature_entries():
    """Published ms/batch rows, marked source="literature"."""
    out = []
    for dataset, rows in LITERATURE_MS_PER_BATCH.items():
        for name, ms in rows.items():
            out.append({"model": name, "dataset": dataset,
                        "ms_per_batch": ms, "batch_size": 128,
                        "source": "literature"})
    return out


@dataclass
class BenchReport:
    entries: list                 # LatencyEntry objects
    literature: list
    config: BenchConfig

    def to_dict(self):
        return {"config": {"batch_size": self.config.batch_size,
                           "warmup": self.config.warmup,
                           "measured": self.config.measured,
                           "threads": self.config.threads,
                           "input_size": self.config.input_size},
                "measured": [e.to_dict() for e in self.entries],
                "literature": self.literature}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self):
        lines = ["| model | source | ms/batch (median) | ms/batch (mean) "
                 "| p95 | ms/image | params |",
                 "| --- | --- | --- | --- | --- | --- | --- |"]
        for e in self.entries:
            lines.append(
                f"| {e.model} | measured (batch {e.batch_size}, "
                f"threads {e.threads}) | {e.median_ms:.2f} | {e.mean_ms:.2f} "
                f"| {e.p95_ms:.2f} | {e.ms_per_image:.4f} | {e.param_count} |")
        for row in self.literature:
            lines.append(
                f"| {row['model']} ({row['dataset']}) | literature value, "
                f"not measured here | {row['ms_per_batch']:.1f} | | | | |")
        if self.entries:
            lines.append("")
            lines.append(f"hardware: {self.entries[0].hardware}")
        for e in self.entries:
            note = published_count_note(e.model, e.param_count)
            if note:
                lines.append("")
                lines.append(note)
        return "\n".join(lines) + "\n"


def run_latency_suite(specs_and_seeds, config):
    """time_inference over several models plus the literature rows."""
    entries = [time_inference(build(spec, seed), config, seed=seed)
               for spec, seed in specs_and_seeds]
    return BenchReport(entries=entries, literature=literature_entries(),
                       config=config)


def compare_kernel_backends(iters=5, seed=0):
    """Median runtimes of each kernel under every available backend.

    Also records the max absolute difference of each backend's outputs
    against the numpy reference (expected to be exactly zero).
    """
    _check_not_training()
    from . import kernels_numpy
    impls = {"numpy": kernels_numpy}
    try:
        from . import kernels_numba
        impls["numba"] = kernels_numba
    except ImportError:
        pass

    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.random((8, 32, 56, 56), dtype=np.float32)
    cols_ref = kernels_numpy.im2col(x, 3, 1, 1)
    dy_pool = rng.random((8, 32, 28, 28), dtype=np.float32)
    _, idx_ref = kernels_numpy.maxpool2x2(x)

    cases = {
        "im2col": lambda k: k.im2col(x, 3, 1, 1),
        "col2im": lambda k: k.col2im(cols_ref, 56, 56, 3, 1, 1),
        "maxpool2x2": lambda k: k.maxpool2x2(x)[0],
        "maxpool2x2_backward": lambda k: k.maxpool2x2_backward(
            dy_pool, idx_ref, 56, 56),
    }
    rows = []
    for kernel, call in cases.items():
        ref = call(kernels_numpy)
        for name, mod in impls.items():
            out = call(mod)  # first call also pays any JIT compile cost
            samples = []
            for _ in range(iters):
                t0 = time.perf_counter()
                out = call(mod)
                samples.append((time.perf_counter() - t0) * 1000.0)
            rows.append({"kernel": kernel, "backend": name,
                         "median_ms": float(np.median(samples)),
                         "max_abs_diff_vs_numpy":
                             float(np.max(np.abs(out - ref)))})
    return rows
