"""Latency, throughput, and energy measurement.

Protocol per batch size: run ``warmup_batches`` untimed, then time each of
``measured_batches`` with a monotonic clock. Throughput and energy share one
post-warmup window; power is polled on an independent lane at
``power_poll_hz`` and averaged over the samples falling inside the window.

A ``clock`` argument (default ``time.perf_counter``) and an inline sampling
mode exist so tests can drive the whole harness with a virtual clock and get
exact arithmetic.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..encoder import EncoderWeights, forward
from ..errors import BenchError, DistillkitError
from ..textdata import TokenBatch, Vocab, encode_lines, read_lines
from .power import Clock

DEFAULT_SWEEP = (1, 2, 4, 8, 16, 32, 64, 128, 256)


@dataclass
class BenchConfig:
    warmup_batches: int = 10
    measured_batches: int = 100
    sweep_sizes: tuple[int, ...] = DEFAULT_SWEEP
    seq_len: int = 128
    power_poll_hz: float = 10.0
    latency_batch_size: int = 1
    default_throughput_batch: int = 32

    def __post_init__(self):
        self.sweep_sizes = tuple(self.sweep_sizes)
        if self.warmup_batches < 0:
            raise BenchError("warmup_batches must be >= 0")
        if self.measured_batches < 1:
            raise BenchError("measured_batches must be >= 1")
        if not self.sweep_sizes or any(s < 1 for s in self.sweep_sizes):
            raise BenchError("sweep sizes must be positive")
        if any(b >= a for b, a in zip(self.sweep_sizes, self.sweep_sizes[1:])):
            raise BenchError("sweep sizes must be strictly increasing")
        if self.power_poll_hz <= 0:
            raise BenchError("power_poll_hz must be > 0")


@dataclass
class LatencyStats:
    mean_ms: float
    median_ms: float
    p95_ms: float
    n_batches: int


@dataclass
class EnergyResult:
    mean_watts: float
    joules: float
    j_per_sample: float
    n_power_samples: int
    window_seconds: float


@dataclass
class SweepRow:
    batch_size: int
    latency_ms_mean: float = 0.0
    latency_ms_median: float = 0.0
    latency_ms_p95: float = 0.0
    throughput_sps: float = 0.0
    mean_watts: float = 0.0
    joules: float = 0.0
    j_per_sample: float = 0.0
    failed: bool = False
    error: str = ""


@dataclass
class BenchReport:
    model_id: str
    rows: list[SweepRow] = field(default_factory=list)
    latency_bs1_ms: float = 0.0
    latency_bs1: Optional[LatencyStats] = None
    peak_throughput_sps: float = 0.0
    peak_throughput_batch_size: int = 0
    optimal_j_per_sample: float = 0.0
    optimal_j_batch_size: int = 0


class BenchData:
    """Deterministic benchmark batches sampled from a corpus with a fixed seed."""

    def __init__(self, corpus_path, vocab: Vocab, seq_len: int, seed: int = 0):
        lines = read_lines(corpus_path)
        if not lines:
            raise BenchError(f"benchmark corpus {corpus_path} has no non-empty lines")
        self._encoded = encode_lines(vocab, lines, seq_len)
        self._seed = seed

    def batches(self, batch_size: int, count: int) -> list[TokenBatch]:
        rng = np.random.default_rng([self._seed, batch_size, count])
        n = self._encoded.ids.shape[0]
        idx = rng.integers(0, n, size=(count, batch_size))
        return [
            TokenBatch(
                ids=self._encoded.ids[rows],
                attention_mask=self._encoded.attention_mask[rows],
            )
            for rows in idx
        ]


class EncoderRunner:
    """Adapts encoder weights to the benchmark's run_batch interface."""

    def __init__(self, model_id: str, weights: EncoderWeights):
        self.model_id = model_id
        self.weights = weights

    def run_batch(self, batch: TokenBatch) -> None:
        forward(self.weights, batch, train_mode=False)


class _ThreadPoller:
    """Polls the sampler on its own thread at the configured cadence."""

    def __init__(self, sampler, hz: float):
        self.samples: list[tuple[float, float]] = []
        self._sampler = sampler
        self._period = 1.0 / hz
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        while not self._stop.is_set():
            self.samples.append(self._sampler.next_sample())
            self._stop.wait(self._period)

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop.set()
        self._thread.join()

    def poll_if_due(self, now: float) -> None:  # sampling happens on the thread
        pass


class _InlinePoller:
    """Deterministic poller driven from the measurement loop itself."""

    def __init__(self, sampler, hz: float, start_at: float):
        self.samples: list[tuple[float, float]] = []
        self._sampler = sampler
        self._period = 1.0 / hz
        self._next = start_at + self._period

    def start(self):
        pass

    def stop(self):
        pass

    def poll_if_due(self, now: float) -> None:
        if now >= self._next:
            self.samples.append(self._sampler.next_sample())
            self._next += self._period
            if self._next <= now:
                # Fell behind (batch longer than the poll period): resume
                # cadence from now rather than bursting duplicate timestamps.
                self._next = now + self._period


def _windowed_run(
    runner,
    batches: Sequence[TokenBatch],
    n_warmup: int,
    clock: Clock,
    sampler=None,
    hz: float = 10.0,
    inline_sampling: bool = False,
) -> tuple[float, float, list[float], list[tuple[float, float]]]:
    """Warmup untimed, then per-batch timings inside one wall window.

    With a sampler, power is polled concurrently (thread lane) or between
    batches (inline); the sample buffer is only read after the window closes.
    """
    for b in batches[:n_warmup]:
        runner.run_batch(b)
    thread_poller = None
    if sampler is not None and not inline_sampling:
        thread_poller = _ThreadPoller(sampler, hz)
        thread_poller.start()
    try:
        t0 = clock()
        poller = thread_poller
        if sampler is not None and inline_sampling:
            poller = _InlinePoller(sampler, hz, t0)
        per_batch: list[float] = []
        for b in batches[n_warmup:]:
            tb = clock()
            runner.run_batch(b)
            te = clock()
            if te < tb:
                raise BenchError("monotonic clock went backwards; cannot benchmark")
            per_batch.append(te - tb)
            if poller is not None:
                poller.poll_if_due(te)
        t1 = clock()
    finally:
        if thread_poller is not None:
            thread_poller.stop()
    if t1 < t0:
        raise BenchError("monotonic clock went backwards; cannot benchmark")
    return t0, t1, per_batch, poller.samples if poller is not None else []


def _latency_stats(per_batch_seconds: list[float]) -> LatencyStats:
    ms = np.asarray(per_batch_seconds, dtype=np.float64) * 1e3
    return LatencyStats(
        mean_ms=float(ms.mean()),
        median_ms=float(np.median(ms)),
        p95_ms=float(np.percentile(ms, 95)),
        n_batches=len(per_batch_seconds),
    )


def measure_latency(runner, data: BenchData, cfg: BenchConfig, clock: Clock = time.perf_counter) -> LatencyStats:
    """Per-batch latency at batch size 1, warmup excluded."""
    batches = data.batches(cfg.latency_batch_size, cfg.warmup_batches + cfg.measured_batches)
    _, _, per_batch, _ = _windowed_run(runner, batches, cfg.warmup_batches, clock)
    return _latency_stats(per_batch)


def measure_throughput(
    runner, data: BenchData, batch_size: int, cfg: BenchConfig, clock: Clock = time.perf_counter
) -> float:
    """Samples per second over one window around all measured batches."""
    if batch_size < 1:
        raise BenchError(f"batch_size must be >= 1, got {batch_size}")
    batches = data.batches(batch_size, cfg.warmup_batches + cfg.measured_batches)
    t0, t1, _, _ = _windowed_run(runner, batches, cfg.warmup_batches, clock)
    return cfg.measured_batches * batch_size / (t1 - t0)


def _energy_from_window(
    samples: list[tuple[float, float]], t0: float, t1: float, n_samples_processed: int
) -> EnergyResult:
    in_window = [(t, w) for t, w in samples if t0 <= t <= t1]
    last = None
    for t, w in in_window:
        if not np.isfinite(w) or w < 0:
            raise BenchError(f"power sampler produced invalid watts {w}")
        if last is not None and t <= last:
            raise BenchError("power sampler timestamps are not strictly increasing")
        last = t
    if len(in_window) < 2:
        raise BenchError(
            f"insufficient power samples in window: got {len(in_window)}, need >= 2"
        )
    mean_watts = float(np.mean([w for _, w in in_window]))
    window = t1 - t0
    joules = mean_watts * window
    return EnergyResult(
        mean_watts=mean_watts,
        joules=joules,
        j_per_sample=joules / n_samples_processed,
        n_power_samples=len(in_window),
        window_seconds=window,
    )


def measure_energy(
    runner,
    data: BenchData,
    batch_size: int,
    sampler,
    cfg: BenchConfig,
    clock: Clock = time.perf_counter,
    inline_sampling: bool = False,
) -> EnergyResult:
    """Mean watts over the measured window, scaled to joules per sample.

    The sampler runs on its own thread by default; ``inline_sampling`` polls
    between batches instead, which is deterministic under a virtual clock.
    """
    if batch_size < 1:
        raise BenchError(f"batch_size must be >= 1, got {batch_size}")
    batches = data.batches(batch_size, cfg.warmup_batches + cfg.measured_batches)
    t0, t1, _, samples = _windowed_run(
        runner, batches, cfg.warmup_batches, clock, sampler, cfg.power_poll_hz, inline_sampling
    )
    return _energy_from_window(samples, t0, t1, cfg.measured_batches * batch_size)


def _measure_row(
    runner,
    data: BenchData,
    batch_size: int,
    sampler,
    cfg: BenchConfig,
    clock: Clock,
    inline_sampling: bool,
) -> SweepRow:
    batches = data.batches(batch_size, cfg.warmup_batches + cfg.measured_batches)
    t0, t1, per_batch, samples = _windowed_run(
        runner, batches, cfg.warmup_batches, clock, sampler, cfg.power_poll_hz, inline_sampling
    )
    stats = _latency_stats(per_batch)
    row = SweepRow(
        batch_size=batch_size,
        latency_ms_mean=stats.mean_ms,
        latency_ms_median=stats.median_ms,
        latency_ms_p95=stats.p95_ms,
        throughput_sps=cfg.measured_batches * batch_size / (t1 - t0),
    )
    if sampler is not None:
        energy = _energy_from_window(samples, t0, t1, cfg.measured_batches * batch_size)
        row.mean_watts = energy.mean_watts
        row.joules = energy.joules
        row.j_per_sample = energy.j_per_sample
    return row


def sweep(
    runner,
    data: BenchData,
    cfg: BenchConfig,
    sampler=None,
    clock: Clock = time.perf_counter,
    inline_sampling: bool = False,
) -> BenchReport:
    """Throughput and energy per sweep size, sharing one window per size.

    Peak throughput and optimal J/sample summaries break ties toward the
    smaller batch size. A failed size is recorded and skipped; if every size
    fails the sweep errors out.
    """
    report = BenchReport(model_id=getattr(runner, "model_id", "model"))
    for bs in cfg.sweep_sizes:
        try:
            row = _measure_row(runner, data, bs, sampler, cfg, clock, inline_sampling)
        except DistillkitError as exc:
            row = SweepRow(batch_size=bs, failed=True, error=str(exc))
        report.rows.append(row)

    ok = [r for r in report.rows if not r.failed]
    if not ok:
        raise BenchError("every sweep batch size failed")
    stats = measure_latency(runner, data, cfg, clock)
    report.latency_bs1 = stats
    report.latency_bs1_ms = stats.mean_ms

    peak = max(ok, key=lambda r: r.throughput_sps)
    # max() returns the first of equals, and rows are in ascending batch size.
    report.peak_throughput_sps = peak.throughput_sps
    report.peak_throughput_batch_size = peak.batch_size
    if sampler is not None:
        optimal = min(ok, key=lambda r: r.j_per_sample)
        report.optimal_j_per_sample = optimal.j_per_sample
        report.optimal_j_batch_size = optimal.batch_size
    return report


def write_report_json(report: BenchReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: BenchReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model,batch_size,latency_ms_mean,throughput_sps,mean_watts,j_per_sample\n")
        for r in report.rows:
            if r.failed:
                continue
            fh.write(
                f"{report.model_id},{r.batch_size},{r.latency_ms_mean:.10g},"
                f"{r.throughput_sps:.10g},{r.mean_watts:.10g},{r.j_per_sample:.10g}\n"
            )
