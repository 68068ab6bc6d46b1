"""Inference benchmark harness: latency, throughput, energy per sample."""

from .harness import (
    BenchConfig,
    BenchData,
    BenchReport,
    EncoderRunner,
    EnergyResult,
    LatencyStats,
    SweepRow,
    measure_energy,
    measure_latency,
    measure_throughput,
    sweep,
    write_report_csv,
    write_report_json,
)
from .power import (
    BACKEND_HELP,
    CommandPowerSampler,
    ConstantPowerSampler,
    TracePowerSampler,
    make_sampler,
)

__all__ = [
    "BACKEND_HELP",
    "BenchConfig",
    "BenchData",
    "BenchReport",
    "CommandPowerSampler",
    "ConstantPowerSampler",
    "EncoderRunner",
    "EnergyResult",
    "LatencyStats",
    "SweepRow",
    "TracePowerSampler",
    "make_sampler",
    "measure_energy",
    "measure_latency",
    "measure_throughput",
    "sweep",
    "write_report_csv",
    "write_report_json",
]
