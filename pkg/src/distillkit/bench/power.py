"""Pluggable power samplers.

A sampler's ``next_sample()`` returns ``(timestamp_seconds, watts)``. The
timestamp comes from the harness's monotonic clock so samples can be windowed
against the measurement interval. Real hardware tooling plugs in through the
``command:`` backend, which runs an external program per poll and parses the
first float it prints (the typical vendor-tool polling pattern).
"""

from __future__ import annotations

import csv
import shlex
import subprocess
import time
from typing import Callable

from ..errors import BenchError

Clock = Callable[[], float]

BACKEND_HELP = "constant:<watts>, trace:<csv>, command:<argv>"


class ConstantPowerSampler:
    """Fixed power draw; the synthetic backend used throughout the tests."""

    backend = "constant"

    def __init__(self, watts: float, clock: Clock = time.perf_counter):
        if not watts >= 0:
            raise BenchError(f"constant sampler needs watts >= 0, got {watts}")
        self.watts = float(watts)
        self._clock = clock

    def next_sample(self) -> tuple[float, float]:
        return self._clock(), self.watts


class TracePowerSampler:
    """Replays the watt column of a recorded trace, cycling when exhausted.

    The trace's ``t_seconds`` column documents the original cadence and is
    validated (strictly increasing), but poll timestamps come from the live
    clock so windowing stays in the harness timebase.
    """

    backend = "trace"

    def __init__(self, path, clock: Clock = time.perf_counter):
        self._clock = clock
        self.watts: list[float] = []
        try:
            fh = open(path, "r", encoding="utf-8", newline="")
        except OSError as exc:
            raise BenchError(f"cannot open power trace {path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["t_seconds", "watts"]:
                raise BenchError(f"power trace {path} must start with 't_seconds,watts'")
            last_t = None
            for row in reader:
                if not row:
                    continue
                t, w = float(row[0]), float(row[1])
                if last_t is not None and t <= last_t:
                    raise BenchError(f"power trace {path} timestamps must be strictly increasing")
                if not w >= 0:
                    raise BenchError(f"power trace {path} has negative watts {w}")
                last_t = t
                self.watts.append(w)
        if not self.watts:
            raise BenchError(f"power trace {path} has no samples")
        self._i = 0

    def next_sample(self) -> tuple[float, float]:
        w = self.watts[self._i % len(self.watts)]
        self._i += 1
        return self._clock(), w


class CommandPowerSampler:
    """Polls an external process that prints instantaneous watts."""

    backend = "command"

    def __init__(self, argv, clock: Clock = time.perf_counter):
        self.argv = shlex.split(argv) if isinstance(argv, str) else list(argv)
        if not self.argv:
            raise BenchError("command sampler needs a non-empty argv")
        self._clock = clock

    def next_sample(self) -> tuple[float, float]:
        try:
            out = subprocess.run(
                self.argv, capture_output=True, text=True, timeout=5.0, check=True
            ).stdout
        except (OSError, subprocess.SubprocessError) as exc:
            raise BenchError(f"power command {self.argv} failed: {exc}") from exc
        for token in out.split():
            try:
                return self._clock(), float(token)
            except ValueError:
                continue
        raise BenchError(f"power command {self.argv} printed no parsable watts: {out!r}")


def make_sampler(spec: str, clock: Clock = time.perf_counter):
    """Build a sampler from a backend string like ``constant:100``."""
    kind, sep, arg = spec.partition(":")
    if not sep:
        raise BenchError(f"power backend '{spec}' needs an argument; valid: {BACKEND_HELP}")
    if kind == "constant":
        try:
            return ConstantPowerSampler(float(arg), clock)
        except ValueError as exc:
            raise BenchError(f"constant backend needs a number, got '{arg}'") from exc
    if kind == "trace":
        return TracePowerSampler(arg, clock)
    if kind == "command":
        return CommandPowerSampler(arg, clock)
    raise BenchError(f"unknown power backend '{kind}'; valid: {BACKEND_HELP}")
