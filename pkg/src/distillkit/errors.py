"""Exception types shared across the package."""


class DistillkitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DistillkitError):
    """Tensor shapes incompatible with the requested operation."""


class NumericsError(DistillkitError):
    """NaN or Inf produced or encountered at an op boundary."""


class ConfigError(DistillkitError):
    """Invalid or inconsistent configuration."""


class DataError(DistillkitError):
    """Corpus, vocabulary, or batch contract violation."""


class CheckpointError(DistillkitError):
    """Malformed, truncated, or inconsistent checkpoint file."""


class BenchError(DistillkitError):
    """Benchmark harness or power sampler contract violation."""


class DegenerateRowError(DistillkitError):
    """A softmax row has no unmasked entries."""


class SkipBatch(DistillkitError):
    """Signal that a batch cannot contribute to the loss and should be skipped."""


class TrainingDiverged(DistillkitError):
    """Training produced a non-finite loss; the last good checkpoint is retained."""
