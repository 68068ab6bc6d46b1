"""distillkit: attention-relation distillation for small text encoders,
with an inference efficiency benchmark and Pareto analysis toolkit."""

__version__ = "0.1.0"
