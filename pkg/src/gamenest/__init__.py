"""Game environments and trajectory-level GRPO for nested and mixed multi-task training."""

__version__ = "0.1.0"
