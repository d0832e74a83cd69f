"""Plain SGD with L2 weight decay (no momentum)."""

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    batch_size: int = 128
    iterations: int = 2000

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be positive, got {self.iterations}")


def sgd_step(params, config):
    """In place: ``w <- w - lr * (grad + weight_decay * w)``."""
    lr, wd = config.learning_rate, config.weight_decay
    for p in params:
        if lr == 0:
            continue
        if wd:
            p.value -= lr * (p.grad + wd * p.value)
        else:
            p.value -= lr * p.grad
    return params
