"""Experiment configuration: one flat ``key = value`` file per run.

Lines starting with ``#`` are comments. Scene-distribution keys carry a
``scene.`` prefix; tuple values are written as ``lo, hi``. Real numbers may
be given as fractions (``1/6``). Defaults are the full-scale training setup
at ``scale_divisor = 1``.
"""

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .datagen import SceneParams
from .errors import ConfigError
from .model import ArchitectureConfig
from .optim import OptimizerConfig

PROFILES = ("desk",)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    train_count: int = 2975
    test_count: int = 1525
    warning_fraction: float = 1 / 6
    scale_divisor: int = 1
    lam: float = 1e-3
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    batch_size: int = 128
    iterations: int = 2000
    checkpoint_every: int = 500
    baseline_epochs: int = 40
    baseline_lr: float = 0.05
    baseline_mining_images: int = 200
    baseline_threshold: float = -1.0
    fpr_target: float = 0.15
    out: str = "runs"
    scene: SceneParams = field(default_factory=SceneParams)

    def __post_init__(self):
        self.validate()

    # derived views -----------------------------------------------------

    @property
    def architecture(self):
        return ArchitectureConfig(self.scale_divisor, self.lam)

    @property
    def optimizer(self):
        return OptimizerConfig(self.learning_rate, self.weight_decay, self.batch_size, self.iterations)

    @property
    def image_size(self):
        a = self.architecture
        return a.width, a.height

    def validate(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed}")
        for name in ("train_count", "test_count"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name}: must be >= 2, got {getattr(self, name)}")
        if not 0 < self.warning_fraction < 1:
            raise ConfigError(f"warning_fraction: must lie in (0, 1), got {self.warning_fraction}")
        for name in ("train_count", "test_count"):
            n = getattr(self, name)
            k = round(n * self.warning_fraction)
            if k == 0 or k == n:
                raise ConfigError(f"{name}: {n} samples at warning_fraction {self.warning_fraction} "
                                  "leave one class empty")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every: must be >= 1, got {self.checkpoint_every}")
        if self.baseline_epochs < 1 or self.baseline_lr <= 0 or self.baseline_mining_images < 0:
            raise ConfigError("baseline_epochs >= 1, baseline_lr > 0 and baseline_mining_images >= 0 are required")
        if not 0 <= self.fpr_target <= 1:
            raise ConfigError(f"fpr_target: must lie in [0, 1], got {self.fpr_target}")
        for label, make in (("scale_divisor/lambda", lambda: self.architecture),
                            ("optimizer", lambda: self.optimizer),
                            ("scene", self.scene.validate)):
            try:
                make()
            except ConfigError as err:
                raise ConfigError(f"{label}: {err}") from None

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # text form ---------------------------------------------------------

    def items(self):
        for f in fields(self):
            if f.name == "scene":
                continue
            yield _KEY_ALIASES.get(f.name, f.name), getattr(self, f.name)
        for f in fields(SceneParams):
            yield f"scene.{f.name}", getattr(self.scene, f.name)

    def to_text(self):
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.items())

    def digest(self):
        """sha256 of the canonical text form; ``out`` is excluded so moving a run keeps its hash."""
        text = "".join(f"{k} = {_render(v)}\n" for k, v in self.items() if k != "out")
        return hashlib.sha256(text.encode()).hexdigest()


_KEY_ALIASES = {"lam": "lambda"}
_FIELD_FOR_KEY = {v: k for k, v in _KEY_ALIASES.items()}


def _render(v):
    if isinstance(v, tuple):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key, raw, like):
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if isinstance(like, int):
            return int(raw, 0)
        if isinstance(like, float):
            return float(Fraction(raw)) if "/" in raw else float(raw)
        if isinstance(like, tuple):
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != len(like):
                raise ValueError
            return tuple(_convert(key, p, x) for p, x in zip(parts, like))
        return raw
    except (ValueError, ZeroDivisionError):
        kind = f"{len(like)} comma-separated values" if isinstance(like, tuple) else type(like).__name__
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None


def parse(text, source="<config>"):
    """Build an ExperimentConfig from ``key = value`` text."""
    base = ExperimentConfig()
    top, scene = {}, {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: {key} is set twice")
        seen.add(key)
        if key.startswith("scene."):
            name = key[len("scene."):]
            if name not in {f.name for f in fields(SceneParams)}:
                raise ConfigError(f"{source}:{lineno}: unknown scene parameter {key}")
            scene[name] = _convert(key, raw, getattr(base.scene, name))
        else:
            name = _FIELD_FOR_KEY.get(key, key)
            if name == "scene" or name not in {f.name for f in fields(ExperimentConfig)}:
                raise ConfigError(f"{source}:{lineno}: unknown key {key}")
            top[name] = _convert(key, raw, getattr(base, name))
    return ExperimentConfig(**top, scene=SceneParams(**scene))


def profile_path(name):
    return resources.files("pcwnet") / "configs" / f"{name}.cfg"


def load(path):
    """Read a config file; a bare profile name such as ``desk`` selects a shipped profile."""
    if str(path) in PROFILES:
        ref = profile_path(str(path))
        return parse(ref.read_text(), source=f"{path}.cfg")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse(p.read_text(), source=str(p))
