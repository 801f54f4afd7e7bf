"""Experiment configuration: one JSON document with a versioned schema.

Unknown keys are rejected at every level so that a typo never silently
falls back to a default.
"""
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .lpv_model import MODES, NOISE_STRUCTURES, canonical_mode
from .trainer import TrainingConfig

SCHEMA = "lpvsubnet-experiment/1"
OUTPUT_DIR_ENV = "LPVSUBNET_OUTPUT_DIR"
SYSTEMS = ("pendulum", "lti")


class ConfigError(ValueError):
    pass


@dataclass
class BenchmarkSection:
    system: str = "pendulum"
    params: dict = field(default_factory=dict)


@dataclass
class ExcitationSection:
    amplitude: float = 0.5
    band: tuple = (1.0, 2.0)
    ts: Optional[float] = None  # None: use the system sample time
    sigma_v: float = 1.0 / 3.0


@dataclass
class NoiseSection:
    structure: str = "output_error"
    snr_db: Optional[float] = 35.0
    sigma_e: Optional[float] = None


@dataclass
class SplitSection:
    n_est: int = 10_000
    n_val: int = 10_000
    n_test: int = 1_000


@dataclass
class ModelSection:
    n_x: int = 2
    n_p: int = 1
    n_px: Optional[int] = None
    lag: Optional[int] = None  # None: same as n_x
    hidden: tuple = (64, 64)
    encoder_hidden: tuple = (64, 64)
    noise: str = "output_error"
    mode: str = "self_scheduled"


@dataclass
class ExperimentConfig:
    schema: str = SCHEMA
    seed: int = 0
    output_dir: str = "runs/experiment"
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    excitation: ExcitationSection = field(default_factory=ExcitationSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    splits: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @property
    def out(self):
        """Output directory; the environment variable wins over the document."""
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def to_dict(self):
        d = dataclasses.asdict(self)
        del d["training"]["seed"]
        return d

    def training_config(self, seed=None, threads=None):
        """Training settings with the master seed (and optional thread cap) applied."""
        changes = {"seed": self.seed if seed is None else seed}
        if threads is not None:
            changes["threads"] = threads
        return dataclasses.replace(self.training, **changes)

    def validate(self):
        if self.schema != SCHEMA:
            raise ConfigError(f"unsupported schema {self.schema!r}, expected {SCHEMA!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.benchmark.system not in SYSTEMS:
            raise ConfigError(f"benchmark.system must be one of {SYSTEMS}")
        if self.noise.structure not in NOISE_STRUCTURES or self.model.noise not in NOISE_STRUCTURES:
            raise ConfigError(f"noise structures must be one of {NOISE_STRUCTURES}")
        if self.noise.snr_db is not None and self.noise.sigma_e is not None:
            raise ConfigError("give either noise.snr_db or noise.sigma_e, not both")
        if self.noise.sigma_e is not None and self.noise.sigma_e < 0:
            raise ConfigError("noise.sigma_e must be >= 0")
        for k in ("n_est", "n_val", "n_test"):
            if getattr(self.splits, k) <= 0:
                raise ConfigError(f"splits.{k} must be positive")
        m = self.model
        if m.n_x <= 0 or m.n_p < 0 or (m.lag is not None and m.lag < 0):
            raise ConfigError("model dims must be positive (n_p, lag may be 0)")
        if m.n_px is not None and not 0 <= m.n_px <= m.n_p:
            raise ConfigError("model.n_px must lie in [0, n_p]")
        if any(w <= 0 for w in (*m.hidden, *m.encoder_hidden)):
            raise ConfigError("hidden widths must be positive")
        try:
            m.mode = canonical_mode(m.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if m.mode == "oracle" and self.benchmark.system != "pendulum":
            raise ConfigError("oracle mode needs a benchmark with a known scheduling signal")
        return self


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    if cls is TrainingConfig and "seed" in data:
        raise ConfigError(f"{where}: the training seed is the top-level 'seed'")
    kwargs = {}
    for name, val in data.items():
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, val, f"{where}.{name}")
        elif isinstance(val, list):
            kwargs[name] = tuple(val)
        else:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SECTIONS = {
    (ExperimentConfig, "benchmark"): BenchmarkSection,
    (ExperimentConfig, "excitation"): ExcitationSection,
    (ExperimentConfig, "noise"): NoiseSection,
    (ExperimentConfig, "splits"): SplitSection,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "training"): TrainingConfig,
}


def from_dict(data):
    return _build(ExperimentConfig, data, "config").validate()


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return from_dict(data)


def dump_config(cfg, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


__all__ = ["ConfigError", "ExperimentConfig", "MODES", "SCHEMA", "from_dict", "load_config", "dump_config"]
