"""Experiment configuration: one JSON document with scenario, train and eval sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .scenario import TopologyConfig

REGIMES = ("pretrain-aware", "pretrain-unaware", "estimator-only", "joint")
PILOT_SCHEMES = ("orthogonal", "random", "learned")
LOSS_WEIGHTINGS = ("physical", "normalized", "power")


@dataclass
class ScenarioConfig:
    L: int = 3
    K: int = 4
    N: int = 16
    isd: float = 500.0
    min_ue_distance: float = 35.0
    shadowing_std_db: float = 8.0
    noise_power_dbm: float = -96.0
    p_max_dbm: float = 23.0

    def topology(self) -> TopologyConfig:
        return TopologyConfig(self.L, self.K, self.isd, self.min_ue_distance, self.N,
                              self.shadowing_std_db)


@dataclass
class TrainConfig:
    regime: str = "estimator-only"
    pilot_scheme: str = "orthogonal"
    tau: int = 4
    delta2: float = 0.0
    n_train: int = 2000
    n_val: int = 500
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-4
    patience: int = 20
    seed: int = 0
    # pilot generator
    pilot_hidden: int = 2
    pilot_omega: int = 4
    pilot_activation: str = "relu"
    pilot_dropout: float = 0.0
    pilot_loss: str = "unaware"
    # residual estimator
    depth: int = 7
    width: int = 64
    mode: str = "proposed"
    head_scale: float = 0.0
    loss_weighting: str = "physical"
    warmup_epochs: int = 0
    warmup_weighting: str = "power"
    warmup_lr: float | None = None
    lr_decay: float = 1.0
    # joint regime
    joint_epochs: int = 20
    joint_lr: float | None = None
    joint_pilot_lr: float | None = None
    reparameterized: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"train.regime: unknown regime {self.regime!r}")
        if self.pilot_scheme not in PILOT_SCHEMES:
            raise ConfigError(f"train.pilot_scheme: unknown scheme {self.pilot_scheme!r}")
        for name in ("n_train", "n_val", "batch_size", "tau"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name}: must be >= 1")
        for name in ("loss_weighting", "warmup_weighting"):
            if getattr(self, name) not in LOSS_WEIGHTINGS:
                raise ConfigError(f"train.{name}: unknown value {getattr(self, name)!r}")
        if self.warmup_epochs < 0:
            raise ConfigError("train.warmup_epochs: must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("train.lr_decay: must lie in (0, 1]")
        if self.mode not in ("proposed", "cdrn", "cdrn-local"):
            raise ConfigError(f"train.mode: unknown mode {self.mode!r}")
        if self.pilot_loss not in ("aware", "unaware"):
            raise ConfigError(f"train.pilot_loss: unknown loss {self.pilot_loss!r}")
        if self.epochs < 0 or self.joint_epochs < 0:
            raise ConfigError("train.epochs: must be >= 0")
        if not 0.0 <= self.delta2 <= 0.04 + 1e-12:
            raise ConfigError("train.delta2: must lie in [0, 0.04]")

    @property
    def delta(self) -> float:
        return self.delta2 ** 0.5


@dataclass
class EvalConfig:
    n_test: int = 500
    delta2_grid: list = field(default_factory=lambda: [0.0, 0.01, 0.02, 0.03, 0.04])
    tau_grid: list = field(default_factory=lambda: [2, 4, 6, 8])
    mismatch_train_delta2: float = 0.02
    seed: int = 1


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    unknown = sorted(set(doc) - {"scenario", "train", "eval", "seed"})
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {', '.join(unknown)}")
    return ExperimentConfig(
        scenario=_section(ScenarioConfig, doc.get("scenario"), "scenario"),
        train=_section(TrainConfig, doc.get("train"), "train"),
        eval=_section(EvalConfig, doc.get("eval"), "eval"),
        seed=int(doc.get("seed", 0)),
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)
