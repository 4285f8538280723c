"""Run and training configuration.

A run is described by a single JSON document with a "version" field.
Validation is strict: unknown keys are rejected so that typos fail loudly
instead of silently falling back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

MODEL_KINDS = ("dbk_exact", "dbk_svi", "dense_rbf")
CONFIG_VERSION = 1


class ConfigError(Exception):
    """Invalid or malformed run configuration."""


@dataclass
class TrainConfig:
    """Optimizer and protocol settings shared by all trainers.

    eval_every and patience are counted in iterations for full-batch
    training (dbk_exact, dense_rbf) and in epochs for dbk_svi. patience
    None disables early stopping; validation checkpoints are still taken
    every eval_every so the best-validation state is returned either way.
    """

    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    max_iters: int = 10000
    max_epochs: int = 2000
    eval_every: int = 100
    patience: int | None = 2000
    seed: int = 0
    correction_enabled: bool = True
    noise_var_init: float = 1e-2
    noise_var_floor: float = 1e-6
    learn_map: bool = True
    learn_noise: bool = True

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.patience is not None and self.patience < self.eval_every:
            raise ConfigError("patience must be >= eval_every")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.noise_var_init <= self.noise_var_floor:
            raise ConfigError("noise_var_init must exceed noise_var_floor")
        return self


@dataclass
class RunConfig:
    """Full model + training description as carried by the config file."""

    model: str = "dbk_exact"
    rank: int = 128
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    residual: bool = False
    correction: bool = True
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    max_iters: int = 10000
    max_epochs: int = 2000
    eval_every: int = 100
    patience: int | None = 2000
    seed: int = 0
    threads: int = 1
    dense_cap: int = 20000
    normalize: bool = True
    noise_var_init: float = 1e-2
    noise_var_floor: float = 1e-6

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(
                f"model must be one of {MODEL_KINDS}, got {self.model!r}"
            )
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.dense_cap < 1:
            raise ConfigError("dense_cap must be >= 1")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be >= 1")
        self.train_config().validate()
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            max_iters=self.max_iters,
            max_epochs=self.max_epochs,
            eval_every=self.eval_every,
            patience=self.patience,
            seed=self.seed,
            correction_enabled=self.correction,
            noise_var_init=self.noise_var_init,
            noise_var_floor=self.noise_var_floor,
        )


_BOOL_FIELDS = {"residual", "correction", "normalize"}
_FLOAT_FIELDS = {
    "learning_rate",
    "weight_decay",
    "noise_var_init",
    "noise_var_floor",
}
_INT_FIELDS = {
    "rank",
    "batch_size",
    "max_iters",
    "max_epochs",
    "eval_every",
    "seed",
    "threads",
    "dense_cap",
}


def run_config_from_dict(obj: dict) -> RunConfig:
    """Parse and validate a config document; unknown keys are an error."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(obj)
    version = data.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config version must be {CONFIG_VERSION}, got {version!r}"
        )
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig()
    for key, value in data.items():
        if key == "model":
            if not isinstance(value, str):
                raise ConfigError("model must be a string")
        elif key == "hidden":
            if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value
            ):
                raise ConfigError("hidden must be a list of integers")
        elif key == "patience":
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError("patience must be an integer or null")
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be a boolean")
        elif key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
        elif key in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number")
        setattr(cfg, key, value)
    return cfg.validate()


def run_config_to_dict(cfg: RunConfig) -> dict:
    out = {"version": CONFIG_VERSION}
    for f in fields(RunConfig):
        out[f.name] = getattr(cfg, f.name)
    return out
