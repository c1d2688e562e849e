"""``section.key = value`` run configuration with a closed key schema."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .game import SpeedModel
from .network import Architecture, TrainConfig
from .protocol import SessionPlan, identical_task_config
from .signal import DEFAULT_TASKS, SignatureConfig, default_signature_config


class ConfigError(ValueError):
    """Malformed or unknown configuration entry; the message names the key."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tuple_int(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace("x", ",").split(",") if p.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# key -> (parser, default)
SCHEMA = {
    "run.seed": (int, 0),
    "paths.grid": (str, ""),
    "paths.dataset": (str, "dataset.snb"),
    "paths.model": (str, "model.snm"),
    "paths.correction": (str, ""),
    "paths.report_dir": (str, "report"),
    "generator.gain": (float, 4.0),
    "generator.tasks": (_names, DEFAULT_TASKS),
    "generator.identical_tasks": (_bool, False),
    "generator.background_rms_uv": (float, 10.0),
    "generator.burst_depth": (float, 0.35),
    "generator.extra_noise_uv": (float, 0.0),
    "generator.line_noise_amp_uv": (float, 5.0),
    "generator.blink_rate_hz": (float, 0.25),
    "generator.blink_amp_uv": (float, 80.0),
    "data.kind": (str, "blocks"),
    "data.block_s": (float, 10.0),
    "data.n_blocks": (int, 100),
    "data.n_per_task": (int, 100),
    "data.shuffle_labels": (_bool, False),
    "architecture.variant": (str, "SmallNet"),
    "architecture.kernel": (_tuple_int, (3, 3)),
    "architecture.feature_maps": (int, 32),
    "architecture.fc_width": (int, 128),
    "architecture.kernel3d": (_tuple_int, (5, 3, 3)),
    "architecture.maps3d": (int, 4),
    "architecture.weight_scaling": (str, "fan_in"),
    "training.learning_rate": (float, 0.05),
    "training.batch_size": (int, 32),
    "training.max_epochs": (int, 8),
    "training.patience": (int, 5),
    "training.max_examples": (int, 2000),
    "training.early_stopping": (_bool, True),
    "training.holdout_fraction": (float, 0.1),
    "evaluation.folds": (int, 5),
    "evaluation.seeds": (int, 5),
    "evaluation.purge_s": (float, 1.2),
    "evaluation.alpha": (float, 0.01),
    "game.n_pads": (int, 20),
    "game.decoder": (str, "model"),
    "game.p_correct": (float, 0.8),
    "game.latency_s": (float, 0.0),
    "game.v_correct": (float, 2.5),
    "game.v_none": (float, 1.0),
    "game.v_wrong": (float, 0.75),
    "game.effect_s": (float, 0.3),
    "game.n_races": (int, 1),
    "plan.n_videos": (int, 20),
    "plan.pads_per_video": (int, 20),
    "plan.video_pad_duration_s": (float, 6.75),
    "plan.n_warmup_races": (int, 11),
    "plan.n_retrain_races": (int, 5),
    "plan.n_adaptive_races": (int, 5),
    "plan.buffer_cap": (int, 2000),
    "plan.cv_folds": (int, 5),
    "plan.cv_seeds": (int, 1),
    "plan.game_gain_scale": (float, 0.6),
    "plan.game_extra_noise_uv": (float, 2.0),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, text: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(text.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    def generator(self) -> SignatureConfig:
        v = self.values
        knobs = dict(background_rms_uv=v["generator.background_rms_uv"], burst_depth=v["generator.burst_depth"],
                     extra_noise_uv=v["generator.extra_noise_uv"],
                     line_noise_amp_uv=v["generator.line_noise_amp_uv"],
                     blink_rate_hz=v["generator.blink_rate_hz"], blink_amp_uv=v["generator.blink_amp_uv"])
        try:
            if v["generator.identical_tasks"]:
                base = identical_task_config(len(v["generator.tasks"]), gain=v["generator.gain"], seed=self.seed)
                return dataclasses.replace(base, **knobs)
            return default_signature_config(v["generator.gain"], seed=self.seed, **knobs).restricted(
                v["generator.tasks"])
        except ValueError as exc:
            raise ConfigError(f"generator.*: {exc}") from None

    def architecture(self, n_classes: int) -> Architecture:
        v = self.values
        try:
            return Architecture(v["architecture.variant"], v["architecture.kernel"], v["architecture.feature_maps"],
                                v["architecture.fc_width"], v["architecture.kernel3d"], v["architecture.maps3d"],
                                n_classes, weight_scaling=v["architecture.weight_scaling"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"architecture.*: {exc}") from None

    def training(self) -> TrainConfig:
        v = self.values
        try:
            return TrainConfig(v["training.learning_rate"], v["training.batch_size"], v["training.max_epochs"],
                               self.seed, v["training.patience"], v["training.max_examples"],
                               v["training.early_stopping"], v["training.holdout_fraction"])
        except ValueError as exc:
            raise ConfigError(f"training.*: {exc}") from None

    def speed_model(self) -> SpeedModel:
        v = self.values
        try:
            return SpeedModel(v["game.v_correct"], v["game.v_none"], v["game.v_wrong"], v["game.effect_s"])
        except ValueError as exc:
            raise ConfigError(f"game.*: {exc}") from None

    def plan(self) -> SessionPlan:
        kw = {k.split(".", 1)[1]: val for k, val in self.values.items() if k.startswith("plan.")}
        try:
            return SessionPlan(seed=self.seed, **kw)
        except ValueError as exc:
            raise ConfigError(f"plan.*: {exc}") from None


def parse_config(text: str, config: RunConfig | None = None) -> RunConfig:
    config = config or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        config.set(key, value)
    return config


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
