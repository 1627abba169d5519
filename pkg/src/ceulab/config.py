"""Run configuration: one INI-style file per run, typed by the defaults below.

Every key must appear in :data:`DEFAULTS`; anything else is rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import SplitSpec
from .toy_lm import OBJECTIVES, ModelConfig, TrainSettings


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, object]] = {
    "run": {
        "out_dir": "runs/default",
    },
    "corpus": {
        "seed": 7,
        "n_profiles": 40,
        "qa_per_profile": 20,
        "n_attributes": 4,
        "n_perturbations": 3,
        "n_probe_entities": 30,
        "n_distractors": 24,
        "forget_fraction": 0.05,
        "split_seed": 0,
    },
    "model": {
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 4,
        "max_seq_len": 16,
        "seed": 0,
    },
    "finetune": {
        "learning_rate": 3e-3,
        "batch_size": 32,
        "epochs": 20,
        "weight_decay": 0.0,
        "seed": 0,
        "memorization_gate": 0.95,
    },
    "unlearn": {
        "objective": "ceu",
        "learning_rate": 3e-4,
        "batch_size": 32,
        "epochs": 10,
        "weight_decay": 0.0,
        "seed": 0,
        "preference_score": 0.0,
        "evaluate_epochs": "1,2,3,4,5,6,7,8,9,10",
    },
    "eval": {
        "gold_question": True,
        "retain_stride": 1,
    },
}

# sections each stage depends on; used for stale-input checks
STAGE_SECTIONS = {
    "gen-data": ("corpus",),
    "finetune": ("corpus", "model", "finetune"),
    "reference": ("corpus", "model", "finetune"),
    "unlearn": ("corpus", "model", "finetune", "unlearn", "eval"),
    "eval": ("corpus", "model", "finetune", "eval"),
}


def _coerce(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}")
    return raw.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    @classmethod
    def default(cls) -> "RunConfig":
        return cls({s: dict(kv) for s, kv in DEFAULTS.items()})

    @classmethod
    def from_text(cls, text: str, overrides=()) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case so typos are reported verbatim
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        cfg = cls.default()
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
        for item in overrides:
            cfg.apply_override(item)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path | None, overrides=()) -> "RunConfig":
        text = ""
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.from_text(text, overrides)

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.values[section][key] = _coerce(section, key, raw)

    def apply_override(self, item: str) -> None:
        """Apply a ``section.key=value`` override."""
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        self.set(section, key, raw)

    def validate(self) -> None:
        try:
            self.split_spec()
            self.model_config(vocab_size=64)
            self.finetune_settings()
            self.unlearn_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self["unlearn"]["objective"] not in OBJECTIVES:
            raise ConfigError(
                f"unknown objective {self['unlearn']['objective']!r}; choose from {OBJECTIVES}"
            )
        epochs = self.evaluate_epochs()
        if max(epochs) > self["unlearn"]["epochs"]:
            raise ConfigError("evaluate_epochs lists an epoch beyond unlearn.epochs")
        if self["eval"]["retain_stride"] < 1:
            raise ConfigError("retain_stride must be at least 1")
        if not 0 <= self["unlearn"]["preference_score"] <= 1:
            raise ConfigError("preference_score is a normalized score in [0, 1]")

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # typed views -----------------------------------------------------------

    def corpus_kwargs(self) -> dict:
        c = self["corpus"]
        keys = ("seed", "n_profiles", "qa_per_profile", "n_attributes", "n_perturbations",
                "n_probe_entities", "n_distractors")
        return {k: c[k] for k in keys}

    def split_spec(self) -> SplitSpec:
        c = self["corpus"]
        return SplitSpec(c["forget_fraction"], c["split_seed"])

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self["model"])

    def finetune_settings(self) -> TrainSettings:
        f = self["finetune"]
        return TrainSettings(
            learning_rate=f["learning_rate"], batch_size=f["batch_size"], epochs=f["epochs"],
            weight_decay=f["weight_decay"], seed=f["seed"],
        )

    def unlearn_settings(self) -> TrainSettings:
        u = self["unlearn"]
        return TrainSettings(
            learning_rate=u["learning_rate"], batch_size=u["batch_size"], epochs=u["epochs"],
            weight_decay=u["weight_decay"], seed=u["seed"],
            preference_score=u["preference_score"],
        )

    def evaluate_epochs(self) -> list[int]:
        raw = str(self["unlearn"]["evaluate_epochs"])
        try:
            epochs = sorted({int(tok) for tok in raw.split(",") if tok.strip()})
        except ValueError:
            raise ConfigError(f"evaluate_epochs must be comma-separated integers, got {raw!r}")
        if not epochs or epochs[0] < 1:
            raise ConfigError("evaluate_epochs needs at least one epoch >= 1")
        return epochs

    # serialisation ---------------------------------------------------------

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, kv in self.values.items():
            parser[section] = {k: _format(v) for k, v in kv.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def section_checksum(self, sections) -> str:
        payload = {s: {k: _format(v) for k, v in self.values[s].items()} for s in sections}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def checksum(self) -> str:
        return self.section_checksum(sorted(self.values))
