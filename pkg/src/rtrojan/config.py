"""Flat ``section.key = value`` experiment configuration with canonical serialization.

Example::

    dataset.kind = synthetic
    dataset.users = 200
    attack.name = rtrojan, random
    attack.outer_iterations = 10
    victims = wrmf, ncf
    victim.ncf.epochs = 50
    seeds = 0, 1, 2
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attack import AttackConfig
from .baselines import BASELINES
from .victims import VICTIMS

ATTACKS = ("rtrojan", *BASELINES)
BACKENDS = ("deterministic-template", "template", "causal-lm", "gpt2")
DATASET_KINDS = ("synthetic", "amazon", "amazon-json-lines", "yelp", "yelp-json", "directory")
LIST_KEYS = {"seeds", "victims", "attack.name", "dataset.scale"}


class ConfigError(ValueError):
    """Validation failure; ``errors`` maps field name to message."""

    def __init__(self, errors: dict[str, str]):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items())))


def parse_value(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_flat(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError({f"line {lineno}": f"expected 'key = value', got {raw.strip()!r}"})
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError({f"line {lineno}": "empty key"})
        if key in LIST_KEYS:
            out[key] = [parse_value(v) for v in value.split(",") if v.strip()]
        else:
            out[key] = parse_value(value)
    return out


def flatten(nested: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in nested.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def dump_flat(mapping: dict) -> str:
    """Canonical text: keys sorted, one ``key = value`` per line, trailing newline."""
    flat = flatten(mapping)
    return "".join(f"{k} = {format_value(flat[k])}\n" for k in sorted(flat))


def config_hash(mapping: dict) -> str:
    return hashlib.sha256(dump_flat(mapping).encode("utf-8")).hexdigest()


def seed_stream(seed: int, name: str) -> int:
    """Independent seed for a named randomness stream (data, attack, victim, backend)."""
    return (int(seed) * 7919 + zlib.crc32(name.encode("utf-8"))) % (2**31 - 1)


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    attacks: list[str] = field(default_factory=lambda: ["rtrojan"])
    attack: dict = field(default_factory=dict)
    victims: list[str] = field(default_factory=lambda: ["wrmf"])
    victim_params: dict = field(default_factory=dict)
    backend: dict = field(default_factory=lambda: {"kind": "deterministic-template"})
    detection: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    output: str = "runs/experiment"

    # -- conversion
    def to_flat(self) -> dict:
        flat = {
            "attack.name": list(self.attacks),
            "victims": list(self.victims),
            "seeds": list(self.seeds),
            "output": self.output,
        }
        for section in ("dataset", "backend", "detection"):
            for k, v in getattr(self, section).items():
                flat[f"{section}.{k}"] = v
        for k, v in self.attack.items():
            flat[f"attack.{k}"] = v
        for victim, params in self.victim_params.items():
            for k, v in params.items():
                flat[f"victim.{victim}.{k}"] = v
        return flat

    def canonical(self) -> str:
        return dump_flat(self.to_flat())

    def hash(self) -> str:
        return config_hash(self.to_flat())

    @classmethod
    def from_flat(cls, flat: dict) -> ExperimentConfig:
        cfg = cls(dataset={}, backend={}, attack={}, victim_params={}, detection={})
        errors = {}
        for key, value in flat.items():
            head, _, rest = key.partition(".")
            if key == "attack.name":
                cfg.attacks = [str(v) for v in (value if isinstance(value, list) else [value])]
            elif key == "victims":
                cfg.victims = [str(v) for v in (value if isinstance(value, list) else [value])]
            elif key == "seeds":
                cfg.seeds = value if isinstance(value, list) else [value]
            elif key == "output":
                cfg.output = str(value)
            elif head in ("dataset", "backend", "detection") and rest:
                getattr(cfg, head)[rest] = value
            elif head == "attack" and rest:
                cfg.attack[rest] = value
            elif head == "victim" and rest.count(".") == 1:
                victim, param = rest.split(".")
                cfg.victim_params.setdefault(victim, {})[param] = value
            else:
                errors[key] = "unknown configuration key"
        cfg.dataset.setdefault("kind", "synthetic")
        cfg.backend.setdefault("kind", "deterministic-template")
        if errors:
            raise ConfigError(errors)
        return cfg

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        return cls.from_flat(parse_flat(text))

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError({"config": f"file not found: {path}"})
        return cls.from_text(path.read_text(encoding="utf-8"))

    # -- validation
    def validate(self) -> ExperimentConfig:
        errors = {}
        kind = self.dataset.get("kind")
        if kind not in DATASET_KINDS:
            errors["dataset.kind"] = f"unknown dataset kind {kind!r}; choose from {list(DATASET_KINDS)}"
        elif kind != "synthetic" and not self.dataset.get("path"):
            errors["dataset.path"] = f"required for dataset kind {kind!r}"
        if not self.attacks:
            errors["attack.name"] = "at least one attack is required"
        for a in self.attacks:
            if a not in ATTACKS:
                errors["attack.name"] = f"unknown attack {a!r}; choose from {list(ATTACKS)}"
        known = {f.name for f in fields(AttackConfig)}
        for k in self.attack:
            if k not in known:
                errors[f"attack.{k}"] = "unknown attack parameter"
        lam = self.attack.get("lam")
        if lam is not None and not (isinstance(lam, (int, float)) and 0 <= lam <= 1):
            errors["attack.lam"] = f"must lie in [0, 1], got {lam!r}"
        for key in ("attack_size", "filler_size"):
            v = self.attack.get(key)
            if v is not None and not (isinstance(v, int) and v >= 1):
                errors[f"attack.{key}"] = f"must be a positive integer, got {v!r}"
        if not self.victims:
            errors["victims"] = "at least one victim is required"
        for v in self.victims:
            if v not in VICTIMS:
                errors["victims"] = f"unknown victim {v!r}; choose from {sorted(VICTIMS)}"
        for v in self.victim_params:
            if v not in VICTIMS:
                errors[f"victim.{v}"] = f"unknown victim {v!r}"
        if self.backend.get("kind") not in BACKENDS:
            errors["backend.kind"] = f"unknown text backend {self.backend.get('kind')!r}; choose from {list(BACKENDS)}"
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            errors["seeds"] = f"must be a non-empty list of integers, got {self.seeds!r}"
        if errors:
            raise ConfigError(errors)
        return self
