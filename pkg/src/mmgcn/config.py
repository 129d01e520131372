"""Run configuration: defaults, validation, merging and fingerprinting."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

FUSIONS = ("mmgcn", "early", "late", "gated")
LOSSES = ("ce", "focal")
L2_MODES = ("squared", "norm")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


def canonical_modalities(mask: str) -> str:
    """'ta' -> 'at'; order is always a, v, t. Invalid masks are returned as given."""
    if not mask or set(mask) - set("avt") or len(set(mask)) != len(mask):
        return mask
    return "".join(m for m in "avt" if m in mask)


@dataclass(frozen=True)
class RunConfig:
    # graph network
    num_layers: int = 4
    alpha: float = 0.1
    eta: float = 0.5
    gamma: float = 0.7
    # widths
    d_h: int = 100
    d_s: int = 100
    d_mlp: int | None = None
    # regularisation and optimisation
    dropout: float = 0.4
    lr: float = 3e-4
    l2: float = 3e-5
    l2_mode: str = "squared"
    loss: str = "ce"
    focal_gamma: float = 2.0
    epochs: int = 60
    patience: int | None = None
    val_fraction: float = 0.1
    # variant
    fusion: str = "mmgcn"
    modalities: str = "avt"
    speaker_embedding: bool = True
    max_speakers: int | None = None
    seed: int = 0
    # paths
    corpus: str | None = None
    checkpoint: str | None = None
    report_dir: str | None = None

    def validate(self) -> "RunConfig":
        p = []
        if self.num_layers < 1:
            p.append(f"num_layers must be >= 1 (got {self.num_layers})")
        if not 0.0 < self.alpha < 1.0:
            p.append(f"alpha must be in (0, 1) (got {self.alpha})")
        if self.eta <= 0:
            p.append(f"eta must be > 0 (got {self.eta})")
        elif self.eta > math.e - 1:
            p.append(f"eta must be <= e - 1 so every layer's beta stays in (0, 1] (got {self.eta})")
        if self.gamma <= 0:
            p.append(f"gamma must be > 0 (got {self.gamma})")
        if self.d_h < 2 or self.d_h % 2:
            p.append(f"d_h must be even and >= 2 (got {self.d_h})")
        if self.d_s < 1:
            p.append(f"d_s must be >= 1 (got {self.d_s})")
        if self.d_mlp is not None and self.d_mlp < 1:
            p.append(f"d_mlp must be >= 1 (got {self.d_mlp})")
        if not 0.0 <= self.dropout < 1.0:
            p.append(f"dropout must be in [0, 1) (got {self.dropout})")
        if self.lr < 0:
            p.append(f"lr must be >= 0 (got {self.lr})")
        if self.l2 < 0:
            p.append(f"l2 must be >= 0 (got {self.l2})")
        if self.l2_mode not in L2_MODES:
            p.append(f"l2_mode must be one of {L2_MODES} (got {self.l2_mode!r})")
        if self.loss not in LOSSES:
            p.append(f"loss must be one of {LOSSES} (got {self.loss!r})")
        if self.focal_gamma < 0:
            p.append(f"focal_gamma must be >= 0 (got {self.focal_gamma})")
        if self.epochs < 0:
            p.append(f"epochs must be >= 0 (got {self.epochs})")
        if self.patience is not None and self.patience < 1:
            p.append(f"patience must be >= 1 (got {self.patience})")
        if not 0.0 <= self.val_fraction < 1.0:
            p.append(f"val_fraction must be in [0, 1) (got {self.val_fraction})")
        if self.fusion not in FUSIONS:
            p.append(f"fusion must be one of {FUSIONS} (got {self.fusion!r})")
        mods = self.modalities
        if not mods or set(mods) - set("avt") or len(set(mods)) != len(mods):
            p.append(f"modalities must be a non-empty subset of 'avt' (got {mods!r})")
        elif self.fusion == "gated" and len(mods) < 2:
            p.append("gated fusion needs at least two modalities")
        if self.max_speakers is not None and self.max_speakers < 1:
            p.append(f"max_speakers must be >= 1 (got {self.max_speakers})")
        if p:
            raise ConfigError(p)
        return self

    def replace(self, **changes) -> "RunConfig":
        if "modalities" in changes:
            changes["modalities"] = canonical_modalities(changes["modalities"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def model_dict(self) -> dict[str, Any]:
        """Fields that determine the parameter set and forward pass."""
        keep = ("num_layers", "alpha", "eta", "gamma", "d_h", "d_s", "d_mlp", "fusion",
                "modalities", "speaker_embedding", "max_speakers")
        return {k: getattr(self, k) for k in keep}

    def fingerprint(self) -> str:
        blob = json.dumps(self.model_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        cfg = cls(**dict(data))
        return cfg.replace(modalities=cfg.modalities)


def load_config_file(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: config file must hold a JSON object"])
    return data


def merge_config(file_values: Mapping[str, Any] | None, flag_values: Mapping[str, Any]) -> RunConfig:
    """Flags beat the config file, which beats built-in defaults. ``None`` flags are unset."""
    merged: dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return RunConfig.from_dict(merged)
