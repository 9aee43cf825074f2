"""Flat "key = value" run configuration with desk and full-scale profiles.

Unknown keys are rejected; every command writes the fully-resolved config
next to its outputs.  Keys prefixed ``sim_`` configure the simulator and
are passed through to :func:`debiasrec.sim.config_from_pairs`.
"""

from dataclasses import dataclass, fields, replace
from typing import Dict, Optional


@dataclass(frozen=True)
class RunConfig:
    # model dimensions
    word_dim: int = 20
    bias_dim: int = 12
    filters: int = 24
    window: int = 3
    att_dim: int = 20
    l_max: int = 10
    m_max: int = 15
    p_max: int = 400
    # training
    dropout: float = 0.2
    lr: float = 0.003
    batch: int = 32
    k_negatives: int = 2
    epochs: int = 4
    patience: int = 2
    seed: int = 7
    # behaviour switches
    scoring_mode: str = "full"        # full | no_bacp | no_debias | pal
    brm_variant: str = "interaction"  # none | position | size | linear | interaction
    baum_enabled: bool = True
    # data handling
    val_fraction: float = 0.2
    min_count: int = 1
    split_time: Optional[int] = None  # None = use dataset manifest / quantile
    pretrained_embeddings: str = ""

    def validate(self):
        from .bias import BrmVariant
        from .model import ScoringMode
        ScoringMode(self.scoring_mode)
        BrmVariant(self.brm_variant)
        for name in ("word_dim", "bias_dim", "filters", "att_dim", "l_max",
                     "m_max", "p_max", "batch", "k_negatives", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config key {name} must be positive")
        if self.window % 2 != 1:
            raise ValueError("conv window must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        return self


def desk_profile() -> RunConfig:
    """Small dimensions for laptop/CI runs; the tested configuration."""
    return RunConfig()


def paper_profile() -> RunConfig:
    """Full-scale hyperparameters."""
    return RunConfig(word_dim=300, bias_dim=200, filters=400, window=3,
                     att_dim=200, l_max=30, m_max=50, p_max=400,
                     dropout=0.2, lr=0.0001, batch=32, k_negatives=4,
                     epochs=5, patience=2)


def gradcheck_profile() -> RunConfig:
    """Tiny dimensions pinned for fast finite-difference verification."""
    return RunConfig(word_dim=16, bias_dim=16, filters=16, att_dim=16,
                     l_max=8, m_max=4, k_negatives=2, dropout=0.0,
                     epochs=1, seed=3)


PROFILES = {"desk": desk_profile, "paper": paper_profile,
            "gradcheck": gradcheck_profile}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name == "split_time":
        return None if raw in ("auto", "none", "") else int(raw)
    if name in ("scoring_mode", "brm_variant", "pretrained_embeddings"):
        return raw
    if name == "baum_enabled":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"boolean key {name} got {raw!r}")
    if name in ("dropout", "lr", "val_fraction"):
        return float(raw)
    return int(raw)


def parse_pairs(text: str) -> Dict[str, str]:
    """Parse "key = value" lines; '#' starts a comment."""
    pairs: Dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in pairs:
            raise ValueError(f"config line {ln}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def apply_pairs(base: RunConfig, pairs: Dict[str, str]) -> RunConfig:
    """Override ``base`` with non-simulator pairs; rejects unknown keys."""
    updates = {}
    for key, raw in pairs.items():
        if key.startswith("sim_"):
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key: {key!r}")
        updates[key] = _parse_value(key, raw)
    cfg = replace(base, **updates)
    cfg.validate()
    return cfg


def sim_pairs(pairs: Dict[str, str]) -> Dict[str, str]:
    return {k: v for k, v in pairs.items() if k.startswith("sim_")}


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "split_time":
            value = "auto" if value is None else value
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path: Optional[str], profile: str = "desk",
                overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Profile defaults, then config file, then explicit overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg = apply_pairs(cfg, parse_pairs(fh.read()))
    if overrides:
        cfg = apply_pairs(cfg, overrides)
    return cfg
