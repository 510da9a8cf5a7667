"""Flat ``key = value`` run configuration.

One option per line; lines starting with ``#`` are comments. Every option has a fixed
default, so a written snapshot fully determines a run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .evaluation.defense import DefenseSpec
from .numerics import ScaleMask
from .optimizer import AttackConfig

# options that change what an attack produces; eval-time options are excluded
ATTACK_KEYS = (
    "eps_v", "eps_t", "alpha_v", "alpha_t", "lam", "K", "batch", "s_k", "query_budget",
    "theta", "sigma", "seed", "target_text", "common_dim", "targeted", "levels",
    "keep_approx", "keep_detail", "level_weights", "oracle_mode", "victim_seed", "tau",
    "family_share", "corpus_seed", "n_images", "m_prompts", "image_size",
    "image_train_frac", "prompt_train_frac",
)

ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class RunConfig:
    # attack
    eps_v: float = 8 / 255
    eps_t: float = 0.5
    alpha_v: float = 0.01
    alpha_t: float = 0.005
    lam: float = 0.1
    K: int = 10
    batch: int = 16
    s_k: int = 4
    query_budget: int = 70_000
    theta: float = 0.55
    sigma: float = 0.01
    seed: int = 0
    target_text: str = "I am sorry"
    common_dim: int = 128
    targeted: bool = True
    levels: int = 3
    keep_approx: bool = False
    keep_detail: tuple[bool, ...] = (True, True, True)
    level_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    oracle_mode: str = "loss"
    # victim
    victim_seed: int = 1
    tau: float = 0.1
    family_share: float = 0.5
    # corpus
    corpus_seed: int = 0
    n_images: int = 16
    m_prompts: int = 8
    image_size: int = 64
    image_train_frac: float = 0.5
    prompt_train_frac: float = 0.5
    # transfer
    victim_seeds: tuple[int, ...] = (1, 2)
    corpus_seeds: tuple[int, ...] = (0, 1)
    # defend
    defense_kinds: tuple[str, ...] = ("none", "randomization", "quantize", "dct_quantize")
    resize_min: float = 0.9
    resize_max: float = 1.0
    bits: int = 4
    quality: int = 50
    defense_seed: int = 0
    # sweep-sk / ablate / oracle-check
    sk_values: tuple[int, ...] = (1, 2, 4, 8)
    ablate_modes: tuple[str, ...] = ("full", "no_text", "no_image", "no_joint")
    check_seeds: int = 200
    check_ks: tuple[int, ...] = (10, 100)
    # execution
    workers: int = 1

    def __post_init__(self):
        if self.oracle_mode not in ("loss", "text"):
            raise ConfigError(f"oracle_mode must be 'loss' or 'text', got {self.oracle_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if len(self.keep_detail) != self.levels or len(self.level_weights) != self.levels:
            raise ConfigError("keep_detail and level_weights need one entry per level")
        size = self.image_size
        if size < 8 or size & (size - 1):
            raise ConfigError(f"image_size={size} is not a power of two >= 8")
        try:
            self.attack_config()
            self.defense_specs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def mask(self) -> ScaleMask:
        return ScaleMask(self.keep_approx, self.keep_detail, self.level_weights)

    def attack_config(self) -> AttackConfig:
        return AttackConfig(
            eps_v=self.eps_v, eps_t=self.eps_t, alpha_v=self.alpha_v, alpha_t=self.alpha_t,
            lam=self.lam, K=self.K, batch=self.batch, s_k=self.s_k,
            query_budget=self.query_budget, theta=self.theta, sigma=self.sigma,
            seed=self.seed, target_text=self.target_text, mask=self.mask(),
            common_dim=self.common_dim, targeted=self.targeted,
        )

    def defense_specs(self) -> list[DefenseSpec]:
        return [
            DefenseSpec(kind, self.resize_min, self.resize_max, self.bits, self.quality, self.defense_seed)
            for kind in self.defense_kinds
        ]

    def image_dims(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, 3)

    # -- serialisation ----------------------------------------------------

    def to_text(self) -> str:
        lines = ["# run configuration snapshot"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def attack_hash(self) -> str:
        text = "\n".join(f"{k}={_format(getattr(self, k))}" for k in ATTACK_KEYS)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float(s: str) -> float:
    s = s.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


_DEFAULTS = RunConfig.__dataclass_fields__


def _parse_value(name: str, raw: str):
    default = _DEFAULTS[name].default
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return _parse_float(raw)
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        sample = default[0] if default else ""
        if isinstance(sample, bool):
            return tuple(_parse_bool(x) for x in items)
        if isinstance(sample, int):
            return tuple(int(x) for x in items)
        if isinstance(sample, float):
            return tuple(_parse_float(x) for x in items)
        return tuple(items)
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in _DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown option {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return RunConfig(**parse_config_text(p.read_text(), str(p)))
