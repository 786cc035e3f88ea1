"""Experiment configuration: flat ``key = value`` text files.

Blank lines and ``#`` comments are ignored. Unknown keys, duplicate keys and
unparsable values raise :class:`ConfigError` carrying the file line number.

All randomness derives from ``seed`` through fixed role offsets
(:data:`SEED_OFFSETS`): ``sub_seed = seed + offset``, with per-round and
per-client streams seeded by ``[sub_seed, round, client]``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction

METHODS = (
    "framp",
    "framp_no_align",
    "shared_magnitude",
    "shared_static",
    "shared_rolling",
    "framp_layerwise",
    "framp_onehot",
)

SEED_OFFSETS = {
    "data": 1,
    "partition": 2,
    "extractor": 3,
    "capacity": 4,
    "init": 5,
    "participants": 6,
    "batches": 7,
    "noise": 8,
    "holdout": 9,
}

DEFAULT_LEVELS = (1 / 64, 1 / 16, 1 / 4, 1.0)
FIVE_LEVELS = (0.04, 0.16, 0.36, 0.64, 1.0)


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None, key: str | None = None):
        self.path, self.line, self.key, self.message = path, line, key, message
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass
class Config:
    method: str = "framp"
    seed: int = 0
    rounds: int = 60
    # data
    N: int = 20
    C: int = 8
    k: int = 16
    n_per_class: int = 200
    class_sep: float = 3.0
    alpha: float = 0.3
    partition: str = "dirichlet"
    # model
    layer_widths: tuple[int, ...] = (16, 64, 32, 8)
    activation: str = "tanh"
    # system heterogeneity
    levels: tuple[float, ...] = DEFAULT_LEVELS
    participation: float = 0.1
    # local training
    local_steps: int = 20
    batch_size: int = 16
    lr: float = 0.1
    lam: float = 0.5
    # hypernetwork
    l: int = 128
    hn_hidden: int = 64
    hn_lr: float = 0.1
    hn_out_scale: float = 0.1
    hn_bias_init: str = "fan_in"
    hn_aggregate: str = "mean"
    # evaluation and outputs
    eval_every: int = 10
    checkpoint_every: int = 0
    union_gammas: tuple[float, ...] = ()
    holdout: str = "none"
    holdout_frac: float = 0.2
    # prototype perturbation stress tests
    proto_noise: str = "none"
    proto_noise_a: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def check(ok, key, msg):
            if not ok:
                raise ConfigError(msg, key=key)

        choices = {
            "method": METHODS,
            "partition": ("dirichlet", "iid_clone"),
            "activation": ("relu", "tanh"),
            "hn_bias_init": ("zero", "fan_in"),
            "hn_aggregate": ("mean", "sum"),
            "holdout": ("none", "per_group", "smallest"),
            "proto_noise": ("none", "gaussian", "rotation"),
        }
        for key, allowed in choices.items():
            value = getattr(self, key)
            check(value in allowed, key, f"{key} must be one of {', '.join(allowed)}, got {value!r}")
        check(bool(self.levels) and all(0 < g <= 1 for g in self.levels), "levels",
              "levels must be a non-empty list of values in (0, 1]")
        check(all(0 < g <= 1 for g in self.union_gammas), "union_gammas", "union_gammas must lie in (0, 1]")
        check(0 < self.participation <= 1, "participation", "participation must be in (0, 1]")
        check(0 < self.holdout_frac < 1, "holdout_frac", "holdout_frac must be in (0, 1)")
        check(self.C >= 2, "C", "C must be >= 2")
        check(self.k >= 2, "k", "k must be >= 2")
        check(self.alpha > 0, "alpha", "alpha must be positive")
        check(self.class_sep >= 0, "class_sep", "class_sep must be non-negative")
        check(len(self.layer_widths) >= 2 and self.layer_widths[0] == self.k and self.layer_widths[-1] == self.C,
              "layer_widths", f"layer_widths must start at k={self.k} and end at C={self.C}")
        check(all(w >= 1 for w in self.layer_widths), "layer_widths", "layer widths must be positive")
        for name in ("rounds", "N", "n_per_class", "l", "hn_hidden", "batch_size"):
            check(getattr(self, name) >= 1, name, f"{name} must be >= 1")
        for name in ("local_steps", "eval_every", "checkpoint_every"):
            check(getattr(self, name) >= 0, name, f"{name} must be >= 0")
        for name in ("lam", "proto_noise_a"):
            check(getattr(self, name) >= 0, name, f"{name} must be non-negative")
        for name in ("lr", "hn_lr", "hn_out_scale"):
            check(getattr(self, name) > 0, name, f"{name} must be positive")
        check(self.N >= len(self.levels), "N", "N must be at least the number of capacity levels")
        check(self.method != "framp_onehot" or self.N <= self.l, "N", "framp_onehot needs N <= l")

    def sub_seed(self, role: str) -> int:
        return self.seed + SEED_OFFSETS[role]

    @property
    def eval_gammas(self) -> tuple[float, ...]:
        return self.union_gammas or self.levels

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_float(text: str) -> float:
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(_parse_float(t) for t in text.split(",") if t.strip()) if text else ()


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}
_PARSERS = {
    "layer_widths": _parse_ints,
    "levels": _parse_floats,
    "union_gammas": _parse_floats,
}


def parse_value(key: str, text: str):
    if key in _PARSERS:
        return _PARSERS[key](text)
    default = _FIELDS[key].default
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return _parse_float(text)
    return text.strip()


def parse_config_text(text: str, path=None, lines: dict | None = None) -> dict:
    """Parse config text; ``lines`` (if given) receives each key's line number."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        try:
            values[key] = parse_value(key, value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})", path, lineno) from None
        if lines is not None:
            lines[key] = lineno
    return values


def load_config(path, **overrides) -> Config:
    """Read ``path`` and apply non-None ``overrides`` (CLI flags win)."""
    lines: dict = {}
    with open(path) as fh:
        values = parse_config_text(fh.read(), path, lines)
    given = {k: v for k, v in overrides.items() if v is not None}
    values.update(given)
    values.setdefault("layer_widths", _default_widths(values))
    try:
        return Config(**values)
    except ConfigError as exc:
        # anchor to the offending line unless the value came from an override
        line = None if exc.key in given else lines.get(exc.key)
        raise ConfigError(exc.message, path, line, exc.key) from None


def _default_widths(values: dict) -> tuple[int, ...]:
    k = values.get("k", Config.k)
    C = values.get("C", Config.C)
    return (k, 64, 32, C)


def dump_config(cfg: Config) -> str:
    lines = []
    for name, value in cfg.as_dict().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
