"""Run configuration: per-kind defaults, flat YAML files, validation, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or unsupported experiment kinds."""


KINDS = ("online_gridworld", "offline_gridworld", "cartpole", "rmse_curve",
         "time_bench", "loss_diag")

_REJECTED = {
    "atari": "Atari experiments need pixel stacks and convolutional agents; "
             "they are not supported at desk scale",
    "healthcare": "the healthcare study relies on proprietary patient records "
                  "and is not supported",
    "sepsis": "the healthcare study relies on proprietary patient records "
              "and is not supported",
}

_GRID = {
    "env.width": 14,
    "env.height": 7,
    "env.max_steps": 100,
    "layout_seed": 7,
}

_GRID_NET = {
    "infernet.hidden_layers": 3,
    "infernet.units": 256,
    "infernet.activation": "leaky_relu",
    "infernet.dropout": 0.0,
    "infernet.batch_episodes": 32,
    "infernet.adam_beta1": 0.9,
    "infernet.adam_beta2": 0.999,
    "infernet.adam_epsilon": 1e-8,
}

_GP = {
    "gp.lengthscale": 1.0,
    "gp.signal_variance": 1.0,
    "gp.noise_variance": 0.1,
    "gp.jitter": 1e-8,
}

_DEFAULTS = {
    "online_gridworld": {
        **_GRID, **_GRID_NET,
        "reward_mode": ["immediate", "delayed", "inferred"],
        "agent": "q_learning",
        "noise.sigma": 0.0,
        "seeds": [0, 1, 2, 3, 4],
        "infernet.lr": 1e-4,
        "infernet.train_steps": 500_000,
        "infernet.buffer": 500,
        "infernet.pretrain_episodes": 500,
        "infernet.pretrain_steps": 500,
        "infernet.train_every": 1,
        "agent.episodes": 2000,
        "agent.gamma": 0.9,
        "agent.lr": 0.1,
        "agent.eps_start": 1.0,
        "agent.eps_end": 0.05,
        "agent.eps_decay_fraction": 0.5,
        "td.lambda": 0.91,
        "td.alpha": 0.1,
        "td.traces": "dutch",
        "eval.interval": 50,
        "eval.episodes": 50,
    },
    "offline_gridworld": {
        **_GRID, **_GRID_NET, **_GP,
        "reward_mode": ["immediate", "delayed", "inferred", "gp"],
        "agent": "q_learning",
        "noise.sigma": 0.0,
        "seeds": [0, 1, 2, 3, 4],
        "dataset_sizes": [10, 25, 50, 100, 150, 200, 300, 500],
        "infernet.lr": 1e-3,
        "infernet.train_steps": 50_000,
        "agent.train_steps": 5000,
        "agent.gamma": 0.9,
        "agent.lr": 0.1,
        "agent.batch": 32,
        "eval.episodes": 50,
    },
    "rmse_curve": {
        **_GRID, **_GRID_NET, **_GP,
        "reward_mode": ["inferred", "gp"],
        "noise_levels": [0.0, 0.3],
        "seeds": [0],
        "dataset_sizes": [10, 25, 50, 100, 150, 200, 300, 500],
        "infernet.lr": 1e-3,
        "infernet.train_steps": 50_000,
    },
    "time_bench": {
        **_GRID, **_GRID_NET, **_GP,
        "seeds": [0],
        "bench.sizes": [250, 500, 1000, 2000],
        "bench.repeats": 3,
        "bench.infernet_epochs": 200,
        "infernet.lr": 1e-3,
    },
    "loss_diag": {
        **_GRID, **_GRID_NET,
        "seeds": [0],
        "noise.sigma": 0.0,
        "diag.episodes": 200,
        "diag.checkpoints": 100,
        "infernet.lr": 1e-3,
        "infernet.train_steps": 50_000,
    },
    "cartpole": {
        "reward_mode": ["immediate", "delayed", "inferred"],
        "agent": "dqn",
        "noise.sigma": 0.0,
        "seeds": list(range(20)),
        "env.max_steps": 200,
        "infernet.hidden_layers": 3,
        "infernet.units": 64,
        "infernet.activation": "relu",
        "infernet.dropout": 0.2,
        "infernet.lr": 1e-4,
        "infernet.batch_episodes": 10,
        "infernet.adam_beta1": 0.9,
        "infernet.adam_beta2": 0.999,
        "infernet.adam_epsilon": 1e-8,
        "infernet.train_steps": 60_000,
        "infernet.buffer": 500,
        "infernet.pretrain_episodes": 50,
        "infernet.pretrain_steps": 50,
        "infernet.train_every": 1,
        "agent.train_steps": 150_000,
        "agent.gamma": 0.99,
        "agent.batch": 32,
        "agent.buffer": 500_000,
        "agent.hidden_layers": 2,
        "agent.units": 32,
        "agent.lr": 2.5e-4,
        "agent.target_sync": 500,
        "agent.learning_starts": 1000,
        "agent.eps_start": 1.0,
        "agent.eps_end": 0.05,
        "agent.eps_decay_fraction": 0.1,
        "eval.interval": 5000,
        "eval.episodes": 10,
    },
}

# budgets divided by 10 under the fast profile
_FAST_KEYS = ("infernet.train_steps", "infernet.pretrain_steps", "agent.train_steps")

_CHOICES = {
    "agent": {"q_learning", "td_lambda", "dqn"},
    "td.traces": {"dutch", "accumulating", "replacing"},
    "infernet.activation": {"leaky_relu", "relu"},
}
_MODES = {"online_gridworld": {"immediate", "delayed", "inferred"},
          "cartpole": {"immediate", "delayed", "inferred"},
          "offline_gridworld": {"immediate", "delayed", "inferred", "gp"},
          "rmse_curve": {"inferred", "gp"}}
_POSITIVE_INT = {"infernet.hidden_layers", "infernet.units", "infernet.batch_episodes",
                 "infernet.train_steps", "infernet.buffer", "infernet.pretrain_episodes",
                 "infernet.train_every", "agent.episodes", "agent.batch", "agent.buffer",
                 "agent.train_steps", "agent.hidden_layers", "agent.units",
                 "agent.target_sync", "eval.interval", "eval.episodes", "env.max_steps",
                 "env.width", "env.height", "bench.repeats", "bench.infernet_epochs",
                 "diag.episodes", "diag.checkpoints"}
_UNIT_INTERVAL = {"agent.gamma", "td.lambda", "agent.eps_start", "agent.eps_end",
                  "agent.eps_decay_fraction"}
_POSITIVE_REAL = {"infernet.lr", "agent.lr", "td.alpha", "gp.lengthscale",
                  "gp.signal_variance", "infernet.adam_epsilon"}
_NON_NEGATIVE = {"noise.sigma", "gp.noise_variance", "gp.jitter",
                 "infernet.pretrain_steps", "agent.learning_starts"}


def defaults(kind):
    if kind in _REJECTED:
        raise ConfigError(f"experiment kind {kind!r} rejected: {_REJECTED[kind]}")
    if kind not in _DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    return copy.deepcopy(_DEFAULTS[kind])


class RunConfig:
    """Resolved configuration: kind-specific defaults overlaid with overrides.

    Values are read with ``cfg["infernet.lr"]``. Instances are treated as
    immutable; :meth:`replace` returns a modified copy.
    """

    def __init__(self, kind, overrides=None, out_dir=None, fast=False):
        values = defaults(kind)
        for key, value in (overrides or {}).items():
            if key in ("experiment", "kind"):
                continue
            if key not in values:
                raise ConfigError(f"unknown key {key!r} for experiment kind {kind!r}")
            values[key] = value
        self.kind = kind
        self.out_dir = out_dir
        self.fast = bool(fast)
        self._values = values
        self._validate()
        if self.fast:
            for key in _FAST_KEYS:
                if values.get(key):
                    values[key] = max(1, values[key] // 10)

    def _validate(self):
        v = self._values
        for key, value in v.items():
            if key in _POSITIVE_INT and not (_is_int(value) and value > 0):
                raise ConfigError(f"{key} must be a positive integer, got {value!r}")
            if key in _UNIT_INTERVAL and not (_is_real(value) and 0.0 <= value <= 1.0):
                raise ConfigError(f"{key} must lie in [0, 1], got {value!r}")
            if key in _POSITIVE_REAL and not (_is_real(value) and value > 0):
                raise ConfigError(f"{key} must be positive, got {value!r}")
            if key in _NON_NEGATIVE and not (_is_real(value) and value >= 0):
                raise ConfigError(f"{key} must be non-negative, got {value!r}")
            if key in _CHOICES and value not in _CHOICES[key]:
                raise ConfigError(f"{key} must be one of {sorted(_CHOICES[key])}, got {value!r}")
        for key in ("infernet.adam_beta1", "infernet.adam_beta2"):
            if key in v and not (_is_real(v[key]) and 0.0 <= v[key] < 1.0):
                raise ConfigError(f"{key} must lie in [0, 1), got {v[key]!r}")
        if not 0.0 <= v.get("infernet.dropout", 0.0) < 1.0:
            raise ConfigError("infernet.dropout must lie in [0, 1)")
        seeds = v["seeds"]
        if (not isinstance(seeds, list) or not seeds
                or not all(_is_int(s) and s >= 0 for s in seeds)):
            raise ConfigError(f"seeds must be a non-empty list of non-negative ints, got {seeds!r}")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        if "reward_mode" in v:
            modes = v["reward_mode"]
            if isinstance(modes, str):
                modes = v["reward_mode"] = [modes]
            bad = [m for m in modes if m not in _MODES[self.kind]]
            if not modes or bad:
                raise ConfigError(
                    f"reward_mode for {self.kind} must be drawn from "
                    f"{sorted(_MODES[self.kind])}, got {modes!r}")
        agent = v.get("agent")
        if self.kind == "cartpole" and agent != "dqn":
            raise ConfigError("cartpole runs use the dqn agent")
        if self.kind != "cartpole" and agent == "dqn":
            raise ConfigError("the dqn agent is only available for cartpole")
        if self.kind == "offline_gridworld" and agent != "q_learning":
            raise ConfigError("offline runs train a q_learning agent")
        for key in ("dataset_sizes", "bench.sizes"):
            if key in v:
                sizes = v[key]
                if (not isinstance(sizes, list) or not sizes
                        or not all(_is_int(n) and n > 0 for n in sizes)
                        or sorted(set(sizes)) != sizes):
                    raise ConfigError(f"{key} must be a strictly increasing list of "
                                      f"positive ints, got {sizes!r}")
        if "noise_levels" in v:
            levels = v["noise_levels"]
            if not isinstance(levels, list) or not levels or not all(
                    _is_real(s) and s >= 0 for s in levels):
                raise ConfigError(f"noise_levels must be non-negative reals, got {levels!r}")
        if "bench.sizes" in v and len(v["bench.sizes"]) < 2:
            raise ConfigError("bench.sizes needs at least two sizes to fit a slope")
        if "diag.checkpoints" in v and v["diag.checkpoints"] > v["infernet.train_steps"]:
            raise ConfigError("diag.checkpoints cannot exceed infernet.train_steps")

    def __getitem__(self, key):
        return self._values[key]

    def get(self, key, default=None):
        return self._values.get(key, default)

    def __contains__(self, key):
        return key in self._values

    @property
    def seeds(self):
        return list(self._values["seeds"])

    def resolved(self):
        """Plain dict of every resolved value, including the kind and profile."""
        out = {"experiment": self.kind, "fast": self.fast}
        out.update(copy.deepcopy(self._values))
        return out

    def hash(self):
        canon = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def replace(self, **overrides):
        """Copy with dotted-key overrides given as ``replace(**{"infernet.lr": 1e-3})``."""
        values = {k: v for k, v in self._values.items()}
        values.update(overrides)
        cfg = RunConfig(self.kind, out_dir=self.out_dir)
        cfg.fast = self.fast
        for key in overrides:
            if key not in cfg._values:
                raise ConfigError(f"unknown key {key!r} for experiment kind {self.kind!r}")
        cfg._values = values
        cfg._validate()
        return cfg

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.resolved() == other.resolved()

    def __repr__(self):
        return f"RunConfig({self.kind!r}, hash={self.hash()[:12]})"


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def from_mapping(data, kind=None, out_dir=None, fast=False):
    """Build a config from a flat mapping; ``experiment`` names the kind."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a flat key/value mapping")
    data = dict(data)
    file_kind = data.pop("experiment", None)
    if kind is not None and file_kind is not None and kind != file_kind:
        raise ConfigError(f"config declares experiment {file_kind!r} but {kind!r} was requested")
    kind = kind or file_kind
    if kind is None:
        raise ConfigError("configuration does not name an experiment kind")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"nested sections are not allowed; use dotted keys ({nested[0]!r})")
    fast = bool(data.pop("fast", False)) or fast
    return RunConfig(kind, data, out_dir=out_dir, fast=fast)


def load_config(path, kind=None, out_dir=None, fast=False):
    """Read a flat YAML config file (``key: value`` lines with dotted keys)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_mapping(data, kind=kind, out_dir=out_dir, fast=fast)


def dump_config(config):
    return yaml.safe_dump(config.resolved(), sort_keys=True)
