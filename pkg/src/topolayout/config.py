"""Flat ``key = value`` run configuration with two presets."""
from __future__ import annotations

from pathlib import Path

DESK = {
    "seed": 0,
    "run.epochs": 30,
    "run.batch_size": 32,
    "run.eval_every": 10,
    "run.out_dir": "runs/desk",
    "run.data_dir": "",
    "run.overfit_steps": 2000,
    "scene.seed": 0,
    "scene.num_samples": 200,
    "scene.num_objects": 8,
    "scene.points_per_object": 64,
    "scene.noise_clusters": 0,
    "scene.tau_pts": 32,
    "scene.k_min": 3,
    "scene.rho_min": 0.0,
    "scene.rho_max": 0.5,
    "actgr.T": 3,
    "actgr.l_base": 2,
    "actgr.d": 64,
    "actgr.anchor_mode": "single",
    "diff.steps": 100,
    "diff.schedule": "linear",
    "diff.hidden": 128,
    "diff.points_per_node": 32,
    "nafl.K": 16,
    "nafl.alpha": 20.0,
    "nafl.beta": 0.8,
    "nafl.w_min": 0.1,
    "nafl.w_max": 1.2,
    "nafl.per_node": False,
    "nafl.enabled": True,
    "sma.queue_len": 256,
    "sma.protos.obj": 64,
    "sma.protos.edge": 32,
    "sma.protos.trip": 48,
    "sma.tau": 0.1,
    "sma.sinkhorn_eps": 0.05,
    "sma.sinkhorn_iters": 10,
    "sma.lambda": 0.1,
    "sma.ema_alpha": 0.99,
    "sma.mode": "swav",
    "sma.warmup": True,
    "optim.lr": 1e-3,
    "optim.weight_decay": 1e-4,
    "optim.warmup_epochs": 3,
    "optim.clip_norm": 0.0,
    "eval.seed": 0,
    "eval.recover_samples": 8,
    "eval.recover_points": 16,
}

REFERENCE = dict(
    DESK,
    **{
        "run.epochs": 150,
        "run.out_dir": "runs/reference",
        "scene.points_per_object": 1024,
        "scene.tau_pts": 512,
        "actgr.d": 512,
        "diff.hidden": 512,
        "diff.points_per_node": 256,
        "sma.queue_len": 3840,
        "sma.protos.obj": 1000,
        "sma.protos.edge": 200,
        "sma.protos.trip": 500,
        "sma.ema_alpha": 0.996,
        "optim.warmup_epochs": 5,
    },
)

PRESETS = {"desk": DESK, "reference": REFERENCE}
ALIASES = {"lambda": "sma.lambda", "epochs": "run.epochs", "out": "run.out_dir", "data": "run.data_dir"}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value, default):
    if isinstance(value, str):
        text = value.strip()
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        try:
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
        return text
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if type(value) is not type(default):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def make_config(preset: str = "desk", overrides: dict | None = None) -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = dict(PRESETS[preset])
    for key, value in (overrides or {}).items():
        key = ALIASES.get(key, key)
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value, PRESETS[preset][key])
    validate(cfg)
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Preset (``preset = ...`` in the file, default desk), then file values, then overrides."""
    values = parse_config_text(Path(path).read_text(), str(path)) if path else {}
    preset = values.pop("preset", "desk")
    merged = dict(values)
    merged.update(overrides or {})
    return make_config(preset, merged)


def dump_config(cfg: dict) -> str:
    def fmt(v):
        return str(v).lower() if isinstance(v, bool) else str(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in cfg.items())


def validate(cfg: dict) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    need(cfg["run.epochs"] >= 1, "run.epochs", "must be >= 1")
    need(cfg["run.batch_size"] >= 1, "run.batch_size", "must be >= 1")
    need(cfg["run.eval_every"] >= 1, "run.eval_every", "must be >= 1")
    need(cfg["scene.num_samples"] >= 1, "scene.num_samples", "must be >= 1")
    need(cfg["scene.k_min"] >= 1, "scene.k_min", "must be >= 1")
    need(0.0 <= cfg["scene.rho_min"] <= cfg["scene.rho_max"] <= 1.0, "scene.rho_max", "need 0 <= rho_min <= rho_max <= 1")
    need(cfg["actgr.T"] >= 0, "actgr.T", "must be >= 0")
    need(cfg["actgr.l_base"] >= 1, "actgr.l_base", "must be >= 1")
    need(cfg["actgr.d"] >= 1, "actgr.d", "must be >= 1")
    mode = cfg["actgr.anchor_mode"]
    need(mode in ("single", "global", "none") or (mode.startswith("multi(") and mode.endswith(")")
                                                  and mode[6:-1].isdigit()),
         "actgr.anchor_mode", "one of single, multi(k), global, none")
    need(cfg["diff.steps"] >= 1, "diff.steps", "must be >= 1")
    need(cfg["diff.schedule"] in ("linear", "cosine"), "diff.schedule", "linear or cosine")
    need(cfg["diff.points_per_node"] >= 1, "diff.points_per_node", "must be >= 1")
    need(cfg["nafl.K"] >= 2, "nafl.K", "must be >= 2")
    need(0.0 <= cfg["nafl.beta"] <= 1.0, "nafl.beta", "must lie in [0, 1]")
    need(cfg["nafl.w_min"] <= cfg["nafl.w_max"], "nafl.w_max", "must be >= nafl.w_min")
    need(cfg["sma.queue_len"] >= 0, "sma.queue_len", "must be >= 0")
    for lv in ("obj", "edge", "trip"):
        need(cfg[f"sma.protos.{lv}"] >= 1, f"sma.protos.{lv}", "must be >= 1")
    need(cfg["sma.tau"] > 0, "sma.tau", "must be > 0")
    need(cfg["sma.sinkhorn_eps"] > 0, "sma.sinkhorn_eps", "must be > 0")
    need(cfg["sma.lambda"] >= 0, "sma.lambda", "must be >= 0")
    need(0.0 <= cfg["sma.ema_alpha"] <= 1.0, "sma.ema_alpha", "must lie in [0, 1]")
    need(cfg["sma.mode"] in ("swav", "mse"), "sma.mode", "swav or mse")
    need(cfg["optim.lr"] >= 0, "optim.lr", "must be >= 0")
    need(0 <= cfg["optim.warmup_epochs"] <= cfg["run.epochs"], "optim.warmup_epochs", "must lie in [0, run.epochs]")
