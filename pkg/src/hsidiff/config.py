"""Run configuration: INI documents with one section per pipeline stage.

Every run is driven by one file. Relative paths resolve against the file's
directory. The environment may override only the output directory
(``HSIDIFF_OUT_DIR``) and the device (``HSIDIFF_DEVICE``).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .hsio import NORMALIZE_MODES

REQUIRED = object()
PROFILES = ("indian_pines", "pavia_university", "salinas")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in self.problems))


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _ints(v: str) -> list:
    return [int(x) for x in v.replace(" ", "").split(",") if x]


def _floats(v: str) -> list:
    return [float(x) for x in v.replace(" ", "").split(",") if x]


def _pairs(v: str) -> list:
    out = []
    for item in v.replace(" ", "").split(","):
        if not item:
            continue
        t, f = item.split(":")
        out.append((int(t), int(f)))
    if not out:
        raise ValueError("expected timestep:feature_index pairs such as '5:1, 10:1'")
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(f"{x[0]}:{x[1]}" if isinstance(x, (list, tuple)) else str(x) for x in v)
    return str(v)


SCHEMA = {
    "run": {
        "seed": (int, 0),
        "out_dir": (str, "runs/default"),
        "deterministic": (_bool, True),
        "device": (str, "cpu"),
    },
    "data": {
        "path": (str, REQUIRED),
        "labels_path": (str, ""),
        "class_names": (str, ""),
        "name": (str, ""),
        "normalization": (str, "per-band-minmax"),
    },
    "split": {
        "mode": (str, "fraction"),
        "counts": (_ints, []),
        "fraction": (float, 0.1),
    },
    "schedule": {
        "T": (int, 500),
        "beta_start": (float, 1e-4),
        "beta_end": (float, 0.02),
        "kind": (str, "linear"),
    },
    "denoiser": {
        "base_width": (int, 64),
        "depth": (int, 3),
        "time_embed_dim": (int, 128),
    },
    "pretrain": {
        "steps": (int, 30000),
        "batch_size": (int, 128),
        "learning_rate": (float, 1e-4),
        "patch_size": (int, 32),
        "log_every": (int, 100),
        "checkpoint_every": (int, 1000),
        "val_batch_size": (int, 64),
    },
    "features": {
        "pairs": (_pairs, [(5, 1)]),
        "batch_size": (int, 256),
    },
    "pca": {
        "enabled": (_bool, True),
        "variance_fraction": (float, 0.999),
        "components": (int, 0),
    },
    "classifier": {
        "group_size": (int, 16),
        "embed_dim": (int, 64),
        "depth": (int, 5),
        "heads": (int, 4),
        "mlp_ratio": (float, 4.0),
        "skip_fusion": (str, "cross-layer"),
        "dropout": (float, 0.1),
        "pos_embed": (_bool, True),
        "standardize": (_bool, True),
    },
    "train": {
        "epochs": (int, 300),
        "batch_size": (int, 128),
        "learning_rate": (float, 1e-4),
    },
    "ablation": {
        "timesteps": (_ints, [5, 10, 100, 200, 400]),
        "feature_indices": (_ints, [0, 1, 2]),
        "fractions": (_floats, []),
    },
}


@dataclass
class RunConfig:
    values: dict
    source: Path | None = None
    overrides: dict = field(default_factory=dict)
    root: Path | None = None  # base for relative paths; defaults to the config file's directory

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def base_dir(self) -> Path:
        if self.root is not None:
            return self.root
        return self.source.parent if self.source else Path.cwd()

    def path(self, section: str, key: str) -> Path | None:
        raw = self.values[section][key]
        if not raw:
            return None
        p = Path(raw).expanduser()
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def out_dir(self) -> Path:
        p = Path(self.values["run"]["out_dir"]).expanduser()
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    def split_spec(self):
        s = self.values["split"]
        return float(s["fraction"]) if s["mode"] == "fraction" else list(s["counts"])

    def digest(self, *sections) -> str:
        blob = json.dumps({s: self.values[s] for s in sections}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_fmt(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def validate(self):
        problems = []
        v = self.values
        data = self.path("data", "path")
        if data is None or not data.exists():
            problems.append(f"data.path: file not found: {data}")
        for key in ("labels_path", "class_names"):
            p = self.path("data", key)
            if p is not None and not p.exists():
                problems.append(f"data.{key}: file not found: {p}")
        if v["data"]["normalization"] not in NORMALIZE_MODES:
            problems.append(f"data.normalization: must be one of {NORMALIZE_MODES}")
        mode = v["split"]["mode"]
        if mode not in ("fraction", "counts"):
            problems.append("split.mode: must be 'fraction' or 'counts'")
        elif mode == "counts" and not v["split"]["counts"]:
            problems.append("split.counts: required when split.mode = counts")
        elif mode == "fraction" and not 0.0 <= v["split"]["fraction"] <= 1.0:
            problems.append("split.fraction: must lie in [0, 1]")
        sch = v["schedule"]
        if sch["T"] < 1:
            problems.append("schedule.T: must be >= 1")
        if not 0 < sch["beta_start"] <= sch["beta_end"] < 1:
            problems.append("schedule.beta_start/beta_end: need 0 < beta_start <= beta_end < 1")
        for t, f in v["features"]["pairs"]:
            if not 1 <= t <= sch["T"]:
                problems.append(f"features.pairs: timestep {t} outside [1, {sch['T']}]")
            if not 0 <= f < v["denoiser"]["depth"]:
                problems.append(f"features.pairs: feature index {f} outside [0, {v['denoiser']['depth'] - 1}]")
        P, depth = v["pretrain"]["patch_size"], v["denoiser"]["depth"]
        if depth < 2:
            problems.append("denoiser.depth: must be >= 2")
        elif P % 2 ** (depth - 1):
            problems.append(f"pretrain.patch_size: {P} not divisible by 2^(denoiser.depth-1) = {2 ** (depth - 1)}")
        for sec in ("pretrain", "train"):
            if v[sec]["learning_rate"] <= 0:
                problems.append(f"{sec}.learning_rate: must be > 0")
            if v[sec]["batch_size"] < 1:
                problems.append(f"{sec}.batch_size: must be >= 1")
        if v["pretrain"]["steps"] < 1:
            problems.append("pretrain.steps: must be >= 1")
        c = v["classifier"]
        if c["embed_dim"] % c["heads"]:
            problems.append("classifier.embed_dim: must be divisible by classifier.heads")
        if c["skip_fusion"] not in ("off", "cross-layer"):
            problems.append("classifier.skip_fusion: must be 'off' or 'cross-layer'")
        if v["pca"]["enabled"] and v["pca"]["components"] == 0 and not 0 < v["pca"]["variance_fraction"] <= 1:
            problems.append("pca.variance_fraction: must lie in (0, 1]")
        for t in v["ablation"]["timesteps"]:
            if not 1 <= t <= sch["T"]:
                problems.append(f"ablation.timesteps: {t} outside [1, {sch['T']}]")
        for f in v["ablation"]["feature_indices"]:
            if not 0 <= f < depth:
                problems.append(f"ablation.feature_indices: {f} outside [0, {depth - 1}]")
        if problems:
            raise ConfigError(problems)
        return self


def defaults() -> dict:
    return {sec: {k: (None if d is REQUIRED else d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    problems = []
    values = defaults()
    for section in cp.sections():
        if section not in SCHEMA:
            problems.append(f"[{section}]: unknown section")
            continue
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                problems.append(f"{section}.{key}: unknown key")
                continue
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw) if conv is not str else raw.strip()
            except ValueError as exc:
                problems.append(f"{section}.{key}: {exc}")
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if default is REQUIRED and not values[section][key]:
                problems.append(f"{section}.{key}: required")
    if problems:
        raise ConfigError(problems)
    return RunConfig(values, source)


def resolve_config_path(arg: str) -> tuple[Path, bool]:
    """Return (path, is_packaged_profile)."""
    p = Path(arg)
    if p.exists():
        return p, False
    name = arg.split(":", 1)[1] if arg.startswith("profile:") else arg
    if name in PROFILES:
        return Path(str(resources.files("hsidiff") / "configs" / f"{name}.ini")), True
    raise FileNotFoundError(f"config file not found: {arg} (packaged profiles: {', '.join(PROFILES)})")


def load_config(path, seed: int | None = None, out_dir=None, env=None) -> RunConfig:
    path, packaged = resolve_config_path(str(path))
    cfg = parse_config(path.read_text(), path.resolve())
    if packaged:
        # profile data paths refer to the user's working directory, not the install
        cfg.root = Path.cwd()
    env = os.environ if env is None else env
    if env.get("HSIDIFF_OUT_DIR"):
        cfg.values["run"]["out_dir"] = str(Path(env["HSIDIFF_OUT_DIR"]).resolve())
        cfg.overrides["out_dir"] = "env"
    if env.get("HSIDIFF_DEVICE"):
        cfg.values["run"]["device"] = env["HSIDIFF_DEVICE"]
        cfg.overrides["device"] = "env"
    if out_dir is not None:
        cfg.values["run"]["out_dir"] = str(Path(out_dir).resolve())
    if seed is not None:
        cfg.values["run"]["seed"] = int(seed)
    return cfg
