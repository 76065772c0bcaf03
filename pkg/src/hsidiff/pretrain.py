"""Unsupervised DDPM pretraining on random patches, and denoiser checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import archive
from ._util import derive_seed, hash_arrays
from .denoiser import DenoiserConfig, UNetDenoiser, build_denoiser, load_state_arrays, state_arrays
from .diffmath import VarianceSchedule, build_schedule, diffusion_loss, forward_noise, schedule_from_params
from .hsio import LabeledCube, sample_unlabeled_patches

log = logging.getLogger(__name__)

SCHEMA_VERSION = "hsidiff.denoiser/1"


class PretrainError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PretrainConfig:
    steps: int = 30000
    batch_size: int = 128
    learning_rate: float = 1e-4
    patch_size: int = 32
    seed: int = 0
    schedule: dict = field(default_factory=lambda: {"T": 500, "beta_start": 1e-4, "beta_end": 0.02, "kind": "linear"})
    log_every: int = 100
    checkpoint_every: int = 0
    val_batch_size: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class Checkpoint:
    manifest: dict
    weights: dict
    loss_trace: list = field(default_factory=list)

    @property
    def config(self) -> DenoiserConfig:
        return DenoiserConfig(**self.manifest["denoiser"])

    @property
    def schedule(self) -> VarianceSchedule:
        return schedule_from_params(self.manifest["schedule"])

    @property
    def id(self) -> str:
        return self.manifest["weights_sha256"]

    def denoiser(self, dtype=torch.float32) -> UNetDenoiser:
        model = build_denoiser(self.config, seed=0)
        load_state_arrays(model, self.weights)
        model.to(dtype).eval()
        for p in model.parameters():
            p.requires_grad_(False)
        return model

    def load_into(self, model: UNetDenoiser) -> UNetDenoiser:
        if model.cfg != self.config:
            raise CheckpointError(f"checkpoint denoiser config {self.config} does not match model config {model.cfg}")
        load_state_arrays(model, self.weights)
        return model


def _batch(cube: LabeledCube, cfg: PretrainConfig, s: VarianceSchedule, key) -> tuple:
    seed = derive_seed(cfg.seed, *key)
    patches = sample_unlabeled_patches(cube, cfg.batch_size if key[0] == "batch" else cfg.val_batch_size, cfg.patch_size, seed)
    x0 = np.stack([p.values for p in patches]).astype(np.float32)
    rng = np.random.default_rng(derive_seed(seed, "noise"))
    t = rng.integers(1, s.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    x_t = forward_noise(s, x0, t, eps).astype(np.float32)
    to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))
    return to_t(x_t), torch.from_numpy(t), to_t(eps)


def validation_batch(cube: LabeledCube, cfg: PretrainConfig, s: VarianceSchedule):
    return _batch(cube, cfg, s, ("validation",))


def batch_loss(model: UNetDenoiser, batch) -> torch.Tensor:
    x_t, t, eps = batch
    return diffusion_loss(eps, model(x_t, t))


def make_manifest(cfg: PretrainConfig, dcfg: DenoiserConfig, weights: dict, steps_done: int, normalization: str, extra=None) -> dict:
    m = {
        "schema_version": SCHEMA_VERSION,
        "denoiser": dcfg.to_dict(),
        "schedule": dict(cfg.schedule),
        "step": int(steps_done),
        "seed": int(cfg.seed),
        "in_channels": dcfg.in_channels,
        "normalization": normalization,
        "pretrain": {k: v for k, v in asdict(cfg).items() if k != "schedule"},
        "weights_sha256": hash_arrays(weights),
    }
    m.update(extra or {})
    return m


def pretrain(
    cube: LabeledCube,
    cfg: PretrainConfig,
    denoiser_cfg: DenoiserConfig | None = None,
    normalization: str = "per-band-minmax",
    trace_path=None,
    checkpoint_path=None,
) -> Checkpoint:
    """Train the noise predictor with Adam on randomly cropped patches.

    Each step draws its patch centers, timesteps and noise from a generator
    keyed on ``(cfg.seed, step)``, so a run is replayable step by step.
    """
    if denoiser_cfg is None:
        denoiser_cfg = DenoiserConfig(in_channels=cube.n_bands, patch_size=cfg.patch_size)
    if denoiser_cfg.in_channels != cube.n_bands:
        raise ValueError(f"denoiser expects {denoiser_cfg.in_channels} channels, cube has {cube.n_bands}")
    if denoiser_cfg.patch_size != cfg.patch_size:
        raise ValueError(f"denoiser patch size {denoiser_cfg.patch_size} != pretrain patch size {cfg.patch_size}")
    s = build_schedule(**cfg.schedule)
    model = build_denoiser(denoiser_cfg, derive_seed(cfg.seed, "init"))
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), weight_decay=0.0)

    trace = []
    fh = None
    if trace_path is not None:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(trace_path, "w")
        fh.write("step,loss\n")
    last_finite = float("nan")
    try:
        for step in range(1, cfg.steps + 1):
            batch = _batch(cube, cfg, s, ("batch", step))
            opt.zero_grad(set_to_none=True)
            loss = batch_loss(model, batch)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise PretrainError(f"non-finite loss at step {step}; last finite loss {last_finite}")
            loss.backward()
            opt.step()
            last_finite = value
            trace.append((step, value))
            if fh is not None:
                fh.write(f"{step},{value!r}\n")
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d loss %.6f", step, value)
            if checkpoint_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.steps:
                w = state_arrays(model)
                save_checkpoint(Checkpoint(make_manifest(cfg, denoiser_cfg, w, step, normalization), w), checkpoint_path)
    finally:
        if fh is not None:
            fh.close()

    model.eval()
    with torch.no_grad():
        val_loss = float(batch_loss(model, validation_batch(cube, cfg, s)))
    weights = state_arrays(model)
    manifest = make_manifest(cfg, denoiser_cfg, weights, cfg.steps, normalization, {"validation_loss": val_loss})
    ckpt = Checkpoint(manifest, weights, trace)
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    return archive.write_archive(path, ckpt.manifest, ckpt.weights)


def load_checkpoint(path, schema: str = SCHEMA_VERSION) -> Checkpoint:
    manifest, arrays = archive.read_archive(path)
    found = manifest.get("schema_version")
    if found != schema:
        raise CheckpointError(f"{path}: schema_version {found!r} does not match expected {schema!r}")
    ckpt = Checkpoint(manifest, arrays)
    expected = set(build_denoiser(ckpt.config, 0).state_dict())
    missing = sorted(expected - set(arrays))
    if missing:
        raise CheckpointError(f"{path}: missing weights {missing}")
    return ckpt


def read_trace(path) -> list:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        if line.strip():
            step, loss = line.split(",")
            rows.append((int(step), float(loss)))
    return rows
