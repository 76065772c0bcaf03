"""Diffusion feature extraction from a frozen denoiser, plus PCA.

For every labeled pixel the patch around it is noised to each requested
timestep, pushed through the denoiser, and the requested decoder tap is
resized to the patch grid. Only the center-pixel vector is kept; vectors from
all (timestep, tap) pairs are concatenated in pair order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import archive
from ._util import derive_seed
from .diffmath import VarianceSchedule, forward_noise
from .hsio import LabeledCube, Patch, SampleSplit, extract_patches

REPO_SCHEMA = "hsidiff.repository/1"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class TapSpec:
    pairs: tuple
    seed: int = 0

    def __post_init__(self):
        pairs = tuple((int(t), int(f)) for t, f in self.pairs)
        if not pairs:
            raise FeatureError("TapSpec needs at least one (timestep, feature_index) pair")
        object.__setattr__(self, "pairs", pairs)

    def validate(self, T: int, n_taps: int):
        for t, f in self.pairs:
            if not 1 <= t <= T:
                raise FeatureError(f"timestep {t} outside [1, {T}]")
            if not 0 <= f < n_taps:
                raise FeatureError(f"feature index {f} outside [0, {n_taps - 1}]")

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "seed": self.seed}


# best (timestep, feature index) per benchmark from the sensitivity study
DEFAULT_TAPS = {
    "indian_pines": ((5, 1),),
    "pavia_university": ((5, 1),),
    "salinas": ((10, 0),),
}


@dataclass
class FeatureRepository:
    vectors: np.ndarray
    labels: np.ndarray
    coords: np.ndarray
    is_train: np.ndarray
    provenance: dict = field(default_factory=dict)
    pca: PCATransform | None = None

    def __post_init__(self):
        n = self.vectors.shape[0]
        if not (len(self.labels) == len(self.coords) == len(self.is_train) == n):
            raise FeatureError("repository arrays disagree on sample count")
        if not np.isfinite(self.vectors).all():
            raise FeatureError("repository contains non-finite values")

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def subset(self, mask) -> "FeatureRepository":
        mask = np.asarray(mask)
        return FeatureRepository(
            self.vectors[mask], self.labels[mask], self.coords[mask], self.is_train[mask], dict(self.provenance), self.pca
        )

    def train(self) -> "FeatureRepository":
        return self.subset(self.is_train)

    def test(self) -> "FeatureRepository":
        return self.subset(~self.is_train)


def pair_noise(seed: int, coord, t: int, f: int, shape) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "tap-noise", int(coord[0]), int(coord[1]), t, f))
    return rng.standard_normal(shape).astype(np.float32)


def _tap_maps(model, s: VarianceSchedule, x0: np.ndarray, t: int, f: int, eps: np.ndarray) -> torch.Tensor:
    """Noised batch [N, P, P, C] -> upsampled tap ``f`` as [N, c_f, P, P]."""
    n_taps = model.cfg.depth
    if not 0 <= f < n_taps:
        raise FeatureError(f"feature index {f} outside [0, {n_taps - 1}]")
    x_t = forward_noise(s, x0.astype(np.float64), t, eps.astype(np.float64))
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(x_t.transpose(0, 3, 1, 2))).to(dtype)
    tt = torch.full((x.shape[0],), t, dtype=torch.long)
    model.eval()
    with torch.no_grad():
        _, taps = model(x, tt, return_taps=True)
    return upsample_tap(taps[f], x.shape[-1])


def upsample_tap(tap: torch.Tensor, P: int) -> torch.Tensor:
    """Bilinear resize of [N, c, h, h] to [N, c, P, P]; identity when h == P."""
    if tap.shape[-1] == P:
        return tap
    return F.interpolate(tap, size=(P, P), mode="bilinear", align_corners=False)


def extract_timestep_features(model, s: VarianceSchedule, patch, t: int, f: int, eps) -> np.ndarray:
    """Tap ``f`` at timestep ``t`` for one patch, resized to ``[P, P, c_f]``."""
    values = patch.values if isinstance(patch, Patch) else np.asarray(patch)
    s.check_t(t)
    tap = _tap_maps(model, s, values[None], t, f, np.asarray(eps)[None])
    return tap[0].permute(1, 2, 0).numpy()


def center_vector(feat: np.ndarray) -> np.ndarray:
    P = feat.shape[0]
    return feat[P // 2, P // 2, :]


def build_repository(
    model,
    s: VarianceSchedule,
    cube: LabeledCube,
    split: SampleSplit,
    tapspec: TapSpec,
    P: int,
    batch_size: int = 256,
    checkpoint_id: str = "",
) -> FeatureRepository:
    """Concatenated center-pixel features for every sample of ``split``.

    Train samples come first, then test samples, each in split order.
    """
    if model.cfg.in_channels != cube.n_bands:
        raise FeatureError(
            f"checkpoint expects {model.cfg.in_channels} input channels, cube has {cube.n_bands}"
        )
    if model.cfg.patch_size != P:
        raise FeatureError(f"denoiser patch size {model.cfg.patch_size} != extraction patch size {P}")
    tapspec.validate(s.T, model.cfg.depth)
    items = list(split.train) + list(split.test)
    coords = np.array([(r, c) for r, c, _ in items], dtype=np.int64).reshape(-1, 2)
    labels = np.array([k for _, _, k in items], dtype=np.int64)
    is_train = np.arange(len(items)) < len(split.train)
    widths = [model.cfg.tap_channels()[f] for _, f in tapspec.pairs]
    out = np.zeros((len(items), sum(widths)), dtype=np.float32)
    col = 0
    for (t, f), w in zip(tapspec.pairs, widths):
        for start in range(0, len(items), batch_size):
            cb = coords[start:start + batch_size]
            x0 = extract_patches(cube, cb, P)
            eps = np.stack([pair_noise(tapspec.seed, rc, t, f, x0.shape[1:]) for rc in cb])
            tap = _tap_maps(model, s, x0, t, f, eps)
            out[start:start + len(cb), col:col + w] = tap[:, :, P // 2, P // 2].numpy()
        col += w
    prov = {
        "checkpoint": checkpoint_id,
        "tapspec": tapspec.to_dict(),
        "patch_size": P,
        "tap_widths": widths,
        "split_seed": split.seed,
    }
    return FeatureRepository(out, labels, coords, is_train, prov)


# --------------------------------------------------------------------------
# PCA


@dataclass
class PCATransform:
    mean: np.ndarray
    components: np.ndarray  # [k, L], orthonormal rows
    explained_variance: np.ndarray  # all min(n, L) eigenvalues of the fit covariance
    rank: int

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        return self.explained_variance / total if total > 0 else np.zeros_like(self.explained_variance)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean


def pca_fit(data, k: int | None = None, variance_fraction: float | None = None) -> PCATransform:
    """Fit on training vectors only (``data`` may be a repository or an array)."""
    x = data.train().vectors if isinstance(data, FeatureRepository) else data
    x = np.asarray(x, dtype=np.float64)
    n, L = x.shape
    if (k is None) == (variance_fraction is None):
        raise FeatureError("give exactly one of k or variance_fraction")
    mean = x.mean(axis=0)
    _, sv, vt = np.linalg.svd(x - mean, full_matrices=False)
    tol = (sv.max() if sv.size else 0.0) * max(n, L) * np.finfo(np.float64).eps
    rank = int((sv > tol).sum())
    ev = sv**2 / max(n - 1, 1)
    if variance_fraction is not None:
        if not 0 < variance_fraction <= 1:
            raise FeatureError(f"variance_fraction must be in (0, 1], got {variance_fraction}")
        cum = np.cumsum(ev) / ev.sum()
        k = min(int(np.searchsorted(cum, variance_fraction - 1e-12) + 1), rank)
    if k < 1 or k > L:
        raise FeatureError(f"k={k} outside [1, {L}]")
    if k > rank:
        raise FeatureError(f"k={k} exceeds the rank of the training vectors ({rank})")
    comps = vt[:k].copy()
    # fix the sign ambiguity: largest-magnitude loading of each component is positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), idx])[:, None]
    return PCATransform(mean, comps, ev, rank)


def pca_apply(transform: PCATransform, repo: FeatureRepository) -> FeatureRepository:
    prov = dict(repo.provenance)
    prov["pca"] = {"k": transform.k, "rank": transform.rank, "input_width": int(transform.mean.shape[0])}
    return FeatureRepository(transform.transform(repo.vectors), repo.labels, repo.coords, repo.is_train, prov, transform)


# --------------------------------------------------------------------------
# persistence


def save_repository(repo: FeatureRepository, path) -> Path:
    arrays = {
        "vectors": repo.vectors,
        "labels": repo.labels,
        "coords": repo.coords,
        "is_train": repo.is_train.astype(np.uint8),
    }
    pca = repo.pca
    if pca is not None:
        arrays.update(pca_mean=pca.mean, pca_components=pca.components, pca_explained_variance=pca.explained_variance)
    manifest = {"schema_version": REPO_SCHEMA, "provenance": repo.provenance}
    return archive.write_archive(path, manifest, arrays)


def load_repository(path) -> FeatureRepository:
    manifest, a = archive.read_archive(path)
    if manifest.get("schema_version") != REPO_SCHEMA:
        raise FeatureError(f"{path}: schema_version {manifest.get('schema_version')!r} != {REPO_SCHEMA!r}")
    pca = None
    if "pca_mean" in a:
        pca = PCATransform(a["pca_mean"], a["pca_components"], a["pca_explained_variance"], manifest["provenance"]["pca"]["rank"])
    return FeatureRepository(a["vectors"], a["labels"], a["coords"], a["is_train"].astype(bool), manifest["provenance"], pca)
