"""Deterministic toy scene with classes separable by their spectra.

The scene is a grid of square tiles. Each labeled tile belongs to one class
whose mean spectrum is a Gaussian bump centered on a different band; one
tile is left unlabeled with a flat spectrum. Pixel noise is small relative
to the spacing between class spectra. Tiles are twice the default patch size
so most patches see a single class, as in field-scale real scenes.
"""

from __future__ import annotations

import numpy as np

from .hsio import LabeledCube


def class_spectra(n_classes: int, bands: int, amplitude: float = 0.6, baseline: float = 0.2) -> np.ndarray:
    b = np.arange(bands, dtype=np.float64)
    centers = (np.arange(n_classes) + 0.5) * bands / n_classes
    width = max(bands / (2.0 * n_classes), 0.75)
    return baseline + amplitude * np.exp(-0.5 * ((b[None, :] - centers[:, None]) / width) ** 2)


def make_synthetic_cube(
    seed: int = 0,
    size: int = 48,
    bands: int = 8,
    n_classes: int = 4,
    tile: int = 16,
    unlabeled_tiles: int = 1,
    noise: float = 0.03,
) -> LabeledCube:
    rng = np.random.default_rng(seed)
    n_side = size // tile
    n_tiles = n_side * n_side
    n_labeled = n_tiles - unlabeled_tiles
    tile_labels = np.concatenate([np.arange(n_labeled) % n_classes + 1, np.zeros(unlabeled_tiles, dtype=int)])
    tile_labels = rng.permutation(tile_labels)
    labels = np.kron(tile_labels.reshape(n_side, n_side), np.ones((tile, tile), dtype=int))
    pad = size - labels.shape[0]
    labels = np.pad(labels, ((0, pad), (0, pad)), mode="edge")

    spectra = np.vstack([np.full((1, bands), 0.35), class_spectra(n_classes, bands)])
    # per-tile brightness jitter keeps tiles of one class from being identical
    gain = np.kron(rng.uniform(0.9, 1.1, size=(n_side, n_side)), np.ones((tile, tile)))
    gain = np.pad(gain, ((0, pad), (0, pad)), mode="edge")
    data = spectra[labels] * gain[:, :, None] + noise * rng.standard_normal((size, size, bands))
    return LabeledCube(
        data=data.astype(np.float32),
        labels=labels.astype(np.int64),
        class_names=[f"gaussian_{i}" for i in range(1, n_classes + 1)],
        name="synthetic",
    )
