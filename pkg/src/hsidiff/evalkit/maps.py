"""Lossless classification-map rasters with a fixed palette."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PALETTE_VERSION = "hsidiff-palette/1"

# index 0 is the unlabeled/unpredicted color; 1..16 are class colors
PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 25, 75),
        (60, 180, 75),
        (255, 225, 25),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (210, 245, 60),
        (250, 190, 212),
        (0, 128, 128),
        (220, 190, 255),
        (170, 110, 40),
        (255, 250, 200),
        (128, 0, 0),
        (170, 255, 195),
    ],
    dtype=np.uint8,
)


class MapError(ValueError):
    pass


def class_raster(shape, coords, classes) -> np.ndarray:
    H, W = shape[:2]
    raster = np.zeros((H, W), dtype=np.int64)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    classes = np.asarray(classes, dtype=np.int64).ravel()
    if len(coords) != len(classes):
        raise MapError(f"{len(coords)} coordinates but {len(classes)} class values")
    if len(coords) and (coords.min() < 0 or coords[:, 0].max() >= H or coords[:, 1].max() >= W):
        raise MapError(f"coordinates outside map of shape {H}x{W}")
    raster[coords[:, 0], coords[:, 1]] = classes
    return raster


def colorize(raster: np.ndarray, palette: np.ndarray = PALETTE) -> np.ndarray:
    top = int(raster.max()) if raster.size else 0
    if top >= len(palette) or (raster.size and raster.min() < 0):
        raise MapError(f"class {top} has no palette entry (palette holds classes 1..{len(palette) - 1})")
    return palette[raster]


def save_raster(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # one array element per image pixel; no software tag so bytes depend only on pixels
    plt.imsave(path, rgb, format="png", metadata={"Software": None})
    return path


def render_map(shape, coords, predictions, path, palette: np.ndarray = PALETTE) -> Path:
    """Write a PNG where pixel (r, c) has the color of its predicted class.

    Pixels without a prediction stay black.
    """
    return save_raster(colorize(class_raster(shape, coords, predictions), palette), path)


def read_raster(path) -> np.ndarray:
    img = plt.imread(path)
    return np.round(img[..., :3] * 255).astype(np.uint8)
