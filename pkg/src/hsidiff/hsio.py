"""Hyperspectral cube I/O, normalization, train/test splitting and patching."""

from __future__ import annotations

import io
import logging
import zipfile
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NORMALIZE_MODES = ("per-band-minmax", "global-minmax", "zscore")


class CubeError(ValueError):
    pass


# Standard per-class training counts and class names of the three benchmarks.
# Test sets are the remaining labeled pixels of each class.
BENCHMARKS = {
    "indian_pines": {
        "shape": (145, 145, 220),
        "class_names": [
            "Alfalfa", "Corn-notill", "Corn-mintill", "Corn", "Grass-pasture",
            "Grass-trees", "Grass-pasture-mowed", "Hay-windrowed", "Oats",
            "Soybean-notill", "Soybean-mintill", "Soybean-clean", "Wheat", "Woods",
            "Buildings-Grass-Trees-Drives", "Stone-Steel-Towers",
        ],
        "train": [5, 143, 83, 24, 48, 73, 3, 48, 2, 97, 245, 59, 20, 126, 39, 9],
        "test": [41, 1285, 747, 213, 435, 657, 25, 430, 18, 875, 2210, 534, 185, 1139, 347, 84],
        "reported_totals": (924, 8215),
    },
    "pavia_university": {
        "shape": (610, 340, 103),
        "class_names": [
            "Asphalt", "Meadows", "Gravel", "Trees", "Painted metal sheets",
            "Bare Soil", "Bitumen", "Self-Blocking Bricks", "Shadows",
        ],
        "train": [332, 932, 105, 153, 67, 251, 67, 184, 47],
        "test": [6299, 17717, 1994, 2911, 1278, 4778, 1263, 3498, 900],
        "reported_totals": (2037, 36558),
    },
    "salinas": {
        "shape": (512, 217, 204),
        "class_names": [
            "Brocoli_green_weeds_1", "Brocoli_green_weeds_2", "Fallow",
            "Fallow_rough_plow", "Fallow_smooth", "Stubble", "Celery",
            "Grapes_untrained", "Soil_vinyard_develop", "Corn_senesced_green_weeds",
            "Lettuce_romaine_4wk", "Lettuce_romaine_5wk", "Lettuce_romaine_6wk",
            "Lettuce_romaine_7wk", "Vinyard_untrained", "Vinyard_vertical_trellis",
        ],
        "train": [100, 186, 98, 69, 133, 197, 178, 563, 310, 163, 53, 96, 45, 53, 363, 90],
        "test": [1909, 3540, 1878, 1325, 2545, 3762, 3401, 10708, 5893, 3115, 1015, 1831, 871, 1017, 6905, 1717],
        "reported_totals": (2548, 65592),
    },
}


@dataclass(frozen=True)
class LabeledCube:
    data: np.ndarray
    labels: np.ndarray
    class_names: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.data.ndim != 3:
            raise CubeError(f"data must be 3-D [H, W, B], got shape {self.data.shape}")
        if self.labels.ndim != 2:
            raise CubeError(f"labels must be 2-D [H, W], got shape {self.labels.shape}")
        if self.data.shape[:2] != self.labels.shape:
            raise CubeError(
                f"data shape {self.data.shape} and labels shape {self.labels.shape} disagree on H, W"
            )
        if self.labels.size and self.labels.min() < 0:
            raise CubeError("labels must be non-negative (0 = unlabeled)")
        if not self.class_names:
            n = int(self.labels.max()) if self.labels.size else 0
            object.__setattr__(self, "class_names", [f"class_{i}" for i in range(1, n + 1)])
        elif self.labels.size and self.labels.max() > len(self.class_names):
            raise CubeError(
                f"label {int(self.labels.max())} exceeds number of classes {len(self.class_names)}"
            )

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_bands(self) -> int:
        return self.data.shape[2]


def _pick_array(container, preferred: str, ndim: int, path) -> np.ndarray:
    if preferred in container:
        return np.asarray(container[preferred])
    candidates = [k for k in container if not k.startswith("__") and np.ndim(container[k]) == ndim]
    if len(candidates) == 1:
        return np.asarray(container[candidates[0]])
    raise CubeError(
        f"{path}: expected an array named {preferred!r} or exactly one {ndim}-D array, "
        f"found {sorted(k for k in container if not k.startswith('__'))}"
    )


def _read_container(path: Path, preferred: str, ndim: int) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            return _pick_array({k: z[k] for k in z.files}, preferred, ndim, path)
    if suffix == ".mat":
        import scipy.io

        try:
            mat = scipy.io.loadmat(path)
        except NotImplementedError as exc:  # MATLAB v7.3 is HDF5
            import h5py

            with h5py.File(path, "r") as f:
                mat = {k: np.asarray(f[k]).T for k in f.keys()}
            if not mat:
                raise CubeError(f"{path}: empty HDF5 container") from exc
        return _pick_array(mat, preferred, ndim, path)
    if suffix == ".npy":
        return np.load(path, allow_pickle=False)
    raise CubeError(
        f"{path}: unknown container format {suffix!r}; expected a named-array "
        "container (.npz with arrays 'data' and 'labels', or .mat)"
    )


def load_cube(path, labels_path=None, class_names_path=None, name: str | None = None) -> LabeledCube:
    """Load a cube from a named-array container.

    ``labels_path`` defaults to ``path`` (both arrays in one ``.npz``). The
    optional class-name sidecar holds one name per line, class 1 first.
    """
    path = Path(path)
    labels_path = Path(labels_path) if labels_path is not None else path
    for p in (path, labels_path):
        if not p.exists():
            raise FileNotFoundError(p)
    data = _read_container(path, "data", 3)
    labels = _read_container(labels_path, "labels", 2)
    if data.ndim != 3 or labels.ndim != 2 or data.shape[:2] != labels.shape:
        raise CubeError(f"shape mismatch: data {data.shape} vs labels {labels.shape}")
    names = []
    if class_names_path is not None:
        names = [ln.strip() for ln in Path(class_names_path).read_text().splitlines() if ln.strip()]
    cube = LabeledCube(
        data=np.asarray(data, dtype=np.float32),
        labels=np.asarray(labels).astype(np.int64),
        class_names=names,
        name=name or path.stem,
    )
    log.info("loaded %s: %s, %d classes", cube.name, cube.shape, cube.n_classes)
    return cube


def save_cube(cube: LabeledCube, path, class_names_path=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # np.savez stamps members with the current time; pin it for byte-stable output
    with zipfile.ZipFile(path, "w") as zf:
        for key, arr in (("data", cube.data.astype(np.float32)), ("labels", cube.labels.astype(np.uint16))):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())
    if class_names_path is not None:
        Path(class_names_path).write_text("\n".join(cube.class_names) + "\n")
    return path


def normalize(cube: LabeledCube, mode: str = "per-band-minmax") -> LabeledCube:
    if mode not in NORMALIZE_MODES:
        raise CubeError(f"unknown normalization mode {mode!r}; choose from {NORMALIZE_MODES}")
    x = cube.data.astype(np.float64)
    bad = np.where(~np.isfinite(x).all(axis=(0, 1)))[0]
    if bad.size:
        raise CubeError(f"non-finite values in bands {bad.tolist()}")
    if mode == "per-band-minmax":
        lo = x.min(axis=(0, 1), keepdims=True)
        span = x.max(axis=(0, 1), keepdims=True) - lo
        out = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    elif mode == "global-minmax":
        lo, span = x.min(), x.max() - x.min()
        out = (x - lo) / span if span > 0 else np.zeros_like(x)
    else:
        mean = x.mean(axis=(0, 1), keepdims=True)
        std = x.std(axis=(0, 1), keepdims=True)
        out = np.where(std > 0, (x - mean) / np.where(std > 0, std, 1.0), 0.0)
    return replace(cube, data=out.astype(np.float32))


# --------------------------------------------------------------------------
# splitting


@dataclass
class SampleSplit:
    train: list
    test: list
    seed: int
    per_class_counts: dict

    def to_text(self) -> str:
        lines = [f"# seed={self.seed}", "class_id,row,col,split"]
        for part, items in (("train", self.train), ("test", self.test)):
            lines.extend(f"{c},{r},{col},{part}" for r, col, c in items)
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    @classmethod
    def from_text(cls, text: str) -> "SampleSplit":
        seed = 0
        train, test = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("class_id"):
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("seed="):
                    seed = int(line.split("=", 1)[1])
                continue
            c, r, col, part = line.split(",")
            item = (int(r), int(col), int(c))
            (train if part == "train" else test).append(item)
        return cls(train, test, seed, _count(train, test))

    @classmethod
    def load(cls, path) -> "SampleSplit":
        return cls.from_text(Path(path).read_text())

    @property
    def n_train(self) -> int:
        return len(self.train)

    @property
    def n_test(self) -> int:
        return len(self.test)


def _count(train, test) -> dict:
    counts: dict[int, list] = {}
    for items, i in ((train, 0), (test, 1)):
        for _, _, c in items:
            counts.setdefault(c, [0, 0])[i] += 1
    return {c: tuple(v) for c, v in sorted(counts.items())}


def split_samples(cube: LabeledCube, spec, seed: int) -> SampleSplit:
    """Split labeled pixels per class into train and test sets.

    ``spec`` is either a float fraction of each class's labeled pixels, or
    per-class training counts (a sequence indexed from class 1, or a mapping
    class id -> count). Everything not drawn for training goes to test.
    """
    rng = np.random.default_rng(seed)
    n_classes = cube.n_classes
    if isinstance(spec, (float, int)) and not isinstance(spec, bool):
        frac = float(spec)
        if not 0.0 <= frac <= 1.0:
            raise CubeError(f"training fraction must be in [0, 1], got {frac}")
        want = None
    else:
        frac = None
        if isinstance(spec, Mapping):
            want = {int(k): int(v) for k, v in spec.items()}
        elif isinstance(spec, Sequence):
            want = {i + 1: int(v) for i, v in enumerate(spec)}
        else:
            raise CubeError(f"unsupported split spec {spec!r}")
        extra = set(want) - set(range(1, n_classes + 1))
        if extra:
            raise CubeError(f"split spec names unknown classes {sorted(extra)}")

    train, test = [], []
    for c in range(1, n_classes + 1):
        rows, cols = np.nonzero(cube.labels == c)
        n = rows.size
        if frac is not None:
            k = int(round(frac * n))
            if frac > 0 and n > 0:
                k = max(k, 1)
        else:
            k = want.get(c, 0)
            if k > n:
                raise CubeError(
                    f"class {c} ({cube.class_names[c - 1]}) has {n} labeled pixels, "
                    f"{k} requested for training (shortfall {k - n})"
                )
        order = rng.permutation(n)
        picked = np.zeros(n, dtype=bool)
        picked[order[:k]] = True
        for i in range(n):
            item = (int(rows[i]), int(cols[i]), c)
            (train if picked[i] else test).append(item)
    return SampleSplit(train=train, test=test, seed=int(seed), per_class_counts=_count(train, test))


# --------------------------------------------------------------------------
# patches


@dataclass
class Patch:
    values: np.ndarray
    center: tuple
    timestep_tag: int | None = None


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    # reflection about the edge samples (edge not repeated), repeated as needed
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _check_patch_size(cube: LabeledCube, P: int):
    H, W = cube.labels.shape
    if P < 1:
        raise CubeError(f"patch size must be >= 1, got {P}")
    if P > 2 * min(H, W):
        raise CubeError(f"patch size {P} exceeds 2*min(H, W) = {2 * min(H, W)}; mirror padding undefined")


def extract_patches(cube: LabeledCube, coords, P: int) -> np.ndarray:
    """Vectorised patch extraction -> array [N, P, P, B]."""
    _check_patch_size(cube, P)
    H, W = cube.labels.shape
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if coords.size and (
        coords[:, 0].min() < 0 or coords[:, 0].max() >= H or coords[:, 1].min() < 0 or coords[:, 1].max() >= W
    ):
        raise CubeError(f"patch center outside cube bounds {H}x{W}")
    offs = np.arange(P) - P // 2
    rows = _reflect(coords[:, 0:1] + offs, H)
    cols = _reflect(coords[:, 1:2] + offs, W)
    return cube.data[rows[:, :, None], cols[:, None, :]]


def extract_patch(cube: LabeledCube, coord, P: int) -> Patch:
    r, c = int(coord[0]), int(coord[1])
    return Patch(values=extract_patches(cube, [(r, c)], P)[0], center=(r, c))


def sample_centers(shape2d, count: int, seed: int) -> np.ndarray:
    if count < 0:
        raise CubeError(f"count must be >= 0, got {count}")
    H, W = shape2d
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, H * W, size=count)
    return np.stack([flat // W, flat % W], axis=1)


def sample_unlabeled_patches(cube: LabeledCube, count: int, P: int, seed: int) -> list:
    """Uniformly sample ``count`` patch centers over the whole scene; labels are ignored."""
    centers = sample_centers(cube.labels.shape, count, seed)
    if count == 0:
        return []
    values = extract_patches(cube, centers, P)
    return [Patch(values=v, center=(int(r), int(c))) for v, (r, c) in zip(values, centers)]
