"""Single-file archive: a JSON manifest plus named ``.npy`` arrays in a zip.

Each array member carries its own dtype and shape in the ``.npy`` header, so
the files can be read from any language with a zip reader and a ``.npy``
parser. Zip timestamps are pinned so identical content gives identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


class ArchiveError(ValueError):
    pass


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def write_archive(path, manifest: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        text = json.dumps(manifest, indent=2, sort_keys=True)
        zf.writestr(_member(MANIFEST_NAME), text.encode())
        for name in sorted(arrays):
            if name == MANIFEST_NAME or "/" in name:
                raise ArchiveError(f"invalid array name {name!r}")
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(_member(f"arrays/{name}.npy"), buf.getvalue())
    tmp.replace(path)
    return path


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise ArchiveError(f"{path} is not a manifest+arrays archive (expected a zip file)") from exc
    with zf:
        names = zf.namelist()
        if MANIFEST_NAME not in names:
            raise ArchiveError(f"{path} has no {MANIFEST_NAME}")
        manifest = json.loads(zf.read(MANIFEST_NAME).decode())
        arrays = {}
        for name in names:
            if name.startswith("arrays/") and name.endswith(".npy"):
                key = name[len("arrays/"):-len(".npy")]
                arrays[key] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return manifest, arrays
