"""
On-disk formats for the result tree.

CSV for numeric series, JSON for summaries/fits/manifests, and a zip of
.npy members (readable with numpy.load) for MPS and layer stacks. All
writers are byte-deterministic: floats go through repr, JSON keys are
sorted, zip members carry a fixed timestamp.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import zipfile
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _clean(value):
    """Make a value JSON-safe; non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def dumps_json(data) -> str:
    return json.dumps(_clean(data), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(data), encoding="utf-8")
    return path


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


def write_csv(path: Path, columns, rows) -> Path:
    """Write rows (sequences aligned with `columns`) with a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict]:
    """Rows as dicts; values that parse as numbers come back as float/int."""
    def parse(text):
        try:
            return int(text)
        except ValueError:
            pass
        try:
            return float(text)
        except ValueError:
            return text

    with Path(path).open(encoding="utf-8", newline="") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def save_arrays(path: Path, header: dict, arrays: dict) -> Path:
    """Zip of .npy members plus a JSON `header` member; loadable by numpy.load."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format_version": FORMAT_VERSION, **header}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        members = {"header": np.array(dumps_json(header))}
        members.update(arrays)
        for name in members:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(members[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            zf.writestr(info, buf.getvalue())
    return path


def load_arrays(path: Path) -> tuple[dict, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        arrays = {name: data[name] for name in data.files if name != "header"}
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, arrays


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def checksums(root: Path, files) -> dict:
    """Relative path -> sha256 for every existing file."""
    root = Path(root)
    return {str(Path(f).relative_to(root)): sha256(f) for f in sorted(map(Path, files)) if Path(f).exists()}


def verify_checksums(root: Path, expected: dict) -> bool:
    root = Path(root)
    for rel, digest in expected.items():
        target = root / rel
        if not target.exists() or sha256(target) != digest:
            log.info("checksum mismatch or missing file: %s", target)
            return False
    return bool(expected)
