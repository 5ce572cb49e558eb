"""Datasets, model archives and metric/trace export.

IDX files are the big-endian container used by MNIST and Fashion-MNIST:
two zero bytes, a type code (0x08 = unsigned byte), the number of
dimensions, one 32-bit size per dimension, then the row-major payload.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import os
import struct
import tempfile
import urllib.request
import zlib
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from filelock import FileLock

from .core import ConfigError, NetworkModel

__all__ = [
    "IdxError",
    "DatasetError",
    "ArchiveError",
    "Dataset",
    "ModelArchive",
    "parse_idx",
    "fetch_dataset",
    "load_split",
    "normalize_pixels",
    "toy_dataset",
    "digits_dataset",
    "save_model",
    "load_model",
    "write_csv",
    "write_json",
    "export_traces",
    "cache_dir",
]

FORMAT_VERSION = 1
CACHE_ENV = "TTFS_VLSI_CACHE"

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803
_MAX_IDX_ELEMENTS = 1 << 31

_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz", 60000),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz", 10000),
}

MIRRORS = {
    "mnist": (
        "https://ossci-datasets.s3.amazonaws.com/mnist/",
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
    ),
    "fashion-mnist": (
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
        "https://raw.githubusercontent.com/zalandoresearch/fashion-mnist/master/data/fashion/",
    ),
}


class IdxError(ValueError):
    """Malformed IDX data."""


class DatasetError(RuntimeError):
    """Dataset could not be obtained or failed verification."""


class ArchiveError(ValueError):
    """Model archive could not be read."""


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and int(np.max(self.labels)) >= 10:
            raise DatasetError("labels must be below 10")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int, offset: int = 0) -> "Dataset":
        sl = slice(offset, offset + n)
        return Dataset(self.images[sl], self.labels[sl], self.split, self.name)


@dataclass
class ModelArchive:
    model: NetworkModel
    provenance: dict
    format_version: int = FORMAT_VERSION


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX blob into an array of its declared shape."""
    if len(data) < 4:
        raise IdxError("truncated header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in (IDX_LABELS, IDX_IMAGES):
        raise IdxError(f"bad magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxError("truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = 1
    for d in dims:
        count *= d
        if count > _MAX_IDX_ELEMENTS:
            raise IdxError(f"dimensions {dims} overflow the element limit")
    payload = len(data) - header
    if payload < count:
        raise IdxError(f"truncated payload: {payload} bytes for dimensions {dims}")
    if payload > count:
        raise IdxError(f"{payload - count} trailing bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def normalize_pixels(raw) -> np.ndarray:
    """Bytes to intensities in [0, 1]; zero stays zero (no input spike)."""
    return np.asarray(raw, dtype=np.float64) / 255.0


def cache_dir(override: Optional[str] = None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "ttfs_vlsi"


def _default_transport(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def _read_cached(path: Path) -> bytes:
    raw = path.read_bytes()
    try:
        return gzip.decompress(raw)
    except (OSError, EOFError, zlib.error) as exc:
        raise DatasetError(f"cannot decompress {path}: {exc}") from exc


def _find_cached(folder: Path, gz_name: str) -> Optional[Path]:
    gz = folder / gz_name
    if gz.exists():
        return gz
    plain = folder / gz_name[: -len(".gz")]
    return plain if plain.exists() else None


def _ensure_file(folder: Path, fname: str, mirrors: Sequence[str], transport) -> bytes:
    found = _find_cached(folder, fname)
    if found is not None:
        return _read_cached(found) if found.suffix == ".gz" else found.read_bytes()
    folder.mkdir(parents=True, exist_ok=True)
    target = folder / fname
    with FileLock(str(target) + ".lock"):
        if target.exists():
            return _read_cached(target)
        errors = []
        for base in mirrors:
            try:
                blob = transport(base + fname)
            except Exception as exc:
                errors.append(f"{base}: {exc}")
                continue
            try:
                data = gzip.decompress(blob)
            except (OSError, EOFError, zlib.error) as exc:
                errors.append(f"{base}: corrupt download ({exc})")
                continue
            fd, tmp = tempfile.mkstemp(dir=folder, prefix=fname, suffix=".part")
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, target)
            return data
    raise DatasetError(f"could not download {fname}: " + "; ".join(errors or ["no mirrors configured"]))


def load_split(name: str, split: str, mirror_url=None, cache: Optional[str] = None, transport: Optional[Callable] = None) -> Dataset:
    if name not in MIRRORS:
        raise DatasetError(f"unknown dataset {name!r}; choose from {sorted(MIRRORS)}")
    if split not in _FILES:
        raise DatasetError(f"unknown split {split!r}")
    if mirror_url is None:
        mirrors = MIRRORS[name]
    elif isinstance(mirror_url, str):
        mirrors = (mirror_url,)
    else:
        mirrors = tuple(mirror_url)
    mirrors = tuple(m if m.endswith("/") else m + "/" for m in mirrors)
    folder = cache_dir(cache) / name
    transport = transport or _default_transport
    img_name, lbl_name, expected = _FILES[split]
    try:
        images = parse_idx(_ensure_file(folder, img_name, mirrors, transport))
        labels = parse_idx(_ensure_file(folder, lbl_name, mirrors, transport))
    except IdxError as exc:
        raise DatasetError(f"{name}/{split}: {exc}") from exc
    if images.ndim != 3 or labels.ndim != 1:
        raise DatasetError(f"{name}/{split}: unexpected tensor ranks {images.shape}, {labels.shape}")
    if len(images) != expected or len(labels) != expected:
        raise DatasetError(f"{name}/{split}: expected {expected} samples, found {len(images)} / {len(labels)}")
    return Dataset(images.reshape(len(images), -1), labels.astype(np.int64), split, name)


def fetch_dataset(name: str, mirror_url=None, cache: Optional[str] = None, transport: Optional[Callable] = None):
    """Return ``(train, test)`` for ``mnist`` or ``fashion-mnist``.

    Files are downloaded only when missing from the cache directory; either
    the gzipped or the decompressed IDX file satisfies the cache.
    """
    return (
        load_split(name, "train", mirror_url, cache, transport),
        load_split(name, "test", mirror_url, cache, transport),
    )


def toy_dataset() -> Dataset:
    """Sixteen 4-pixel patterns; class 1 iff the left pair outweighs the right pair."""
    levels = np.array([0.25, 1.0])
    rows, labels = [], []
    for bits in range(16):
        x = levels[[(bits >> k) & 1 for k in range(4)]]
        rows.append(x)
        labels.append(int(x[0] + x[1] > x[2] + x[3]))
    images = np.round(np.array(rows) * 255).astype(np.uint8)
    return Dataset(images, np.array(labels, dtype=np.int64), "train", "toy")


def digits_dataset(test_fraction: float = 0.2, seed: int = 0):
    """8x8 handwritten digits bundled with scikit-learn, as an offline stand-in."""
    from sklearn.datasets import load_digits

    d = load_digits()
    images = np.round(d.data / 16.0 * 255).astype(np.uint8)
    perm = np.random.default_rng(seed).permutation(len(images))
    n_test = int(round(test_fraction * len(images)))
    te, tr = perm[:n_test], perm[n_test:]
    return (
        Dataset(images[tr], d.target[tr].astype(np.int64), "train", "digits"),
        Dataset(images[te], d.target[te].astype(np.int64), "test", "digits"),
    )


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def save_model(model: NetworkModel, path, provenance: Optional[dict] = None) -> None:
    """Write a versioned JSON archive; floats use shortest round-trip repr."""
    doc = {
        "format_version": FORMAT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "tau_ms": model.tau,
        "v_th_model": model.v_th_model,
        "weights": [w.tolist() for w in model.weights],
        "provenance": _jsonable(provenance or {}),
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def load_model(path) -> ModelArchive:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot parse {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version!r} (expected {FORMAT_VERSION})")
    try:
        sizes = [int(n) for n in doc["layer_sizes"]]
        weights = []
        for l, w in enumerate(doc["weights"], start=1):
            arr = np.array(w, dtype=np.float64)
            expected = (sizes[l], sizes[l - 1])
            if arr.shape != expected:
                raise ArchiveError(f"weights of layer {l} have shape {arr.shape}, expected {expected}")
            weights.append(arr)
        model = NetworkModel(tuple(sizes), tuple(weights), float(doc["v_th_model"]), float(doc["tau_ms"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise ArchiveError(f"malformed archive {path}: {exc}") from exc
    except ConfigError as exc:
        raise ArchiveError(str(exc)) from exc
    return ModelArchive(model, doc.get("provenance", {}), version)


def _header_lines(meta: Optional[dict]):
    if not meta:
        return ""
    return "# " + json.dumps(_jsonable(meta), sort_keys=True) + "\n"


def write_csv(rows: Iterable[dict], path, columns: Sequence[str], meta: Optional[dict] = None) -> None:
    """CSV with a header row, preceded by one ``#`` line holding ``meta`` as JSON."""
    buf = io.StringIO()
    buf.write(_header_lines(meta))
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    Path(path).write_text(buf.getvalue())


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(str(_fmt(v)) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def read_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


TRACE_COLUMNS = ("layer", "neuron", "time_ms", "potential")
SPIKE_COLUMNS = ("layer", "neuron", "time_ms", "tick")


def export_traces(result, trace_path, spike_path, meta: Optional[dict] = None) -> None:
    """Membrane traces and spike events of one simulated sample as CSV."""
    trace_rows, spike_rows = [], []
    for l, layer in enumerate(result.layers):
        if layer.traces is not None:
            for i, (tt, vv) in enumerate(layer.traces):
                trace_rows.extend({"layer": l, "neuron": i, "time_ms": a, "potential": b} for a, b in zip(tt, vv))
        for i in np.flatnonzero(np.isfinite(layer.spike_times)):
            tick = int(layer.tick_indices[i]) if layer.tick_indices is not None else None
            spike_rows.append({"layer": l, "neuron": int(i), "time_ms": float(layer.spike_times[i]), "tick": tick})
    write_csv(trace_rows, trace_path, TRACE_COLUMNS, meta)
    write_csv(spike_rows, spike_path, SPIKE_COLUMNS, meta)
