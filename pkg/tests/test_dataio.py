import gzip
import json
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttfs_vlsi import init_network, run_batch
from ttfs_vlsi.dataio import (
    ArchiveError,
    Dataset,
    DatasetError,
    IdxError,
    digits_dataset,
    export_traces,
    fetch_dataset,
    load_model,
    normalize_pixels,
    parse_idx,
    read_csv,
    save_model,
    toy_dataset,
    write_csv,
)
from ttfs_vlsi.simulator import run_network


def idx_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


# IDX


def test_parse_image_tensor():
    data = np.arange(10000 * 28 * 28, dtype=np.int64).astype(np.uint8).reshape(10000, 28, 28)
    blob = idx_bytes(data)
    assert len(blob) == 16 + 7_840_000
    out = parse_idx(blob)
    assert out.shape == (10000, 28, 28)
    assert np.array_equal(out, data)


def test_parse_label_vector():
    labels = np.arange(10000) % 10
    out = parse_idx(idx_bytes(labels))
    assert out.shape == (10000,)
    assert np.array_equal(out, labels)


def test_parse_truncated_payload():
    with pytest.raises(IdxError, match="truncated"):
        parse_idx(idx_bytes(np.zeros((3, 2, 2)))[:-1])


def test_parse_bad_magic():
    with pytest.raises(IdxError, match="magic"):
        parse_idx(b"\x00\x00\x09\x01" + struct.pack(">I", 0))


def test_parse_dimension_overflow():
    with pytest.raises(IdxError, match="overflow"):
        parse_idx(struct.pack(">IIII", 0x803, 2**16, 2**16, 2**16))


def test_parse_trailing_bytes():
    with pytest.raises(IdxError, match="trailing"):
        parse_idx(idx_bytes(np.zeros(3)) + b"\x00")


@settings(max_examples=400, deadline=None)
@given(st.binary(max_size=64))
def test_parse_is_total(blob):
    try:
        out = parse_idx(blob)
    except IdxError:
        return
    assert out.dtype == np.uint8


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=3), st.data())
def test_parse_roundtrip(shape, data):
    arr = np.array(data.draw(st.lists(st.integers(0, 255), min_size=int(np.prod(shape)), max_size=int(np.prod(shape)))))
    arr = arr.astype(np.uint8).reshape(shape)
    if arr.ndim == 1 or arr.ndim == 3:
        assert np.array_equal(parse_idx(idx_bytes(arr)), arr)
    else:
        with pytest.raises(IdxError):
            parse_idx(idx_bytes(arr))


# pixels


def test_normalize_pixels():
    out = normalize_pixels(np.array([255, 0, 128], dtype=np.uint8))
    assert out[0] == 1.0
    assert out[1] == 0.0
    assert out[2] == 128 / 255


# fetching


class FakeMirror:
    """Transport serving a miniature dataset with the real cardinalities."""

    def __init__(self, corrupt=False):
        self.calls = []
        self.corrupt = corrupt
        self.lock = threading.Lock()
        rng = np.random.default_rng(0)
        self.files = {}
        for prefix, n in (("train", 60000), ("t10k", 10000)):
            self.files[f"{prefix}-images-idx3-ubyte.gz"] = gzip.compress(idx_bytes(rng.integers(0, 256, (n, 2, 2))))
            self.files[f"{prefix}-labels-idx1-ubyte.gz"] = gzip.compress(idx_bytes(rng.integers(0, 10, n)))

    def __call__(self, url):
        with self.lock:
            self.calls.append(url)
        blob = self.files[url.rsplit("/", 1)[1]]
        return blob[:20] if self.corrupt else blob


def test_fetch_then_cache_hit(tmp_path):
    mirror = FakeMirror()
    train, test = fetch_dataset("mnist", "http://mirror.test/", str(tmp_path), transport=mirror)
    assert len(train) == 60000 and len(test) == 10000
    assert len(mirror.calls) == 4
    again = FakeMirror()
    train2, _ = fetch_dataset("mnist", "http://mirror.test/", str(tmp_path), transport=again)
    assert again.calls == []
    assert np.array_equal(train.images, train2.images)


def test_uncompressed_cache_is_accepted(tmp_path):
    mirror = FakeMirror()
    folder = tmp_path / "fashion-mnist"
    folder.mkdir()
    for name, blob in mirror.files.items():
        (folder / name[:-3]).write_bytes(gzip.decompress(blob))
    train, _ = fetch_dataset("fashion-mnist", "http://unused/", str(tmp_path), transport=FakeMirror(corrupt=True))
    assert len(train) == 60000


def test_corrupted_cached_gzip_names_file(tmp_path):
    folder = tmp_path / "mnist"
    folder.mkdir()
    (folder / "train-images-idx3-ubyte.gz").write_bytes(b"not a gzip stream")
    with pytest.raises(DatasetError, match="train-images-idx3-ubyte.gz"):
        fetch_dataset("mnist", "http://mirror.test/", str(tmp_path), transport=FakeMirror())


def test_corrupt_download_is_not_cached(tmp_path):
    with pytest.raises(DatasetError, match="corrupt"):
        fetch_dataset("mnist", "http://mirror.test/", str(tmp_path), transport=FakeMirror(corrupt=True))
    assert not list((tmp_path / "mnist").glob("*.gz"))


def test_unreachable_mirrors(tmp_path):
    def offline(url):
        raise OSError("network unreachable")

    with pytest.raises(DatasetError, match="could not download"):
        fetch_dataset("mnist", ["http://a/", "http://b/"], str(tmp_path), transport=offline)


def test_size_mismatch(tmp_path):
    mirror = FakeMirror()
    mirror.files["train-labels-idx1-ubyte.gz"] = gzip.compress(idx_bytes(np.zeros(5)))
    with pytest.raises(DatasetError, match="60000"):
        fetch_dataset("mnist", "http://mirror.test/", str(tmp_path), transport=mirror)


def test_concurrent_fetch_downloads_once(tmp_path):
    mirror = FakeMirror()
    results = []
    threads = [
        threading.Thread(target=lambda: results.append(fetch_dataset("mnist", "http://m/", str(tmp_path), transport=mirror)))
        for _ in range(4)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(results) == 4
    assert len(mirror.calls) == 4


def test_env_var_sets_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("TTFS_VLSI_CACHE", str(tmp_path))
    fetch_dataset("mnist", "http://m/", transport=FakeMirror())
    assert (tmp_path / "mnist" / "t10k-labels-idx1-ubyte.gz").exists()


def test_unknown_dataset():
    with pytest.raises(DatasetError):
        fetch_dataset("cifar")


def test_dataset_invariants():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 4), np.uint8), np.array([0]))
    with pytest.raises(DatasetError):
        Dataset(np.zeros((1, 4), np.uint8), np.array([10]))


def test_builtin_datasets():
    toy = toy_dataset()
    assert len(toy) == 16 and toy.labels.sum() == 5
    train, test = digits_dataset()
    assert train.images.shape[1] == 64 and len(train) + len(test) == 1797


# archives


def test_archive_roundtrip_is_bit_exact(tmp_path):
    model = init_network([30, 12, 10], seed=4)
    path = tmp_path / "m.json"
    save_model(model, path, {"dataset": "toy", "seed": 4})
    archive = load_model(path)
    assert archive.model == model
    assert archive.provenance == {"dataset": "toy", "seed": 4}
    x = np.random.default_rng(0).integers(0, 256, (100, 30)).astype(np.uint8)
    assert np.array_equal(run_batch(model, x).labels, run_batch(archive.model, x).labels)


def test_archive_schema_keys(tmp_path):
    path = tmp_path / "m.json"
    save_model(init_network([3, 2], seed=0), path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"format_version", "layer_sizes", "tau_ms", "v_th_model", "weights", "provenance"}


def test_archive_unknown_version(tmp_path):
    path = tmp_path / "m.json"
    save_model(init_network([3, 2], seed=0), path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ArchiveError, match="version"):
        load_model(path)


def test_archive_shape_error_names_layer(tmp_path):
    path = tmp_path / "m.json"
    save_model(init_network([3, 4, 2], seed=0), path)
    doc = json.loads(path.read_text())
    doc["weights"][1] = doc["weights"][1][:1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ArchiveError, match="layer 2"):
        load_model(path)


def test_archive_parse_error(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(ArchiveError):
        load_model(path)


# export


def test_csv_header_and_meta(tmp_path):
    path = tmp_path / "x.csv"
    write_csv([{"a": 1, "b": 0.1}, {"a": 2, "b": None}], path, ["a", "b"], {"seed": 3})
    lines = path.read_text().splitlines()
    assert json.loads(lines[0][2:]) == {"seed": 3}
    assert lines[1] == "a,b"
    assert read_csv(path) == [{"a": "1", "b": "0.1"}, {"a": "2", "b": ""}]


def test_export_traces(tmp_path):
    model = init_network([6, 4, 3], seed=1)
    res = run_network(model, np.linspace(0.1, 1, 6), record_traces=True)
    export_traces(res, tmp_path / "t.csv", tmp_path / "s.csv", {"sample": 0})
    traces = read_csv(tmp_path / "t.csv")
    spikes = read_csv(tmp_path / "s.csv")
    assert list(traces[0]) == ["layer", "neuron", "time_ms", "potential"]
    assert list(spikes[0]) == ["layer", "neuron", "time_ms", "tick"]
    assert len(spikes) == sum(int(np.isfinite(l.spike_times).sum()) for l in res.layers)
