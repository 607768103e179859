"""Container validation and the three on-disk formats."""
import os
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from corruptbench.datasets import (
    CIFAR_RECORD,
    EmbeddingSet,
    LabeledDataset,
    class_histogram,
    l2_normalize,
    read_cifar_binary,
    read_embeddings,
    read_image_dir,
    write_embeddings,
    write_image_dir,
)
from corruptbench.errors import DataError, NumericError


def rand_dataset(rng, n=12, side=8, num_classes=4):
    imgs = rng.integers(0, 256, size=(n, side, side, 3), dtype=np.uint8)
    labels = rng.integers(0, num_classes, size=n)
    return LabeledDataset(imgs, labels, num_classes)


# ---------------------------------------------------------------------------
# containers


def test_dataset_rejects_bad_shapes(rng):
    good = rng.integers(0, 256, size=(3, 4, 4, 3), dtype=np.uint8)
    with pytest.raises(DataError):
        LabeledDataset(good[0], np.zeros(3), 2)  # 3-D stack
    with pytest.raises(DataError):
        LabeledDataset(good.astype(np.int16), np.zeros(3), 2)
    with pytest.raises(DataError):
        LabeledDataset(good, np.zeros(2), 2)  # label length mismatch
    with pytest.raises(DataError):
        LabeledDataset(good, np.array([0, 1, 2]), 2)  # label out of range
    with pytest.raises(DataError):
        LabeledDataset(good, np.array([0, -1, 0]), 2)


def test_dataset_is_frozen(rng):
    ds = rand_dataset(rng)
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 1
    with pytest.raises(ValueError):
        ds.labels[0] = 1


def test_subset_keeps_order(rng):
    ds = rand_dataset(rng)
    sub = ds.subset(np.array([5, 1, 3]))
    assert np.array_equal(sub.images, ds.images[[5, 1, 3]])
    assert np.array_equal(sub.labels, ds.labels[[5, 1, 3]])
    assert sub.num_classes == ds.num_classes


def test_replace_images_checks_shape(rng):
    ds = rand_dataset(rng)
    out = ds.replace_images(ds.images[:, ::-1].copy())
    assert np.array_equal(out.labels, ds.labels)
    with pytest.raises(DataError):
        ds.replace_images(ds.images[:5])


def test_embedding_set_basics(rng):
    feats = rng.normal(size=(6, 3)).astype(np.float32)
    emb = EmbeddingSet(feats, [0, 1, 2, 0, 1, 2])
    assert len(emb) == 6 and emb.dim == 3 and emb.num_classes == 3
    with pytest.raises(DataError):
        EmbeddingSet(feats, [0, 1, 2, 0, 1, -1])
    bad = feats.copy()
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        EmbeddingSet(bad, [0] * 6)


def test_normalized_flag_is_checked(rng):
    feats = rng.normal(size=(4, 5))
    with pytest.raises(DataError):
        EmbeddingSet(2.0 * feats / np.linalg.norm(feats, axis=1, keepdims=True),
                     [0, 1, 0, 1], normalized=True)
    unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    assert EmbeddingSet(unit, [0, 1, 0, 1], normalized=True).normalized


def test_l2_normalize(rng):
    emb = EmbeddingSet(rng.normal(size=(10, 4)).astype(np.float32) * 7.0, [0] * 10)
    out = l2_normalize(emb)
    norms = np.linalg.norm(out.features.astype(np.float64), axis=1)
    assert out.normalized
    assert np.abs(norms - 1.0).max() < 1e-6


def test_l2_normalize_zero_row_is_numeric_error():
    feats = np.zeros((2, 3), dtype=np.float32)
    feats[0] = [1, 2, 3]
    with pytest.raises(NumericError):
        l2_normalize(EmbeddingSet(feats, [0, 1]))


def test_class_histogram():
    counts = class_histogram(np.array([0, 2, 2, 1, 2]), 4)
    assert counts.tolist() == [1, 1, 3, 0]


# ---------------------------------------------------------------------------
# EMB1 files


def emb1_bytes(feats: np.ndarray, labels: np.ndarray, flag: int) -> bytes:
    """Byte-layout oracle built from the format description alone."""
    n, d = feats.shape
    return (
        b"EMB1"
        + struct.pack("<IIB", n, d, flag)
        + feats.astype("<f4").tobytes()
        + labels.astype("<u4").tobytes()
    )


def test_emb1_write_matches_layout_oracle(tmp_path, rng):
    feats = rng.normal(size=(7, 5)).astype(np.float32)
    labels = rng.integers(0, 3, size=7)
    path = tmp_path / "a.emb"
    write_embeddings(EmbeddingSet(feats, labels), str(path))
    assert path.read_bytes() == emb1_bytes(feats, labels, 0)


def test_emb1_read_of_oracle_bytes(tmp_path, rng):
    feats = rng.normal(size=(4, 2)).astype(np.float32)
    labels = np.array([3, 0, 1, 2])
    path = tmp_path / "b.emb"
    path.write_bytes(emb1_bytes(feats, labels, 0))
    emb = read_embeddings(str(path))
    assert np.array_equal(emb.features, feats)
    assert np.array_equal(emb.labels, labels)
    assert not emb.normalized


def test_emb1_roundtrip_preserves_bits(tmp_path, rng):
    feats = rng.normal(size=(20, 9)).astype(np.float32)
    emb = l2_normalize(EmbeddingSet(feats, rng.integers(0, 6, size=20)))
    path = str(tmp_path / "c.emb")
    write_embeddings(emb, path)
    back = read_embeddings(path)
    assert back.features.tobytes() == emb.features.tobytes()
    assert np.array_equal(back.labels, emb.labels)
    assert back.normalized


@pytest.mark.parametrize(
    "mangle",
    [
        lambda raw: b"XXXX" + raw[4:],          # bad magic
        lambda raw: raw[:-3],                   # truncated
        lambda raw: raw + b"\x00",              # trailing junk
        lambda raw: raw[:12] + b"\x07" + raw[13:],  # bad flag
        lambda raw: raw[:8],                    # header cut short
    ],
)
def test_emb1_rejects_malformed(tmp_path, rng, mangle):
    feats = rng.normal(size=(3, 2)).astype(np.float32)
    raw = emb1_bytes(feats, np.zeros(3, dtype=np.int64), 0)
    path = tmp_path / "bad.emb"
    path.write_bytes(mangle(raw))
    with pytest.raises(DataError):
        read_embeddings(str(path))


# ---------------------------------------------------------------------------
# raw image directories


def test_image_dir_roundtrip(tmp_path, rng):
    ds = rand_dataset(rng, n=9, side=6)
    write_image_dir(ds, str(tmp_path / "d"))
    back = read_image_dir(str(tmp_path / "d"))
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.labels, ds.labels)
    assert back.num_classes == ds.num_classes


def test_image_dir_file_layout(tmp_path, rng):
    ds = rand_dataset(rng, n=2, side=3)
    write_image_dir(ds, str(tmp_path / "d"))
    raw = (tmp_path / "d" / "000001.img").read_bytes()
    assert raw == struct.pack("<III", 3, 3, 3) + ds.images[1].tobytes()
    csv_text = (tmp_path / "d" / "labels.csv").read_text()
    assert csv_text == f"000000.img,{ds.labels[0]}\n000001.img,{ds.labels[1]}\n"


def test_image_dir_orders_by_name(tmp_path, rng):
    ds = rand_dataset(rng, n=3, side=4)
    write_image_dir(ds, str(tmp_path / "d"))
    # rewrite labels.csv shuffled; reader must sort by file name
    lines = (tmp_path / "d" / "labels.csv").read_text().splitlines()
    (tmp_path / "d" / "labels.csv").write_text("\n".join(reversed(lines)) + "\n")
    back = read_image_dir(str(tmp_path / "d"))
    assert np.array_equal(back.images, ds.images)


def test_image_dir_error_cases(tmp_path, rng):
    ds = rand_dataset(rng, n=2, side=4)
    base = tmp_path / "d"
    write_image_dir(ds, str(base))
    with pytest.raises(DataError):
        read_image_dir(str(tmp_path / "missing"))
    (base / "labels.csv").write_text("000000.img,notanumber\n")
    with pytest.raises(DataError):
        read_image_dir(str(base))
    (base / "labels.csv").write_text("000000.img,0\n000000.img,1\n")
    with pytest.raises(DataError):
        read_image_dir(str(base))
    (base / "labels.csv").write_text("000000.img,0,extra\n")
    with pytest.raises(DataError):
        read_image_dir(str(base))
    (base / "labels.csv").write_text("")
    with pytest.raises(DataError):
        read_image_dir(str(base))


def test_image_dir_rejects_mixed_shapes(tmp_path, rng):
    ds = rand_dataset(rng, n=2, side=4)
    base = tmp_path / "d"
    write_image_dir(ds, str(base))
    other = rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
    (base / "000001.img").write_bytes(struct.pack("<III", 5, 5, 3) + other.tobytes())
    with pytest.raises(DataError):
        read_image_dir(str(base))


def test_image_dir_rejects_truncated_pixels(tmp_path, rng):
    ds = rand_dataset(rng, n=1, side=4)
    base = tmp_path / "d"
    write_image_dir(ds, str(base))
    raw = (base / "000000.img").read_bytes()
    (base / "000000.img").write_bytes(raw[:-1])
    with pytest.raises(DataError):
        read_image_dir(str(base))


# ---------------------------------------------------------------------------
# CIFAR-style binaries


def cifar_bytes(images: np.ndarray, labels: np.ndarray) -> bytes:
    """Record oracle: label byte, then R, G, B planes of 1024 bytes each."""
    out = bytearray()
    for img, label in zip(images, labels):
        out.append(int(label))
        for ch in range(3):
            out.extend(img[:, :, ch].tobytes())
    return bytes(out)


def test_cifar_reader_matches_plane_oracle(tmp_path, rng):
    images = rng.integers(0, 256, size=(5, 32, 32, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5)
    path = tmp_path / "batch.bin"
    path.write_bytes(cifar_bytes(images, labels))
    ds = read_cifar_binary(str(path))
    assert np.array_equal(ds.images, images)
    assert np.array_equal(ds.labels, labels)


def test_cifar_reader_strided_spot_checks(tmp_path, rng):
    images = rng.integers(0, 256, size=(3, 32, 32, 3), dtype=np.uint8)
    labels = np.array([1, 0, 9])
    path = tmp_path / "batch.bin"
    raw = cifar_bytes(images, labels)
    path.write_bytes(raw)
    ds = read_cifar_binary(str(path))
    for _ in range(200):
        i = int(rng.integers(0, 3))
        y, x, ch = (int(v) for v in rng.integers(0, 32, size=3) % [32, 32, 3])
        offset = i * CIFAR_RECORD + 1 + ch * 1024 + y * 32 + x
        assert ds.images[i, y, x, ch] == raw[offset]


def test_cifar_reader_rejects_bad_sizes(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * (CIFAR_RECORD + 1))
    with pytest.raises(DataError):
        read_cifar_binary(str(path))
    path.write_bytes(b"")
    with pytest.raises(DataError):
        read_cifar_binary(str(path))


def test_cifar_reader_rejects_label_overflow(tmp_path, rng):
    images = rng.integers(0, 256, size=(1, 32, 32, 3), dtype=np.uint8)
    path = tmp_path / "bad.bin"
    path.write_bytes(cifar_bytes(images, np.array([10])))
    with pytest.raises(DataError):
        read_cifar_binary(str(path))
    assert read_cifar_binary(str(path), num_classes=11).labels[0] == 10


@pytest.mark.skipif(
    not os.environ.get("CORRUPT_BENCH_CIFAR"),
    reason="set CORRUPT_BENCH_CIFAR to a real data_batch file to enable",
)
def test_cifar_reader_on_real_batch():
    ds = read_cifar_binary(os.environ["CORRUPT_BENCH_CIFAR"])
    assert ds.image_shape == (32, 32, 3)
    assert len(ds) >= 1000


@given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=2**31))
def test_emb1_roundtrip_property(n, seed):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, 3)).astype(np.float32)
    labels = rng.integers(0, 5, size=n)
    emb = EmbeddingSet(feats, labels)
    path = f"/tmp/emb1-prop-{os.getpid()}.emb"
    write_embeddings(emb, path)
    back = read_embeddings(path)
    assert back.features.tobytes() == emb.features.tobytes()
    assert np.array_equal(back.labels, labels)
