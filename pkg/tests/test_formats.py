import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smallnet import formats
from smallnet.dataset import Dataset
from smallnet.features import TENSOR_SHAPE
from smallnet.network import VARIANTS, Architecture, fit_normalizer, init


def _dataset(n, seed=0, names=("RH", "feet", "relax", "humming")):
    rng = np.random.default_rng(seed)
    return Dataset(rng.gamma(2.0, 1.0, size=(n,) + TENSOR_SHAPE), rng.integers(0, 4, n),
                   np.sort(rng.uniform(0, 100, n)), rng.integers(0, 2, n), names)


def test_dataset_round_trip(tmp_path):
    d = _dataset(7)
    formats.save_dataset(d, tmp_path / "d.snb")
    back = formats.load_dataset(tmp_path / "d.snb")
    assert back.equals(d)
    assert back.tensors.dtype == np.float32


def test_empty_dataset_round_trip(tmp_path):
    formats.save_dataset(Dataset.empty(("a", "b")), tmp_path / "e.snb")
    back = formats.load_dataset(tmp_path / "e.snb")
    assert len(back) == 0 and back.task_names == ("a", "b")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 5), st.integers(0, 2 ** 32 - 1))
def test_round_trip_property(n, seed):
    d = _dataset(n, seed)
    assert formats.parse_dataset(formats.dataset_bytes(d)).equals(d)


def test_layout_little_endian():
    d = _dataset(3)
    raw = formats.dataset_bytes(d)
    assert raw[:4] == b"SNB1" and struct.unpack("<HH", raw[4:8]) == (1, 0)
    assert struct.unpack("<I3H", raw[8:18]) == (3, 129, 7, 11)
    names = 2 + sum(1 + len(n) for n in d.task_names)
    record = 1 + 1 + 8 + 4 * 129 * 7 * 11
    assert len(raw) == 18 + names + 3 * record
    first = 18 + names
    assert raw[first] == d.labels[0] and raw[first + 1] == d.origins[0]
    assert struct.unpack("<d", raw[first + 2:first + 10])[0] == d.timestamps[0]


def test_truncation_detected():
    raw = formats.dataset_bytes(_dataset(2))
    for cut in (2, 10, len(raw) - 1):
        with pytest.raises(formats.TruncatedFileError):
            formats.parse_dataset(raw[:cut])


def test_bad_magic_detected():
    raw = formats.dataset_bytes(_dataset(1))
    with pytest.raises(formats.BadMagicError):
        formats.parse_dataset(b"XXXX" + raw[4:])


def test_newer_major_rejected_minor_accepted():
    raw = formats.dataset_bytes(_dataset(1))
    with pytest.raises(formats.UnsupportedVersionError):
        formats.parse_dataset(raw[:4] + struct.pack("<HH", 2, 0) + raw[8:])
    assert len(formats.parse_dataset(raw[:4] + struct.pack("<HH", 1, 7) + raw[8:])) == 1


def test_trailing_bytes_rejected():
    with pytest.raises(formats.CorruptFileError):
        formats.parse_dataset(formats.dataset_bytes(_dataset(1)) + b"\0")


def test_error_categories_distinct():
    kinds = [formats.BadMagicError, formats.UnsupportedVersionError, formats.TruncatedFileError]
    assert len(set(kinds)) == 3 and all(issubclass(k, formats.FormatError) for k in kinds)


@pytest.mark.parametrize("variant", VARIANTS)
def test_model_round_trip(variant, tmp_path):
    arch = Architecture(variant, feature_maps=4, fc_width=8)
    p = fit_normalizer(init(arch, 11), np.random.default_rng(0).gamma(2, 1, (5,) + TENSOR_SHAPE))
    c = np.linalg.qr(np.random.default_rng(1).standard_normal((64, 64)))[0]
    formats.save_model(p, tmp_path / "m.snm", c)
    q, c2 = formats.load_model(tmp_path / "m.snm")
    assert q.arch == arch and q.seed == 11
    assert np.array_equal(q.flat, p.flat.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(q.input_mean, p.input_mean)
    np.testing.assert_array_equal(c2, c)


def test_model_without_extras(tmp_path):
    p = init(Architecture(feature_maps=2, fc_width=4), 0)
    formats.save_model(p, tmp_path / "m.snm")
    q, c = formats.load_model(tmp_path / "m.snm")
    assert c is None and q.input_mean is None


def test_model_magic_checked(tmp_path):
    (tmp_path / "x").write_bytes(formats.dataset_bytes(_dataset(1)))
    with pytest.raises(formats.BadMagicError):
        formats.load_model(tmp_path / "x")


def test_correction_round_trip(tmp_path):
    c = np.random.default_rng(2).standard_normal((64, 64))
    formats.save_correction(c, tmp_path / "c.snc", {5, 2})
    m, flagged = formats.load_correction(tmp_path / "c.snc")
    assert np.array_equal(m, c) and flagged == (2, 5)
