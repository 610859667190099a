import numpy as np
import pytest

from rtrrl.errors import SnapshotError
from rtrrl.snapshot import MAGIC, dumps, load_snapshot, loads, save_snapshot


def _tensors():
    rng = np.random.default_rng(3)
    return {
        "W": rng.normal(size=(3, 5)),
        "lam": rng.normal(size=4) + 1j * rng.normal(size=4),
        "t": np.array(17),
        "flags": np.array([True, False]),
        "empty": np.zeros((0, 2)),
    }


def test_round_trip(tmp_path):
    t = _tensors()
    save_snapshot(tmp_path / "a.snap", t, {"config": {"seed": 1}})
    back, meta = load_snapshot(tmp_path / "a.snap")
    assert meta == {"config": {"seed": 1}}
    assert set(back) == set(t)
    for k in t:
        assert back[k].shape == t[k].shape
        assert back[k].dtype.kind == t[k].dtype.kind
        np.testing.assert_array_equal(back[k], t[k])


def test_encoding_is_deterministic():
    assert dumps(_tensors(), {"a": 1}) == dumps(_tensors(), {"a": 1})


def test_bad_magic():
    blob = dumps(_tensors())
    with pytest.raises(SnapshotError, match="magic"):
        loads(b"X" + blob[1:])
    assert blob.startswith(MAGIC)


def test_flipped_byte_detected():
    blob = bytearray(dumps(_tensors()))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(SnapshotError):
        loads(bytes(blob))


@pytest.mark.parametrize("cut", [1, 10, 100])
def test_truncation_detected(cut):
    blob = dumps(_tensors())
    with pytest.raises(SnapshotError):
        loads(blob[:-cut])


def test_missing_file(tmp_path):
    with pytest.raises(SnapshotError):
        load_snapshot(tmp_path / "nope.snap")


def test_unsupported_dtype():
    with pytest.raises(SnapshotError):
        dumps({"s": np.array(["a"])})
