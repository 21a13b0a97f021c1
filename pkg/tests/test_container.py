import numpy as np
import pytest

from mvenhance.container import (ContainerError, canonical_json, config_hash,
                                 load_container, save_container)


def test_round_trip_arrays_and_meta(tmp_path):
    arrays = {"w": np.arange(12, dtype=np.float32).reshape(3, 4),
              "b": np.array([1.5, -2.5])}
    meta = {"iteration": 7, "nested": {"a": [1, 2]}}
    p = tmp_path / "c.mvck"
    save_container(p, arrays, meta)
    back_arrays, back_meta = load_container(p)
    assert back_meta == meta
    assert set(back_arrays) == {"w", "b"}
    assert np.array_equal(back_arrays["w"], arrays["w"])
    assert back_arrays["w"].dtype == np.float32
    assert np.array_equal(back_arrays["b"], arrays["b"])


def test_save_is_byte_stable(tmp_path):
    arrays = {"x": np.random.default_rng(0).random((5, 5))}
    a, b = tmp_path / "a.mvck", tmp_path / "b.mvck"
    save_container(a, arrays, {"k": 1})
    save_container(b, dict(reversed(list(arrays.items()))), {"k": 1})
    assert a.read_bytes() == b.read_bytes()


def test_rejects_bad_magic_and_version(tmp_path):
    p = tmp_path / "c.mvck"
    save_container(p, {"x": np.zeros(2)}, {})
    blob = bytearray(p.read_bytes())
    blob[4] = 99
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerError):
        load_container(p)
    blob[:4] = b"XXXX"
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerError):
        load_container(p)


def test_config_hash_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_canonical_json_compact():
    s = canonical_json({"b": [1, 2], "a": 0.5})
    assert s == '{"a":0.5,"b":[1,2]}'
