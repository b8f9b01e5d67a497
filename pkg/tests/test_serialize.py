import numpy as np
import pytest

from cascadeim.graph import Graph
from cascadeim.serialize import (
    load_embeddings,
    load_tensors,
    read_kv,
    read_seeds,
    save_embeddings,
    save_tensors,
    write_kv,
    write_seeds,
)


def test_tensor_dump_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = {"w": rng.standard_normal((3, 4)), "b": np.array([1e-300, -0.0, np.pi]),
         "scalar": np.array(2.5), "idx": np.arange(5)}
    meta = {"dim": 4, "name": "x y", "sigmoid": True, "none": None}
    save_tensors(tmp_path / "t.params", t, meta)
    back, m = load_tensors(tmp_path / "t.params")
    assert m == meta
    for k, v in t.items():
        assert back[k].shape == v.shape
        assert back[k].tobytes() == np.asarray(v).astype(back[k].dtype).tobytes()
    assert back["idx"].dtype == np.int64


def test_tensor_dump_rejects_other_files(tmp_path):
    p = tmp_path / "x"
    p.write_text("hello\n")
    with pytest.raises(ValueError, match="not a tensor dump"):
        load_tensors(p)


def test_embeddings_follow_labels(tmp_path):
    g = Graph.from_edges(3, [(0, 1)], labels=("a", "b", "c"))
    Z = np.arange(6.0).reshape(3, 2) / 7
    save_embeddings(tmp_path / "e.csv", Z[::-1], ["c", "b", "a"])
    np.testing.assert_array_equal(load_embeddings(tmp_path / "e.csv", g), Z)
    save_embeddings(tmp_path / "short.csv", Z[:2], ["a", "b"])
    with pytest.raises(ValueError, match="no embedding"):
        load_embeddings(tmp_path / "short.csv", g)


def test_seed_files(tmp_path):
    g = Graph.from_edges(3, [(0, 1)], labels=("x", "y", "z"))
    write_seeds(tmp_path / "s.txt", [2, 0], g)
    assert (tmp_path / "s.txt").read_text() == "z\nx\n"
    assert read_seeds(tmp_path / "s.txt", g) == [2, 0]


def test_key_value_files(tmp_path):
    text = write_kv(tmp_path / "kv.txt", {"alpha": np.float64(0.1), "n": 3})
    assert text == "alpha=0.1\nn=3\n"
    (tmp_path / "cfg").write_text("# c\nout-dir = runs\n\nseed=4\n")
    assert read_kv(tmp_path / "cfg") == {"out_dir": "runs", "seed": "4"}
    (tmp_path / "bad").write_text("novalue\n")
    with pytest.raises(ValueError, match="key=value"):
        read_kv(tmp_path / "bad")
