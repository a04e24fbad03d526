import os
from pathlib import Path

import numpy as np
import pytest

import pbatch

FIXTURES = Path(os.environ.get("PBATCH_FIXTURE_DIR", Path(__file__).resolve().parents[2] / "fixtures"))


def test_worked_example():
    w = np.array([[1, -1], [4, -4]], dtype=np.float32)
    q = pbatch.decompose(w, 3, frac_bits=0)
    assert q.scales == [-8, 4, 2, 1]
    assert [b.tolist() for b in q.bitlayers] == [
        [[0, 1], [0, 1]],
        [[0, 1], [1, 1]],
        [[0, 1], [0, 0]],
        [[1, 1], [0, 0]],
    ]
    y = pbatch.matvec(q, np.array([1, -2], dtype=np.float32), activation_bits=4, activation_frac_bits=0)
    assert y.tolist() == [3.0, 12.0]


def test_matches_integer_reference():
    rng = np.random.default_rng(3)
    w = rng.uniform(-1, 1, size=(17, 130)).astype(np.float32)
    x = rng.uniform(-1, 1, size=130).astype(np.float32)
    q = pbatch.decompose(w, 4)
    wq = q.integers()
    assert (wq % (1 << 0) == 0).all()
    frac = 16
    xq = np.floor(x.astype(np.float64) * 2.0**frac).astype(np.int64)
    expect = (wq.astype(object) @ xq.astype(object)).astype(np.float64) / 2.0 ** (q.frac_bits + frac)
    got = pbatch.matvec(q, x, activation_bits=32, activation_frac_bits=frac)
    np.testing.assert_array_equal(got, expect.astype(np.float32))


def test_precision_ladder():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(32, 256)).astype(np.float32)
    x = rng.normal(size=256).astype(np.float32)
    ref = pbatch.float_matvec(w, x)
    errs = [np.abs(pbatch.matvec(pbatch.decompose(w, n), x) - ref).mean() for n in (1, 2, 4, 8, 16)]
    assert errs == sorted(errs, reverse=True)
    q = pbatch.decompose(w, 8)
    assert q.packed_bytes == 9 * 32 * 4 * 8
    np.testing.assert_array_equal(pbatch.matvec(q, x, use_layers=9), pbatch.matvec(q, x))


def test_bad_input_raises():
    with pytest.raises(ValueError):
        pbatch.decompose(np.zeros(4, dtype=np.float32), 4)
    q = pbatch.decompose(np.ones((2, 3), dtype=np.float32), 2)
    with pytest.raises(ValueError):
        pbatch.matvec(q, np.ones(4, dtype=np.float32))


@pytest.mark.skipif(not (FIXTURES / "digits_mlp.pbm1").exists(), reason="fixtures not generated")
def test_fixture_accuracy():
    model = pbatch.load_model(str(FIXTURES / "digits_mlp.pbm1"))
    data = pbatch.load_dataset(str(FIXTURES / "digits-test-images-idx3-ubyte"))
    assert model.input_dim == data.feature_dim
    full = pbatch.eval_accuracy(model, data, "f")
    assert full > 0.9
    assert pbatch.eval_accuracy(model, data, "(8,32)") >= full - 0.01
    assert model.forward(data.features[0], "(4,16)").shape == (10,)
