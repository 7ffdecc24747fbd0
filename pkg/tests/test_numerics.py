import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hinpath.errors import DimMismatch, NonFiniteFunction
from hinpath.numerics import (
    ParamStore,
    adam_step,
    add,
    concat,
    concat_backward,
    grad_check,
    hadamard,
    hadamard_backward,
    matvec,
    matvec_backward,
    numeric_grad,
    sigmoid,
    sigmoid_backward,
    stream,
    tanh,
    tanh_backward,
    xavier_init,
)

finite = st.floats(-50, 50, allow_nan=False)


def loop_matvec(M, x):
    out = []
    for r in range(len(M)):
        acc = 0.0
        for c in range(len(x)):
            acc += M[r][c] * x[c]
        out.append(acc)
    return out


class TestPrimitives:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(matvec(np.eye(3), x), x)

    def test_scalars(self):
        assert sigmoid(0.0) == 0.5
        assert tanh(0.0) == 0.0

    def test_matvec_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            M = rng.normal(size=(4, 3))
            x = rng.normal(size=3)
            np.testing.assert_allclose(matvec(M, x), loop_matvec(M.tolist(), x.tolist()), atol=1e-12, rtol=0)

    def test_concat_length(self):
        assert concat(np.ones(2), np.zeros(5)).shape == (7,)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            matvec(np.eye(3), np.ones(4))
        with pytest.raises(DimMismatch):
            add(np.ones(3), np.ones(4))
        with pytest.raises(DimMismatch):
            hadamard(np.ones((3, 1)), np.ones(3))
        with pytest.raises(DimMismatch):
            concat(np.ones((2, 2)), np.ones(2))
        with pytest.raises(DimMismatch):
            matvec(np.ones(3), np.ones(3))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6, allow_nan=False)))
    def test_saturating_outputs_finite(self, x):
        s = sigmoid(x)
        t = tanh(x)
        assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
        assert np.all(np.isfinite(t)) and np.all(np.abs(t) <= 1)

    def test_sigmoid_extremes(self):
        np.testing.assert_array_equal(sigmoid(np.array([-1e308, 1e308])), [0.0, 1.0])


def _readout_check(fn, backward, shapes, seed):
    """grad_check of fn composed with a random linear readout, for every input."""
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    for k, shp in enumerate(shapes):
        ps.add(f"x{k}", rng.normal(size=shp))
    out_shape = np.shape(fn(*[ps[f"x{k}"] for k in range(len(shapes))]))
    c = rng.normal(size=out_shape)

    def f(p):
        return float(np.sum(c * fn(*[p[f"x{k}"] for k in range(len(shapes))])))

    grads = backward(*[ps[f"x{k}"] for k in range(len(shapes))], c)
    return grad_check(f, ps, {f"x{k}": g for k, g in enumerate(grads)})


class TestBackwardHelpers:
    @pytest.mark.parametrize("seed", range(5))
    def test_matvec(self, seed):
        err = _readout_check(matvec, lambda M, x, dy: matvec_backward(M, x, dy), [(4, 3), (3,)], seed)
        assert err < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_hadamard(self, seed):
        assert _readout_check(hadamard, hadamard_backward, [(5,), (5,)], seed) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_add(self, seed):
        assert _readout_check(add, lambda a, b, dy: (dy, dy), [(4,), (4,)], seed) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_concat(self, seed):
        assert _readout_check(concat, lambda a, b, dy: concat_backward(a.shape[0], dy), [(3,), (2,)], seed) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_sigmoid(self, seed):
        assert _readout_check(sigmoid, lambda x, dy: (sigmoid_backward(sigmoid(x), dy),), [(6,)], seed) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_tanh(self, seed):
        assert _readout_check(tanh, lambda x, dy: (tanh_backward(tanh(x), dy),), [(6,)], seed) < 1e-6

    def test_backward_dim_checks(self):
        with pytest.raises(DimMismatch):
            matvec_backward(np.ones((2, 3)), np.ones(3), np.ones(3))
        with pytest.raises(DimMismatch):
            sigmoid_backward(np.ones(2), np.ones(3))
        with pytest.raises(DimMismatch):
            concat_backward(5, np.ones(3))


class TestXavier:
    def test_bounds(self):
        W = xavier_init(30, 20, 1)
        s = math.sqrt(6 / 50)
        assert W.shape == (30, 20)
        assert np.all(np.abs(W) <= s)

    def test_deterministic(self):
        np.testing.assert_array_equal(xavier_init(5, 7, 42), xavier_init(5, 7, 42))
        assert not np.array_equal(xavier_init(5, 7, 42), xavier_init(5, 7, 43))

    def test_mean(self):
        W = xavier_init(100, 100, 3)
        s = math.sqrt(6 / 200)
        assert abs(W.mean()) < 3 * s / math.sqrt(3 * 10000)

    def test_bad_dims(self):
        with pytest.raises(DimMismatch):
            xavier_init(0, 3)


class TestGradCheck:
    def test_square(self):
        ps = ParamStore()
        ps.add("t", [3.0])
        g = numeric_grad(lambda p: float(p["t"][0] ** 2), ps, "t")
        assert abs(g[0] - 6.0) < 1e-9
        assert grad_check(lambda p: float(p["t"][0] ** 2), ps, {"t": np.array([6.0])}) < 1e-9

    def test_constant(self):
        ps = ParamStore()
        ps.add("t", np.arange(4.0))
        np.testing.assert_array_equal(numeric_grad(lambda p: 1.5, ps, "t"), np.zeros(4))

    def test_restores_params(self):
        ps = ParamStore()
        ps.add("W", np.arange(6.0).reshape(2, 3))
        before = ps["W"].copy()
        grad_check(lambda p: float(np.sum(p["W"] ** 3)), ps, {"W": 3 * before**2})
        np.testing.assert_array_equal(ps["W"], before)

    def test_report_and_wrong_grad(self):
        ps = ParamStore()
        ps.add("a", [1.0, 2.0])
        ps.add("b", [0.5])
        f = lambda p: float(np.sum(p["a"] ** 2) + p["b"][0])
        report = {}
        err = grad_check(f, ps, {"a": np.array([2.0, 4.0]), "b": np.array([-1.0])}, report=report)
        assert report["a"] < 1e-9
        assert report["b"] == pytest.approx(1.0)
        assert err == report["b"]

    def test_nonfinite(self):
        ps = ParamStore()
        ps.add("a", [0.0])
        with pytest.raises(NonFiniteFunction):
            grad_check(lambda p: float("nan"), ps, {"a": np.zeros(1)})

    def test_eps_positive(self):
        ps = ParamStore()
        ps.add("a", [0.0])
        with pytest.raises(ValueError):
            grad_check(lambda p: 0.0, ps, {"a": np.zeros(1)}, eps=0)


def reference_adam(theta, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
    return theta


class TestAdam:
    def test_zero_grad_identity(self):
        ps = ParamStore()
        ps.add("W", np.ones((2, 2)))
        ps.m["W"][...] = 0.3
        ps.v["W"][...] = 0.2
        adam_step(ps)
        np.testing.assert_array_equal(ps["W"], np.ones((2, 2)))
        np.testing.assert_array_equal(ps.m["W"], 0.3)
        np.testing.assert_array_equal(ps.v["W"], 0.2)
        assert ps.t == 1

    def test_first_step_moves_lr(self):
        ps = ParamStore()
        ps.add("x", [0.0])
        ps.grads["x"][0] = 1.0
        adam_step(ps, lr=0.01)
        assert ps["x"][0] == pytest.approx(-0.01, abs=1e-9)

    def test_matches_reference(self):
        ps = ParamStore()
        ps.add("x", [1.0])
        for _ in range(5):
            ps.zero_grads()
            ps.grads["x"][0] = 2 * ps["x"][0]
            adam_step(ps, lr=0.1)
        assert abs(ps["x"][0] - reference_adam(1.0, 5, lr=0.1)) < 1e-12

    def test_version_bumps(self):
        ps = ParamStore()
        ps.add("x", [1.0])
        v = ps.version
        adam_step(ps)
        assert ps.version > v


class TestParamStore:
    def _store(self):
        rng = np.random.default_rng(0)
        ps = ParamStore()
        ps.add("E", rng.normal(size=(4, 3)))
        ps.add("b", rng.normal(size=5))
        ps.add("s", [0.25])
        return ps

    def test_grad_slots(self):
        ps = self._store()
        for k in ps.names():
            assert ps.grads[k].shape == ps[k].shape
        ps.grads["E"] += 3.0
        ps.zero_grads()
        assert all(not g.any() for g in ps.grads.values())

    def test_set_checks_shape(self):
        ps = self._store()
        with pytest.raises(DimMismatch):
            ps.set("E", np.zeros((3, 4)))
        with pytest.raises(KeyError):
            ps.add("E", np.zeros((4, 3)))

    def test_binary_round_trip(self, tmp_path):
        ps = self._store()
        ps.save(tmp_path / "p.bin")
        back = ParamStore.load(tmp_path / "p.bin", ps.shapes())
        assert back.names() == ps.names()
        for k in ps.names():
            np.testing.assert_array_equal(back[k], ps[k])
            assert back[k].shape == ps[k].shape

    def test_binary_layout(self):
        ps = ParamStore()
        ps.add("ab", [[1.0, 2.0]])
        raw = ps.to_bytes()
        want = b"PRC1" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"ab"
        want += (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        want += np.array([1.0, 2.0], dtype="<f8").tobytes()
        assert raw == want

    def test_vectors_stored_as_columns(self):
        ps = ParamStore()
        ps.add("v", [1.0, 2.0, 3.0])
        assert ParamStore.from_bytes(ps.to_bytes())["v"].shape == (3, 1)

    def test_corrupt(self):
        raw = self._store().to_bytes()
        with pytest.raises(ValueError):
            ParamStore.from_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ValueError):
            ParamStore.from_bytes(raw + b"\x00")
        with pytest.raises(DimMismatch):
            ParamStore.from_bytes(raw, {"E": (4, 4), "b": (5,), "s": (1,)})


class TestStreams:
    def test_independent_and_reproducible(self):
        a = stream(7, "init").random(5)
        np.testing.assert_array_equal(a, stream(7, "init").random(5))
        assert not np.array_equal(a, stream(7, "eval").random(5))
        assert not np.array_equal(a, stream(8, "init").random(5))
