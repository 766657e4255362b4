import json
import math

import numpy as np
import pytest

from kanevo.data import load_csv
from kanevo.network import (
    ContractError,
    KanSpec,
    ModelFormatError,
    TrainingError,
    UnsupportedVersionError,
    forward,
    gradients,
    init_model,
    input_domains,
    load_model,
    model_from_dict,
    model_to_dict,
    param_count,
    save_model,
    spec_param_count,
    to_dot,
)
from kanevo.spline import SplineGrid, edge_activation
from kanevo.symbolic import apply as sym_apply


def dense_spec(sizes, grid, rng=None, p=1.0):
    masks = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        m = np.ones((b, a), np.uint8) if rng is None else (rng.random((b, a)) < p).astype(np.uint8)
        masks.append(m)
    return KanSpec(tuple(sizes), tuple(masks), grid)


def naive_forward(model, X):
    """Straight per-edge, per-sample evaluation of the layer sums."""
    out = []
    for x in np.asarray(X, dtype=float):
        v = x
        for layer in model.layers:
            nxt = np.zeros(layer.n_out)
            for e in range(layer.n_edges):
                i, j = layer.src[e], layer.dst[e]
                if layer.sym_name[e] is not None:
                    nxt[j] += sym_apply(layer.sym_name[e], layer.sym_params[e], v[i])
                    continue
                g = SplineGrid(layer.lo[i], layer.hi[i], model.grid)
                nxt[j] += edge_activation(g, layer.coeffs[e], layer.w_b[e], layer.w_s[e], v[i])
            v = nxt
        out.append(v)
    return np.array(out)


def perturb(model, rng):
    for layer in model.layers:
        layer.w_b[:] = rng.normal(size=layer.n_edges)
        layer.w_s[:] = rng.normal(size=layer.n_edges)
    return model


class TestKanSpec:
    def test_shape_checks(self):
        with pytest.raises(ContractError):
            KanSpec((2, 3), (np.ones((2, 2), np.uint8),), 3)
        with pytest.raises(ContractError):
            KanSpec((2, 3), (np.ones((3, 2), np.uint8),), 0)

    def test_dict_round_trip(self):
        s = dense_spec((3, 4, 2), 7, np.random.default_rng(0), 0.5)
        assert KanSpec.from_dict(s.to_dict()) == s
        assert hash(KanSpec.from_dict(s.to_dict())) == hash(s)


class TestInit:
    def test_iris_domain(self):
        ds = load_csv("data/iris.csv", "species")
        lo, hi = input_domains(ds.X)
        assert lo[0] == pytest.approx(4.264, abs=1e-12)
        assert hi[0] == pytest.approx(7.936, abs=1e-12)

    def test_constant_column(self):
        lo, hi = input_domains(np.array([[5.0, 1.0], [5.0, 2.0]]))
        assert (lo[0], hi[0]) == (4.0, 6.0)

    def test_empty_data(self):
        with pytest.raises(ContractError):
            init_model(dense_spec((2, 1), 3), np.zeros((0, 2)))

    def test_seed_determinism(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        a = init_model(dense_spec((3, 4, 2), 5), X, seed=4).get_flat()
        b = init_model(dense_spec((3, 4, 2), 5), X, seed=4).get_flat()
        assert a.tobytes() == b.tobytes()

    def test_init_values(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        m = init_model(dense_spec((3, 4, 2), 5), X, seed=1)
        assert np.all(m.layers[0].w_b == 1.0) and np.all(m.layers[1].w_s == 1.0)
        assert np.all(m.layers[1].lo == -2.0) and np.all(m.layers[1].hi == 2.0)


class TestForward:
    def test_empty_layer_gives_zero(self):
        spec = KanSpec((2, 3, 1), (np.zeros((3, 2), np.uint8), np.ones((1, 3), np.uint8)), 4)
        m = init_model(spec, np.random.default_rng(0).normal(size=(5, 2)))
        m.layers[1].coeffs[:] = 0.0
        m.layers[1].w_b[:] = 0.0
        assert np.all(forward(m, np.random.default_rng(1).normal(size=(6, 2))) == 0.0)

    def test_constant_chain(self):
        spec = dense_spec((1, 1, 1), 5)
        m = init_model(spec, np.linspace(-1, 1, 9)[:, None])
        for layer in m.layers:
            layer.w_b[:] = 0.0
            layer.w_s[:] = 1.0
            layer.coeffs[:] = 0.7
        out = forward(m, np.linspace(-3, 3, 13)[:, None])
        np.testing.assert_allclose(out, 0.7, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        spec = dense_spec((2, 3, 1), int(rng.integers(1, 12)), rng, 0.8)
        X = rng.uniform(-1, 1, (10, 2))
        m = perturb(init_model(spec, X, seed), rng)
        np.testing.assert_allclose(forward(m, X), naive_forward(m, X), rtol=0, atol=1e-10)

    def test_matches_naive_with_symbolic_edges(self):
        rng = np.random.default_rng(3)
        spec = dense_spec((3, 2, 2), 6)
        X = rng.uniform(-1, 1, (10, 3))
        m = perturb(init_model(spec, X, 0), rng)
        m.layers[0].set_symbolic(1, "sin", (1.5, 0.2, 0.8, -0.1))
        m.layers[1].set_symbolic(0, "x^2", (0.5, 0.1, 1.2, 0.3))
        np.testing.assert_allclose(forward(m, X), naive_forward(m, X), atol=1e-10)

    def test_column_mismatch(self):
        m = init_model(dense_spec((2, 1), 3), np.zeros((3, 2)) + np.arange(3)[:, None])
        with pytest.raises(ContractError):
            forward(m, np.zeros((4, 3)))

    def test_trace_nonnegative(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        m = init_model(dense_spec((3, 4, 2), 5), X)
        _, trace = forward(m, X, trace=True)
        assert len(trace.edge_magnitude) == 2
        assert all(np.all(t >= 0) for t in trace.edge_magnitude)


def fd_check(model, X, y, kind, h=1e-4, tol=1e-4):
    theta = model.get_flat().copy()
    g = gradients(model, X, y, kind).flat(model)
    num = np.empty_like(theta)
    for k in range(theta.size):
        t = theta.copy()
        t[k] += h
        model.set_flat(t)
        fp = gradients(model, X, y, kind).loss
        t[k] -= 2 * h
        model.set_flat(t)
        fm = gradients(model, X, y, kind).loss
        num[k] = (fp - fm) / (2 * h)
    model.set_flat(theta)
    scale = np.maximum(np.abs(num), 1e-3 * max(1.0, np.max(np.abs(num))))
    rel = np.abs(g - num) / scale
    return float(np.max(rel))


class TestGradients:
    def test_fd_3x4x2(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(-1, 1, (8, 3))
        m = perturb(init_model(dense_spec((3, 4, 2), 5), X, 1), rng)
        y = rng.integers(0, 2, 8)
        assert fd_check(m, X, y, "cross_entropy") <= 1e-4

    @pytest.mark.parametrize("k", range(20))
    def test_fd_random_models(self, k):
        rng = np.random.default_rng(1000 + k)
        G = (1, 8, 64)[k % 3]
        sizes = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        spec = dense_spec(sizes, G)
        X = rng.uniform(-1, 1, (8, sizes[0]))
        m = perturb(init_model(spec, X, k), rng)
        if k % 2:
            y = rng.integers(0, sizes[-1], 8)
            kind = "cross_entropy"
        else:
            y = rng.normal(size=8) if sizes[-1] == 1 else rng.normal(size=(8, sizes[-1]))
            kind = "mse"
        assert fd_check(m, X, y, kind) <= 1e-4

    def test_fd_symbolic_params(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, (8, 2))
        m = perturb(init_model(dense_spec((2, 2, 1), 4), X, 2), rng)
        m.layers[0].set_symbolic(0, "tanh", (1.1, 0.2, 0.9, 0.1))
        m.layers[1].set_symbolic(1, "x^3", (0.7, -0.1, 1.3, 0.2))
        assert fd_check(m, X, rng.normal(size=8), "mse") <= 1e-4

    def test_duplicate_sample(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, (3, 2))
        y = np.array([0, 1, 0])
        m = perturb(init_model(dense_spec((2, 2), 4), X, 0), rng)
        g1 = gradients(m, X, y).flat(m)
        X2 = np.vstack([X, X[:1]])
        g2 = gradients(m, X2, np.append(y, y[0])).flat(m)
        gs = [gradients(m, X[k : k + 1], y[k : k + 1]).flat(m) for k in range(3)]
        np.testing.assert_allclose(g1, sum(gs) / 3, atol=1e-12)
        np.testing.assert_allclose(g2, (sum(gs) + gs[0]) / 4, atol=1e-12)

    def test_zero_model_mse_stationary(self):
        X = np.random.default_rng(0).uniform(-1, 1, (6, 2))
        m = init_model(dense_spec((2, 1), 4), X)
        for layer in m.layers:
            layer.coeffs[:] = 0.0
            layer.w_b[:] = 0.0
        g = gradients(m, X, np.zeros(6), "mse")
        assert g.loss == 0.0
        assert np.all(g.flat(m) == 0.0)

    def test_non_finite_raises(self):
        X = np.random.default_rng(0).uniform(-1, 1, (4, 2))
        m = init_model(dense_spec((2, 1), 4), X)
        m.layers[0].w_b[:] = np.inf
        with pytest.raises(TrainingError):
            gradients(m, X, np.zeros(4), "mse")


class TestParamCount:
    def test_single_edge(self):
        spec = KanSpec((1, 1), (np.ones((1, 1), np.uint8),), 5)
        assert spec_param_count(spec) == 10

    def test_fully_connected(self):
        spec = dense_spec((4, 5, 3), 5)
        assert spec_param_count(spec) == 350
        assert param_count(init_model(spec, np.random.default_rng(0).normal(size=(5, 4)))) == 350

    def test_symbolic_edges_count_four(self):
        m = init_model(dense_spec((1, 1), 5), np.array([[0.0], [1.0]]))
        m.layers[0].set_symbolic(0, "sin", (1, 0, 1, 0))
        assert param_count(m) == 4


class TestPersistence:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(12, 3))
        m = perturb(init_model(dense_spec((3, 4, 2), 9, rng, 0.7), X, 3), rng)
        m.layers[0].set_symbolic(0, "exp", (0.3, 0.1, 2.0, -1.0))
        save_model(m, tmp_path / "m.json")
        m2 = load_model(tmp_path / "m.json")
        assert forward(m, X).tobytes() == forward(m2, X).tobytes()
        assert m2.layers[0].sym_name[0] == "exp"

    def test_truncated(self, tmp_path):
        m = init_model(dense_spec((2, 1), 3), np.eye(2))
        save_model(m, tmp_path / "m.json")
        raw = (tmp_path / "m.json").read_bytes()
        (tmp_path / "t.json").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(ModelFormatError) as info:
            load_model(tmp_path / "t.json")
        assert info.value.offset is not None

    def test_version_mismatch(self):
        doc = model_to_dict(init_model(dense_spec((2, 1), 3), np.eye(2)))
        doc["format_version"] = 99
        with pytest.raises(UnsupportedVersionError):
            model_from_dict(doc)

    def test_missing_edge(self):
        doc = model_to_dict(init_model(dense_spec((2, 1), 3), np.eye(2)))
        doc["edges"].pop()
        with pytest.raises(ModelFormatError):
            model_from_dict(json.loads(json.dumps(doc)))

    def test_dot(self):
        m = init_model(dense_spec((2, 1), 3), np.eye(2))
        dot = to_dot(m, ["a", "b"])
        assert dot.startswith("digraph") and dot.count("->") == 2
