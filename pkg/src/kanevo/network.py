"""Sparse Kolmogorov-Arnold networks.

Nodes sum their incoming edge activations; every active edge carries its own
cubic spline (``G + 3`` coefficients) plus the scalar weights ``w_b``/``w_s``.
Only edges whose mask bit is 1 get parameter slots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, symbolic
from .losses import loss_and_grad

DEGREE = kernels.DEGREE
FORMAT_VERSION = 1
HIDDEN_DOMAIN = (-2.0, 2.0)
INIT_COEFF_STD = 0.1
DOMAIN_MARGIN = 0.01


class ContractError(ValueError):
    """Caller violated an operation's precondition."""


class ModelFormatError(ValueError):
    """Model file could not be parsed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class UnsupportedVersionError(ModelFormatError):
    pass


class TrainingError(FloatingPointError):
    """A forward or backward pass produced non-finite values."""


@dataclass(frozen=True)
class KanSpec:
    layer_sizes: tuple[int, ...]
    masks: tuple[np.ndarray, ...]
    grid: int
    valid: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        masks = tuple(np.asarray(m, dtype=np.uint8) for m in self.masks)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "masks", masks)
        if len(masks) < 1 or len(sizes) != len(masks) + 1:
            raise ContractError("need at least one layer and len(layer_sizes) == len(masks) + 1")
        for l, m in enumerate(masks):
            if m.shape != (sizes[l + 1], sizes[l]):
                raise ContractError(f"mask {l} has shape {m.shape}, expected {(sizes[l + 1], sizes[l])}")
            if np.any(m > 1):
                raise ContractError(f"mask {l} is not binary")
        if int(self.grid) < 1:
            raise ContractError("grid must be >= 1")
        object.__setattr__(self, "grid", int(self.grid))

    @property
    def depth(self) -> int:
        return len(self.masks)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def edges(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        """``(dst, src)`` of the active edges of layer ``l`` in row-major order."""
        dst, src = np.nonzero(self.masks[l])
        return dst.astype(np.int64), src.astype(np.int64)

    def n_edges(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "masks": [m.astype(int).tolist() for m in self.masks],
            "grid": self.grid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KanSpec":
        return cls(tuple(d["layer_sizes"]), tuple(np.array(m, dtype=np.uint8).reshape(
            d["layer_sizes"][l + 1], d["layer_sizes"][l]) for l, m in enumerate(d["masks"])), d["grid"])

    def __eq__(self, other):
        if not isinstance(other, KanSpec):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.grid == other.grid
            and all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks))
        )

    def __hash__(self):
        return hash((self.layer_sizes, self.grid, tuple(m.tobytes() for m in self.masks)))


@dataclass
class Layer:
    """Parameters of one layer, one row per active edge."""

    src: np.ndarray
    dst: np.ndarray
    n_in: int
    n_out: int
    lo: np.ndarray
    hi: np.ndarray
    coeffs: np.ndarray
    w_b: np.ndarray
    w_s: np.ndarray
    # symbolic edges: primitive name per edge (None = spline) and (a, b, c, e)
    sym_name: list = field(default_factory=list)
    sym_params: np.ndarray | None = None

    def __post_init__(self):
        E = len(self.src)
        if not self.sym_name:
            self.sym_name = [None] * E
        if self.sym_params is None:
            self.sym_params = np.zeros((E, 4))
        self._split = None

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def _edge_split(self):
        if self._split is None:
            sy = np.array([k for k, s in enumerate(self.sym_name) if s is not None], dtype=np.int64)
            sp = np.array([k for k, s in enumerate(self.sym_name) if s is None], dtype=np.int64)
            self._split = (sp, sy)
        return self._split

    def symbolic_edges(self) -> np.ndarray:
        return self._edge_split()[1]

    def spline_edges(self) -> np.ndarray:
        return self._edge_split()[0]

    def set_symbolic(self, e: int, name: str | None, params=(0.0, 0.0, 0.0, 0.0)) -> None:
        """Switch edge ``e`` to a symbolic primitive (or back to its spline with ``None``)."""
        if name is not None:
            symbolic.get(name)
        self.sym_name[e] = name
        self.sym_params[e] = params
        self._split = None

    def edge_index(self, j: int, i: int) -> int:
        hits = np.nonzero((self.dst == j) & (self.src == i))[0]
        if hits.size == 0:
            raise ContractError(f"no active edge ({j}, {i})")
        return int(hits[0])

    def copy(self) -> "Layer":
        return Layer(
            self.src.copy(), self.dst.copy(), self.n_in, self.n_out, self.lo.copy(), self.hi.copy(),
            self.coeffs.copy(), self.w_b.copy(), self.w_s.copy(), list(self.sym_name), self.sym_params.copy(),
        )


@dataclass
class KanModel:
    spec: KanSpec
    layers: list[Layer]

    @property
    def grid(self) -> int:
        return self.spec.grid

    def copy(self) -> "KanModel":
        return KanModel(self.spec, [layer.copy() for layer in self.layers])

    # -- flat parameter views used by the optimiser ------------------------

    def get_flat(self) -> np.ndarray:
        parts = []
        for layer in self.layers:
            sp = layer.spline_edges()
            sy = layer.symbolic_edges()
            parts += [layer.coeffs[sp].ravel(), layer.w_b[sp], layer.w_s[sp], layer.sym_params[sy].ravel()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        pos = 0
        K = self.spec.grid + DEGREE
        for layer in self.layers:
            sp = layer.spline_edges()
            sy = layer.symbolic_edges()
            n = sp.size
            layer.coeffs[sp] = theta[pos : pos + n * K].reshape(n, K)
            pos += n * K
            layer.w_b[sp] = theta[pos : pos + n]
            pos += n
            layer.w_s[sp] = theta[pos : pos + n]
            pos += n
            layer.sym_params[sy] = theta[pos : pos + 4 * sy.size].reshape(sy.size, 4)
            pos += 4 * sy.size
        if pos != theta.size:
            raise ContractError(f"flat parameter vector has {theta.size} entries, model needs {pos}")


@dataclass
class ActivationTrace:
    """Mean absolute edge output per layer, aligned with ``Layer.src``."""

    edge_magnitude: list[np.ndarray]


@dataclass
class Gradients:
    loss: float
    coeffs: list[np.ndarray]
    w_b: list[np.ndarray]
    w_s: list[np.ndarray]
    sym_params: list[np.ndarray]

    def flat(self, model: KanModel) -> np.ndarray:
        parts = []
        for l, layer in enumerate(model.layers):
            sp = layer.spline_edges()
            sy = layer.symbolic_edges()
            parts += [self.coeffs[l][sp].ravel(), self.w_b[l][sp], self.w_s[l][sp], self.sym_params[l][sy].ravel()]
        return np.concatenate(parts) if parts else np.zeros(0)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def input_domains(train_inputs) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(train_inputs, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("training inputs must be a non-empty 2-D matrix")
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    lo_d = lo - DOMAIN_MARGIN * span
    hi_d = hi + DOMAIN_MARGIN * span
    flat = span == 0
    lo_d[flat] = lo[flat] - 1.0
    hi_d[flat] = hi[flat] + 1.0
    return lo_d, hi_d


def init_model(spec: KanSpec, train_inputs, seed: int = 0) -> KanModel:
    """Fresh parameters: coeffs ~ N(0, 0.1), ``w_b = w_s = 1``.

    Input-layer spline domains come from the training data (min/max widened by
    1% of the range per side); hidden layers use ``[-2, 2]``.
    """
    X = np.asarray(train_inputs, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("training inputs must be a non-empty 2-D matrix")
    if X.shape[1] != spec.n_inputs:
        raise ContractError(f"spec expects {spec.n_inputs} inputs, data has {X.shape[1]} columns")
    rng = np.random.default_rng(seed)
    K = spec.grid + DEGREE
    lo0, hi0 = input_domains(X)
    layers = []
    for l in range(spec.depth):
        dst, src = spec.edges(l)
        n_in, n_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        if l == 0:
            lo, hi = lo0.copy(), hi0.copy()
        else:
            lo, hi = np.full(n_in, HIDDEN_DOMAIN[0]), np.full(n_in, HIDDEN_DOMAIN[1])
        E = dst.size
        layers.append(
            Layer(src, dst, n_in, n_out, lo, hi, rng.normal(0.0, INIT_COEFF_STD, size=(E, K)), np.ones(E), np.ones(E))
        )
    return KanModel(spec, layers)


def param_count(model: KanModel) -> int:
    """Trainable scalars: ``G + 3 + 2`` per spline edge, 4 per symbolic edge."""
    per_spline = model.grid + DEGREE + 2
    total = 0
    for layer in model.layers:
        n_sym = layer.symbolic_edges().size
        total += (layer.n_edges - n_sym) * per_spline + 4 * n_sym
    return total


def spec_param_count(spec: KanSpec) -> int:
    return spec.n_edges() * (spec.grid + DEGREE + 2)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _check_batch(model: KanModel, batch) -> np.ndarray:
    X = np.ascontiguousarray(batch, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.spec.n_inputs:
        raise ContractError(f"batch must have {model.spec.n_inputs} columns, got shape {X.shape}")
    return X


def _layer_forward(layer: Layer, X: np.ndarray, grid: int):
    span, V, dV = kernels.layer_basis_local(X, layer.lo, layer.hi, grid)
    phi, spl, base = kernels.phi_forward(X, span, V, layer.src, layer.coeffs, layer.w_b, layer.w_s)
    sym = layer.symbolic_edges()
    for e in sym:
        phi[:, e] = symbolic.apply(layer.sym_name[e], layer.sym_params[e], X[:, layer.src[e]])
    out = kernels.scatter(phi, layer.dst, layer.n_out)
    return out, (X, span, V, dV, spl, base, phi)


def forward(model: KanModel, batch, trace: bool = False):
    """Raw class scores, shape ``(samples, outputs)``.

    With ``trace=True`` also returns an :class:`ActivationTrace`.
    """
    X = _check_batch(model, batch)
    mags = []
    for layer in model.layers:
        X, cache = _layer_forward(layer, X, model.grid)
        if trace:
            mags.append(np.abs(cache[6]).mean(axis=0) if cache[6].shape[0] else np.zeros(layer.n_edges))
    if trace:
        return X, ActivationTrace(mags)
    return X


def layer_inputs(model: KanModel, batch) -> list[np.ndarray]:
    """Activations entering each layer (element 0 is the batch itself)."""
    X = _check_batch(model, batch)
    acts = [X]
    for layer in model.layers[:-1]:
        X, _ = _layer_forward(layer, X, model.grid)
        acts.append(X)
    return acts


def gradients(model: KanModel, batch, targets, loss_kind: str = "cross_entropy") -> Gradients:
    """Loss and exact reverse-mode gradient for every trainable parameter."""
    X = _check_batch(model, batch)
    caches = []
    for layer in model.layers:
        X, cache = _layer_forward(layer, X, model.grid)
        caches.append(cache)
    value, g = loss_and_grad(X, targets, loss_kind)
    if not np.isfinite(value) or not np.all(np.isfinite(g)):
        raise TrainingError("non-finite loss or score gradient")
    n = len(model.layers)
    gc, gwb, gws, gsym = [None] * n, [None] * n, [None] * n, [None] * n
    for l in range(n - 1, -1, -1):
        layer = model.layers[l]
        Xin, span, V, dV, spl, base, _ = caches[l]
        gphi = np.ascontiguousarray(g[:, layer.dst])
        sym = layer.symbolic_edges()
        gs = np.zeros((layer.n_edges, 4))
        gx_sym = None
        if sym.size:
            gx_sym = np.zeros((Xin.shape[0], layer.n_in))
            for e in sym:
                _, dp, dx = symbolic.apply_grad(layer.sym_name[e], layer.sym_params[e], Xin[:, layer.src[e]])
                gs[e] = dp @ gphi[:, e]
                gx_sym[:, layer.src[e]] += gphi[:, e] * dx
            gphi[:, sym] = 0.0
        c, wb, ws, gX = kernels.phi_backward(
            gphi, Xin, span, V, dV, layer.src, layer.coeffs, layer.w_b, layer.w_s, spl, base, layer.n_in
        )
        if gx_sym is not None:
            gX = gX + gx_sym
        gc[l], gwb[l], gws[l], gsym[l] = c, wb, ws, gs
        g = gX
    return Gradients(value, gc, gwb, gws, gsym)


def loss_value(model: KanModel, batch, targets, loss_kind: str = "cross_entropy") -> float:
    from .losses import loss

    return loss(forward(model, batch), targets, loss_kind)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def model_to_dict(model: KanModel) -> dict:
    edges = []
    for l, layer in enumerate(model.layers):
        for e in range(layer.n_edges):
            rec = {
                "l": l,
                "j": int(layer.dst[e]),
                "i": int(layer.src[e]),
                "coeffs": [float(v) for v in layer.coeffs[e]],
                "w_b": float(layer.w_b[e]),
                "w_s": float(layer.w_s[e]),
            }
            if layer.sym_name[e] is not None:
                a, b, c, d = (float(v) for v in layer.sym_params[e])
                rec["symbolic"] = {"primitive": layer.sym_name[e], "a": a, "b": b, "c": c, "e": d}
            edges.append(rec)
    return {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "domains": [[[float(a), float(b)] for a, b in zip(layer.lo, layer.hi)] for layer in model.layers],
        "edges": edges,
    }


def model_from_dict(doc: dict) -> KanModel:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError("missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported model format_version {doc['format_version']!r} (this build reads {FORMAT_VERSION})"
        )
    try:
        spec = KanSpec.from_dict(doc["spec"])
        domains = doc["domains"]
        K = spec.grid + DEGREE
        layers = []
        for l in range(spec.depth):
            dst, src = spec.edges(l)
            dom = np.array(domains[l], dtype=float).reshape(spec.layer_sizes[l], 2)
            E = dst.size
            layers.append(
                Layer(src, dst, spec.layer_sizes[l], spec.layer_sizes[l + 1], dom[:, 0].copy(), dom[:, 1].copy(),
                      np.zeros((E, K)), np.zeros(E), np.zeros(E))
            )
        seen = set()
        for rec in doc["edges"]:
            l, j, i = int(rec["l"]), int(rec["j"]), int(rec["i"])
            layer = layers[l]
            e = layer.edge_index(j, i)
            coeffs = np.array(rec["coeffs"], dtype=float)
            if coeffs.shape != (K,):
                raise ModelFormatError(f"edge ({l},{j},{i}) has {coeffs.size} coefficients, expected {K}")
            layer.coeffs[e] = coeffs
            layer.w_b[e] = float(rec["w_b"])
            layer.w_s[e] = float(rec["w_s"])
            if "symbolic" in rec:
                s = rec["symbolic"]
                layer.set_symbolic(e, s["primitive"], [s["a"], s["b"], s["c"], s["e"]])
            seen.add((l, e))
        expected = sum(layer.n_edges for layer in layers)
        if len(seen) != expected:
            raise ModelFormatError(f"file lists {len(seen)} distinct edges, spec has {expected}")
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    return KanModel(spec, layers)


def save_model(model: KanModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> KanModel:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ModelFormatError("model file is not UTF-8", exc.start) from exc
    except json.JSONDecodeError as exc:
        offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise ModelFormatError(f"invalid JSON: {exc.msg}", offset) from exc
    return model_from_dict(doc)


def to_dot(model: KanModel, input_names=None) -> str:
    """GraphViz rendering; only active edges appear."""
    sizes = model.spec.layer_sizes
    lines = ["digraph kan {", "  rankdir=BT;", "  node [shape=circle];"]
    for l, n in enumerate(sizes):
        lines.append(f"  subgraph layer_{l} {{ rank=same;")
        for i in range(n):
            label = input_names[i] if (l == 0 and input_names is not None) else f"{l}.{i}"
            lines.append(f'    n{l}_{i} [label="{label}"];')
        lines.append("  }")
    for l, layer in enumerate(model.layers):
        for e in range(layer.n_edges):
            tag = layer.sym_name[e] or "spline"
            lines.append(f'  n{l}_{layer.src[e]} -> n{l + 1}_{layer.dst[e]} [label="{tag}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
