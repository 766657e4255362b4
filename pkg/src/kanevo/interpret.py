"""Feature attribution, symbolic edge fitting and closed-form formula extraction."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from . import symbolic
from .network import ContractError, KanModel, _layer_forward, forward, layer_inputs

R2_THRESHOLD = 0.9
HOLDOUT_FRACTION = 0.2
MIN_SAMPLES = 5
A_GRID = np.concatenate([-(2.0 ** np.linspace(-2, 2, 21))[::-1], 2.0 ** np.linspace(-2, 2, 21)])
B_STEPS = 21


class SymbolicNotReadyError(ContractError):
    """Raised when a formula is requested while spline edges remain."""

    def __init__(self, edges: list[tuple[int, int, int]]):
        self.edges = list(edges)
        listed = ", ".join(f"({l},{j},{i})" for l, j, i in self.edges)
        super().__init__(f"{len(self.edges)} edge(s) are still splines: {listed}")


# ---------------------------------------------------------------------------
# feature attribution
# ---------------------------------------------------------------------------


def feature_scores(model: KanModel, inputs) -> np.ndarray:
    """Share of output credit reaching each input, by mean edge magnitude.

    Every output starts with ``1/m``.  A node passes its score to its incoming
    edges in proportion to their mean absolute activation (uniformly if all
    are zero); a node's score is the sum over its outgoing edges.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("feature_scores needs a non-empty batch")
    _, trace = forward(model, X, trace=True)
    node = np.full(model.spec.n_outputs, 1.0 / model.spec.n_outputs)
    for l in range(model.spec.depth - 1, -1, -1):
        layer = model.layers[l]
        mag = trace.edge_magnitude[l]
        below = np.zeros(layer.n_in)
        for j in range(layer.n_out):
            into = np.nonzero(layer.dst == j)[0]
            if into.size == 0:
                continue
            w = mag[into]
            total = w.sum()
            share = w / total if total > 0 else np.full(into.size, 1.0 / into.size)
            np.add.at(below, layer.src[into], node[j] * share)
        node = below
    s = node.sum()
    return node / s if s > 0 else node


# ---------------------------------------------------------------------------
# symbolic fitting
# ---------------------------------------------------------------------------


@dataclass
class EdgeFit:
    l: int
    j: int
    i: int
    primitive: str | None
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    e: float = 0.0
    r2: float = -math.inf
    applied: bool = False

    @property
    def edge(self) -> tuple[int, int, int]:
        return (self.l, self.j, self.i)

    @property
    def params(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.e)


def _r2(y, yhat) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def _solve_ce(f, y):
    # least-squares c, e for y ~ c f + e
    with np.errstate(all="ignore"):
        fm = f.mean()
        var = np.mean((f - fm) ** 2)
        if not (np.isfinite(var) and var > 1e-300):
            return None
        c = np.mean((f - fm) * (y - y.mean())) / var
    return c, y.mean() - c * fm


def _fit_primitive(name: str, x_fit, y_fit, x_all):
    """Best ``(a, b, c, e)`` for one primitive, or None if it cannot be used."""
    prim = symbolic.get(name)
    lo, hi = float(x_all.min()), float(x_all.max())
    ts = np.linspace(lo, hi, B_STEPS)
    A = np.repeat(A_GRID, B_STEPS)
    Bs = -A * np.tile(ts, A_GRID.size)
    Z = A[:, None] * x_fit[None, :] + Bs[:, None]
    ok_all = np.all(prim.domain(A[:, None] * x_all[None, :] + Bs[:, None]), axis=1)
    with np.errstate(all="ignore"):
        F = prim.fn(Z)
    ok_all &= np.all(np.isfinite(F), axis=1)
    if not ok_all.any() or x_fit.size < MIN_SAMPLES:
        return None
    F = F[ok_all]
    fm = F.mean(axis=1, keepdims=True)
    Fc = F - fm
    yc = y_fit - y_fit.mean()
    var = np.sum(Fc * Fc, axis=1)
    cov = Fc @ yc
    with np.errstate(all="ignore"):
        sse = np.where(var > 1e-300, np.sum(yc * yc) - cov * cov / var, np.inf)
    k = int(np.argmin(sse))
    if not np.isfinite(sse[k]):
        return None
    a0, b0 = float(A[ok_all][k]), float(Bs[ok_all][k])

    def resid(ab):
        z = ab[0] * x_all + ab[1]
        if not np.all(prim.domain(z)):
            return np.full(x_fit.size, 1e6)
        with np.errstate(all="ignore"):
            f = prim.fn(ab[0] * x_fit + ab[1])
        ce = _solve_ce(f, y_fit) if np.all(np.isfinite(f)) else None
        if ce is None:
            return np.full(x_fit.size, 1e6)
        return ce[0] * f + ce[1] - y_fit

    r0 = resid([a0, b0])
    try:
        sol = least_squares(resid, [a0, b0], method="lm", max_nfev=200)
        a, b = (sol.x if np.sum(sol.fun**2) < np.sum(r0**2) else (a0, b0))
    except (ValueError, np.linalg.LinAlgError):
        a, b = a0, b0
    f = prim.fn(a * x_fit + b)
    c, e = _solve_ce(f, y_fit)
    return float(a), float(b), float(c), float(e)


def score_primitives(x, y, library=symbolic.LIBRARY_ORDER, seed: int = 0) -> dict:
    """Held-out r2 and fitted ``(a, b, c, e)`` of every usable primitive.

    Parameters are fitted on 80% of the pairs and scored on the other 20%.
    Primitives that cannot be fitted (domain, too few samples) are absent.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    perm = np.random.default_rng(seed).permutation(x.size)
    n_hold = int(round(HOLDOUT_FRACTION * x.size))
    if x.size - n_hold < MIN_SAMPLES or n_hold < 1:
        fit_idx = hold_idx = perm
    else:
        hold_idx, fit_idx = perm[:n_hold], perm[n_hold:]
    scores = {}
    for name in library:
        if name == "constant":
            params = (0.0, 0.0, 0.0, float(y[fit_idx].mean()))
        else:
            params = _fit_primitive(name, x[fit_idx], y[fit_idx], x)
            if params is None:
                continue
        with np.errstate(all="ignore"):
            pred = symbolic.apply(name, params, x[hold_idx])
        scores[name] = (params, _r2(y[hold_idx], pred) if np.all(np.isfinite(pred)) else -math.inf)
    return scores


def fit_edge_samples(x, y, library=symbolic.LIBRARY_ORDER, seed: int = 0):
    """Choose the primitive with the best held-out r2 for samples ``y = phi(x)``.

    Returns ``(name, params, r2)``; ``name`` is None if nothing could be fitted.
    A constant edge output is "constant" with r2 = 1 by convention.
    """
    y = np.asarray(y, dtype=float)
    scale = max(1.0, float(np.max(np.abs(y)))) if y.size else 1.0
    if y.size and float(np.ptp(y)) <= 1e-12 * scale and "constant" in library:
        return "constant", (0.0, 0.0, 0.0, float(y.mean())), 1.0
    best = (None, (0.0, 0.0, 0.0, 0.0), -math.inf)
    for name, (params, r2) in score_primitives(x, y, library, seed).items():
        if r2 > best[2] + 1e-12:  # ties keep the earlier primitive
            best = (name, params, r2)
    return best


def _edge_outputs(model: KanModel, l: int, acts: np.ndarray) -> np.ndarray:
    _, cache = _layer_forward(model.layers[l], acts, model.grid)
    return cache[6]


def auto_symbolic(
    model: KanModel,
    inputs,
    library=symbolic.LIBRARY_ORDER,
    threshold: float = R2_THRESHOLD,
    apply: bool = True,
    seed: int = 0,
) -> list[EdgeFit]:
    """Fit every spline edge to a primitive, layer by layer.

    Edges reaching ``threshold`` are switched to symbolic mode when ``apply``
    is set; the others keep their spline and come back with ``applied=False``.
    Later layers are fitted on activations of the already-converted earlier
    layers.  Edges that were symbolic beforehand are left untouched.
    """
    X = np.asarray(inputs, dtype=float)
    fits = []
    acts = X
    for l, layer in enumerate(model.layers):
        phi = _edge_outputs(model, l, acts)
        for e in layer.spline_edges():
            x = acts[:, layer.src[e]]
            name, params, r2 = fit_edge_samples(x, phi[:, e], library, seed)
            fit = EdgeFit(l, int(layer.dst[e]), int(layer.src[e]), name, *params, r2=r2)
            if apply and name is not None and r2 >= threshold:
                fit.applied = True
            fits.append(fit)
        if apply:
            for fit in fits:
                if fit.l == l and fit.applied:
                    layer.set_symbolic(layer.edge_index(fit.j, fit.i), fit.primitive, fit.params)
        acts, _ = _layer_forward(layer, acts, model.grid)
    return fits


def fix_edge(model: KanModel, edge: tuple[int, int, int], primitive: str, inputs=None) -> KanModel:
    """Switch edge ``(l, j, i)`` to ``primitive`` in place.

    With ``inputs`` the affine parameters are fitted to the edge's current
    activation; otherwise they start at ``a = c = 1, b = e = 0``.  They stay
    trainable either way.
    """
    l, j, i = (int(v) for v in edge)
    if primitive not in symbolic.LIBRARY:
        raise ContractError(f"unknown primitive {primitive!r}")
    if not 0 <= l < model.spec.depth:
        raise ContractError(f"layer {l} does not exist (depth {model.spec.depth})")
    layer = model.layers[l]
    e = layer.edge_index(j, i)
    params = (1.0, 0.0, 1.0, 0.0)
    if inputs is not None:
        acts = layer_inputs(model, inputs)[l]
        phi = _edge_outputs(model, l, acts)[:, e]
        x = acts[:, i]
        if primitive == "constant":
            params = (0.0, 0.0, 0.0, float(phi.mean()))
        else:
            got = _fit_primitive(primitive, x, phi, x)
            if got is not None:
                params = got
    layer.set_symbolic(e, primitive, params)
    return model


# ---------------------------------------------------------------------------
# expression trees
# ---------------------------------------------------------------------------


@dataclass
class Expr:
    """``op`` is "var", "const", "add" or a primitive name."""

    op: str
    args: list["Expr"] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.op == "var":
            return X[:, self.params["index"]].copy()
        if self.op == "const":
            return np.full(X.shape[0], float(self.params["value"]))
        if self.op == "add":
            out = np.zeros(X.shape[0])
            for a in self.args:
                out = out + a.evaluate(X)
            return out
        p = self.params
        return symbolic.apply(self.op, (p["a"], p["b"], p["c"], p["e"]), self.args[0].evaluate(X))

    def to_dict(self) -> dict:
        return {"op": self.op, "args": [a.to_dict() for a in self.args], "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Expr":
        return cls(d["op"], [cls.from_dict(a) for a in d.get("args", [])], dict(d.get("params", {})))

    def primitives(self) -> set[str]:
        found = set() if self.op in ("var", "const", "add") else {self.op}
        for a in self.args:
            found |= a.primitives()
        return found

    def variables(self) -> set[int]:
        found = {self.params["index"]} if self.op == "var" else set()
        for a in self.args:
            found |= a.variables()
        return found

    def depth_of(self, name: str) -> int:
        """Longest chain of ``name`` applications nested in this tree."""
        below = max((a.depth_of(name) for a in self.args), default=0)
        return below + (1 if self.op == name else 0)

    def contains_under(self, outer: str, inner: str) -> bool:
        """True if some ``inner`` node sits anywhere below an ``outer`` node."""
        if self.op == outer and any(inner in a.primitives() for a in self.args):
            return True
        return any(a.contains_under(outer, inner) for a in self.args)

    def render(self, names=None, digits: int = 2) -> str:
        return _render(self, names, digits)


def _const(v: float) -> Expr:
    return Expr("const", [], {"value": float(v)})


def _add(terms: list[Expr]) -> Expr:
    flat = []
    for t in terms:
        flat.extend(t.args if t.op == "add" else [t])
    const = sum(t.params["value"] for t in flat if t.op == "const")
    rest = [t for t in flat if t.op != "const"]
    if not rest:
        return _const(const)
    if const != 0.0:
        rest.append(_const(const))
    return rest[0] if len(rest) == 1 else Expr("add", rest)


def _edge_expr(name: str, params, arg: Expr) -> Expr:
    a, b, c, e = (float(v) for v in params)
    if name == "constant":
        return _const(e)
    if arg.op == "const":
        return _const(float(symbolic.apply(name, (a, b, c, e), np.array([arg.params["value"]]))[0]))
    if name == "x":
        # c (a z + b) + e  ->  (c a) z + (c b + e)
        return _add([Expr("x", [arg], {"a": c * a, "b": 0.0, "c": 1.0, "e": 0.0}), _const(c * b + e)])
    # the additive offset joins the node's constant term
    return _add([Expr(name, [arg], {"a": a, "b": b, "c": c, "e": 0.0}), _const(e)])


def _num(v: float, digits: int) -> str:
    s = f"{v:.{digits}f}"
    return "0" if float(s) == 0.0 else s


def _render(x: Expr, names, digits) -> str:
    if x.op == "var":
        k = x.params["index"]
        return names[k] if names is not None else f"x_{k + 1}"
    if x.op == "const":
        return _num(x.params["value"], digits)
    if x.op == "add":
        parts = [_render(a, names, digits) for a in x.args]
        out = parts[0]
        for p in parts[1:]:
            out += f" - {p[1:]}" if p.startswith("-") else f" + {p}"
        return out
    p = x.params
    inner = _render(x.args[0], names, digits)
    if x.args[0].op == "add":
        inner = f"({inner})"
    arg = f"{_num(p['a'], digits)}*{inner}"
    if p["b"] != 0.0 and _num(p["b"], digits) != "0":
        b = _num(p["b"], digits)
        arg += f" - {b[1:]}" if b.startswith("-") else f" + {b}"
    body = symbolic.get(x.op).template.format(arg)
    out = f"{_num(p['c'], digits)}*{body}" if x.op != "x" else f"{_num(p['a'] * p['c'], digits)}*{inner}"
    if p["e"] != 0.0 and _num(p["e"], digits) != "0":
        e = _num(p["e"], digits)
        out += f" - {e[1:]}" if e.startswith("-") else f" + {e}"
    return out


@dataclass
class Formula:
    output: int
    tree: Expr
    input_names: list[str] | None = None

    @property
    def text(self) -> str:
        return self.tree.render(self.input_names)

    def evaluate(self, X) -> np.ndarray:
        return self.tree.evaluate(X)

    def to_dict(self) -> dict:
        return {"output": self.output, "text": self.text, "tree": self.tree.to_dict()}


def non_symbolic_edges(model: KanModel) -> list[tuple[int, int, int]]:
    return [
        (l, int(layer.dst[e]), int(layer.src[e]))
        for l, layer in enumerate(model.layers)
        for e in layer.spline_edges()
    ]


def extract_formula(model: KanModel, input_names=None) -> list[Formula]:
    """One expression tree per output; requires every active edge to be symbolic."""
    missing = non_symbolic_edges(model)
    if missing:
        raise SymbolicNotReadyError(missing)
    nodes = [Expr("var", [], {"index": k}) for k in range(model.spec.n_inputs)]
    for layer in model.layers:
        terms: list[list[Expr]] = [[] for _ in range(layer.n_out)]
        for e in range(layer.n_edges):
            terms[layer.dst[e]].append(_edge_expr(layer.sym_name[e], layer.sym_params[e], nodes[layer.src[e]]))
        nodes = [_add(t) for t in terms]
    names = list(input_names) if input_names is not None else None
    return [Formula(k, tree, names) for k, tree in enumerate(nodes)]


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_formulas_txt(formulas: list[Formula], path, output_names=None) -> None:
    lines = []
    for f in formulas:
        label = output_names[f.output] if output_names is not None else f"z_{f.output + 1}"
        lines.append(f"{label} = {f.text}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_formulas_json(formulas: list[Formula], path, fits: list[EdgeFit] | None = None) -> None:
    doc = {"formulas": [f.to_dict() for f in formulas]}
    if fits is not None:
        doc["edges"] = [
            {"edge": list(fit.edge), "primitive": fit.primitive, "params": dict(zip("abce", fit.params)),
             "r2": fit.r2 if math.isfinite(fit.r2) else None, "applied": fit.applied}
            for fit in fits
        ]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_formulas_json(path) -> list[Formula]:
    doc = json.loads(Path(path).read_text())
    return [Formula(d["output"], Expr.from_dict(d["tree"])) for d in doc["formulas"]]


def write_attribution_csv(scores, feature_names, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_name", "score"])
        for name, s in zip(feature_names, scores):
            w.writerow([name, repr(float(s))])
