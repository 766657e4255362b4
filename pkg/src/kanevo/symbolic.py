"""Library of univariate primitives used for symbolic edges.

A symbolic edge evaluates ``c * f(a * x + b) + e``.  Each primitive carries its
derivative so fixed edges can be fine-tuned with the same optimiser as spline
edges, plus a domain predicate used when fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    domain: Callable[[np.ndarray], np.ndarray]
    template: str  # ``{}`` is replaced by the rendered argument

    def __call__(self, z):
        return self.fn(z)


def _everywhere(z):
    return np.ones(np.shape(z), dtype=bool)


def _nonzero(z):
    return np.asarray(z) != 0.0


def _nonneg(z):
    return np.asarray(z) >= 0.0


def _positive(z):
    return np.asarray(z) > 0.0


def _gauss(z):
    return np.exp(-z * z)


def _safe(fn, ok):
    # evaluate only where the primitive is defined; NaN elsewhere, no warnings
    def wrapped(z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, np.nan)
        m = ok(z)
        out[m] = fn(z[m])
        return out if out.ndim else float(out)

    return wrapped


_PRIMITIVES = [
    Primitive("x", lambda z: np.asarray(z, dtype=float) * 1.0, lambda z: np.ones(np.shape(z)), _everywhere, "{}"),
    Primitive("x^2", lambda z: np.asarray(z) ** 2, lambda z: 2.0 * np.asarray(z), _everywhere, "({})^2"),
    Primitive("x^3", lambda z: np.asarray(z) ** 3, lambda z: 3.0 * np.asarray(z) ** 2, _everywhere, "({})^3"),
    Primitive("x^4", lambda z: np.asarray(z) ** 4, lambda z: 4.0 * np.asarray(z) ** 3, _everywhere, "({})^4"),
    Primitive(
        "1/x",
        _safe(lambda z: 1.0 / z, _nonzero),
        _safe(lambda z: -1.0 / (z * z), _nonzero),
        _nonzero,
        "1/({})",
    ),
    Primitive(
        "sqrt",
        _safe(np.sqrt, _nonneg),
        _safe(lambda z: 0.5 / np.sqrt(z), _positive),
        _nonneg,
        "sqrt({})",
    ),
    Primitive("exp", np.exp, np.exp, _everywhere, "exp({})"),
    Primitive("log", _safe(np.log, _positive), _safe(lambda z: 1.0 / z, _positive), _positive, "log({})"),
    Primitive("sin", np.sin, np.cos, _everywhere, "sin({})"),
    Primitive("tanh", np.tanh, lambda z: 1.0 - np.tanh(z) ** 2, _everywhere, "tanh({})"),
    Primitive("arctan", np.arctan, lambda z: 1.0 / (1.0 + np.asarray(z) ** 2), _everywhere, "arctan({})"),
    Primitive("abs", np.abs, np.sign, _everywhere, "abs({})"),
    Primitive("gaussian", _gauss, lambda z: -2.0 * np.asarray(z) * _gauss(np.asarray(z)), _everywhere, "exp(-({})^2)"),
    Primitive("constant", lambda z: np.zeros(np.shape(z)), lambda z: np.zeros(np.shape(z)), _everywhere, "0"),
]

LIBRARY: dict[str, Primitive] = {p.name: p for p in _PRIMITIVES}
LIBRARY_ORDER: tuple[str, ...] = tuple(p.name for p in _PRIMITIVES)
INDEX: dict[str, int] = {name: k for k, name in enumerate(LIBRARY_ORDER)}


def get(name: str) -> Primitive:
    try:
        return LIBRARY[name]
    except KeyError:
        raise KeyError(f"unknown primitive {name!r}; choose from {', '.join(LIBRARY_ORDER)}") from None


def apply(name: str, params, x):
    """Evaluate ``c * f(a * x + b) + e`` for ``params = (a, b, c, e)``."""
    a, b, c, e = params
    if name == "constant":
        return np.full(np.shape(x), float(e)) if np.ndim(x) else float(e)
    return c * get(name).fn(a * np.asarray(x, dtype=float) + b) + e


def apply_grad(name: str, params, x):
    """Return ``(value, d/dparams (4, N), d/dx)`` for one symbolic edge."""
    a, b, c, e = params
    x = np.asarray(x, dtype=float)
    if name == "constant":
        value = np.full(x.shape, float(e))
        dp = np.zeros((4,) + x.shape)
        dp[3] = 1.0
        return value, dp, np.zeros(x.shape)
    prim = get(name)
    z = a * x + b
    fz = prim.fn(z)
    dfz = prim.deriv(z)
    value = c * fz + e
    dp = np.empty((4,) + x.shape)
    dp[0] = c * dfz * x
    dp[1] = c * dfz
    dp[2] = fz
    dp[3] = 1.0
    return value, dp, c * dfz * a
