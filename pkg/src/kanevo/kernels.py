"""Hot numeric kernels for the KAN forward/backward pass.

Every kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version.  The public names at the bottom of this module are bound to one of
them at import time (see :mod:`kanevo._accel`).  Both are kept importable so
tests and the benchmark can compare them directly.

Layout conventions used throughout:

* ``X``      (N, n_in)       layer input activations
* ``lo, hi`` (n_in,)         spline domain per input node
* ``B, dB``  (N, n_in, G+3)  dense cubic basis values / x-derivatives
* ``span``   (N, n_in)       knot span of each point; with ``V, dV`` (N, n_in, 4)
                             the compact form: basis ``span + q`` equals ``V[..., q]``
* ``src``    (E,)            input node index of each active edge
* ``dst``    (E,)            output node index of each active edge
* ``coeffs`` (E, G+3)        spline coefficients of each active edge
* ``wb, ws`` (E,)            base / spline weights of each active edge
"""

from __future__ import annotations

import numpy as np

from ._accel import HAS_NUMBA, njit

DEGREE = 3


# --------------------------------------------------------------------------
# numba versions
# --------------------------------------------------------------------------


@njit(cache=True)
def _layer_basis_local_nb(X, lo, hi, G):
    """Compact basis: knot span ``s`` and the DEGREE + 1 nonzero values.

    Basis ``s + q`` has value ``V[..., q]``; every other basis is zero.
    """
    N, n = X.shape
    span = np.zeros((N, n), dtype=np.int64)
    V = np.zeros((N, n, DEGREE + 1))
    dV = np.zeros((N, n, DEGREE + 1))
    left = np.zeros(DEGREE + 1)
    right = np.zeros(DEGREE + 1)
    tri = np.zeros(DEGREE + 1)
    low = np.zeros(DEGREE)
    for c in range(n):
        a = lo[c]
        b = hi[c]
        h = (b - a) / G
        for r in range(N):
            x = X[r, c]
            inside = True
            if x < a:
                x = a
                inside = False
            elif x > b:
                x = b
                inside = False
            s = int(np.floor((x - a) / h))
            if s > G - 1:
                s = G - 1
            if s < 0:
                s = 0
            # floor() can round across a knot; keep t_s <= x < t_{s+1}
            if s > 0 and x < a + s * h:
                s -= 1
            elif s < G - 1 and x >= a + (s + 1) * h:
                s += 1
            span[r, c] = s
            # local Cox-de Boor triangle on knots t_j = a + (j - DEGREE) h
            tri[0] = 1.0
            for j in range(1, DEGREE + 1):
                left[j] = x - (a + (s + 1 - j) * h)
                right[j] = (a + (s + j) * h) - x
                saved = 0.0
                for q in range(j):
                    temp = tri[q] / (right[q + 1] + left[j - q])
                    tri[q] = saved + right[q + 1] * temp
                    saved = left[j - q] * temp
                tri[j] = saved
                if j == DEGREE - 1:
                    for q in range(DEGREE):
                        low[q] = tri[q]
            for q in range(DEGREE + 1):
                V[r, c, q] = tri[q]
            if inside:
                # dB_i = (B_{i,k-1} - B_{i+1,k-1}) / h on uniform knots
                prev = 0.0
                for q in range(DEGREE + 1):
                    nxt = low[q] if q < DEGREE else 0.0
                    dV[r, c, q] = (prev - nxt) / h
                    prev = nxt
    return span, V, dV


@njit(cache=True)
def _layer_basis_nb(X, lo, hi, G):
    span, V, dV = _layer_basis_local_nb(X, lo, hi, G)
    N, n = X.shape
    B = np.zeros((N, n, G + DEGREE))
    dB = np.zeros((N, n, G + DEGREE))
    for r in range(N):
        for c in range(n):
            s = span[r, c]
            for q in range(DEGREE + 1):
                B[r, c, s + q] = V[r, c, q]
                dB[r, c, s + q] = dV[r, c, q]
    return B, dB


@njit(cache=True)
def _silu_nb(x):
    return x / (1.0 + np.exp(-x))


@njit(cache=True)
def _dsilu_nb(x):
    sg = 1.0 / (1.0 + np.exp(-x))
    return sg * (1.0 + x * (1.0 - sg))


@njit(cache=True)
def _phi_forward_nb(X, span, V, src, coeffs, wb, ws):
    N = X.shape[0]
    E = src.shape[0]
    phi = np.empty((N, E))
    spl = np.empty((N, E))
    base = np.empty((N, E))
    for r in range(N):
        for e in range(E):
            i = src[e]
            s = span[r, i]
            acc = 0.0
            for q in range(DEGREE + 1):
                acc += V[r, i, q] * coeffs[e, s + q]
            sx = _silu_nb(X[r, i])
            spl[r, e] = acc
            base[r, e] = sx
            phi[r, e] = wb[e] * sx + ws[e] * acc
    return phi, spl, base


@njit(cache=True)
def _phi_backward_nb(gphi, X, span, V, dV, src, coeffs, wb, ws, spl, base, n_in):
    N = X.shape[0]
    E = src.shape[0]
    K = coeffs.shape[1]
    gc = np.zeros((E, K))
    gwb = np.zeros(E)
    gws = np.zeros(E)
    gX = np.zeros((N, n_in))
    for r in range(N):
        for e in range(E):
            g = gphi[r, e]
            if g == 0.0:
                continue
            i = src[e]
            s = span[r, i]
            gwb[e] += g * base[r, e]
            gws[e] += g * spl[r, e]
            gs = g * ws[e]
            dsp = 0.0
            for q in range(DEGREE + 1):
                gc[e, s + q] += gs * V[r, i, q]
                dsp += dV[r, i, q] * coeffs[e, s + q]
            gX[r, i] += g * wb[e] * _dsilu_nb(X[r, i]) + gs * dsp
    return gc, gwb, gws, gX


@njit(cache=True)
def _scatter_nb(phi, dst, n_out):
    N, E = phi.shape
    out = np.zeros((N, n_out))
    for r in range(N):
        for e in range(E):
            out[r, dst[e]] += phi[r, e]
    return out


# --------------------------------------------------------------------------
# numpy versions
# --------------------------------------------------------------------------


def _layer_basis_np(X, lo, hi, G):
    X = np.asarray(X, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    h = (hi - lo) / G
    steps = np.arange(-DEGREE, G + DEGREE + 1, dtype=float)
    knots = lo[:, None] + steps[None, :] * h[:, None]  # (n, G + 2k + 1)
    inside = (X >= lo) & (X <= hi)
    xc = np.clip(X, lo, hi)[:, :, None]
    t = knots[None, :, :]
    bases = ((xc >= t[:, :, :-1]) & (xc < t[:, :, 1:])).astype(float)
    # x == hi sits on the first extended knot; the half-open test above
    # already places it in the extended interval, which is what we want.
    lower = bases
    for k in range(1, DEGREE + 1):
        lower = bases
        bases = (xc - t[:, :, : -(k + 1)]) / (t[:, :, k:-1] - t[:, :, : -(k + 1)]) * bases[:, :, :-1] + (
            t[:, :, k + 1 :] - xc
        ) / (t[:, :, k + 1 :] - t[:, :, 1:-k]) * bases[:, :, 1:]
    nb = G + DEGREE
    B = bases[:, :, :nb]
    low = lower[:, :, : nb + 1]
    dB = (low[:, :, :-1] - low[:, :, 1:]) / h[None, :, None]
    dB = np.where(inside[:, :, None], dB, 0.0)
    return np.ascontiguousarray(B), np.ascontiguousarray(dB)


def _silu_np(x):
    return x / (1.0 + np.exp(-x))


def _dsilu_np(x):
    sg = 1.0 / (1.0 + np.exp(-x))
    return sg * (1.0 + x * (1.0 - sg))


def _layer_basis_local_np(X, lo, hi, G):
    X = np.asarray(X, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    h = (hi - lo) / G
    inside = (X >= lo) & (X <= hi)
    x = np.clip(X, lo, hi)
    span = np.clip(np.floor((x - lo) / h).astype(np.int64), 0, G - 1)
    span = span - ((span > 0) & (x < lo + span * h))
    span = span + ((span < G - 1) & (x >= lo + (span + 1) * h))
    # same local triangle as the numba kernel, vectorised over (N, n)
    tri = [np.ones_like(x)] + [None] * DEGREE
    left = [None] * (DEGREE + 1)
    right = [None] * (DEGREE + 1)
    low = None
    for j in range(1, DEGREE + 1):
        left[j] = x - (lo + (span + 1 - j) * h)
        right[j] = (lo + (span + j) * h) - x
        saved = np.zeros_like(x)
        for q in range(j):
            temp = tri[q] / (right[q + 1] + left[j - q])
            tri[q] = saved + right[q + 1] * temp
            saved = left[j - q] * temp
        tri[j] = saved
        if j == DEGREE - 1:
            low = list(tri[:DEGREE])
    V = np.stack(tri, axis=-1)
    lowp = np.stack(low + [np.zeros_like(x)], axis=-1)
    prev = np.concatenate([np.zeros(x.shape + (1,)), lowp[..., :-1]], axis=-1)
    dV = (prev - lowp) / h[None, :, None]
    dV = np.where(inside[:, :, None], dV, 0.0)
    return span, V, dV


def _gather(coeffs, span, src):
    idx = span[:, src][:, :, None] + np.arange(DEGREE + 1)  # (N, E, 4)
    rows = np.arange(src.size)[None, :, None]
    return coeffs[rows, idx], rows, idx


def _phi_forward_np(X, span, V, src, coeffs, wb, ws):
    cg, _, _ = _gather(coeffs, span, src)
    spl = np.einsum("neq,neq->ne", V[:, src, :], cg)
    base = _silu_np(X[:, src])
    phi = wb * base + ws * spl
    return phi, spl, base


def _phi_backward_np(gphi, X, span, V, dV, src, coeffs, wb, ws, spl, base, n_in):
    cg, rows, idx = _gather(coeffs, span, src)
    gwb = np.einsum("ne,ne->e", gphi, base)
    gws = np.einsum("ne,ne->e", gphi, spl)
    gs = gphi * ws
    gc = np.zeros_like(coeffs)
    np.add.at(gc, (np.broadcast_to(rows, idx.shape), idx), gs[:, :, None] * V[:, src, :])
    dsp = np.einsum("neq,neq->ne", dV[:, src, :], cg)
    contrib = gphi * wb * _dsilu_np(X[:, src]) + gs * dsp
    gX = np.zeros((X.shape[0], n_in))
    np.add.at(gX.T, src, contrib.T)
    return gc, gwb, gws, gX


def _scatter_np(phi, dst, n_out):
    out = np.zeros((phi.shape[0], n_out))
    np.add.at(out.T, dst, phi.T)
    return out


NUMPY_KERNELS = {
    "layer_basis": _layer_basis_np,
    "layer_basis_local": _layer_basis_local_np,
    "phi_forward": _phi_forward_np,
    "phi_backward": _phi_backward_np,
    "scatter": _scatter_np,
}

NUMBA_KERNELS = {
    "layer_basis": _layer_basis_nb,
    "layer_basis_local": _layer_basis_local_nb,
    "phi_forward": _phi_forward_nb,
    "phi_backward": _phi_backward_nb,
    "scatter": _scatter_nb,
}

_ACTIVE = NUMBA_KERNELS if HAS_NUMBA else NUMPY_KERNELS

layer_basis = _ACTIVE["layer_basis"]
layer_basis_local = _ACTIVE["layer_basis_local"]
phi_forward = _ACTIVE["phi_forward"]
phi_backward = _ACTIVE["phi_backward"]
scatter = _ACTIVE["scatter"]

silu = _silu_np
dsilu = _dsilu_np
