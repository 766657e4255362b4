"""Fixed-length bit chromosomes for sparse KAN architectures.

Layout, left to right:

* one connection block per layer of the largest network in the search space:
  ``u x n`` (input -> hidden 1), ``d - 2`` blocks of ``u x u``, then ``m x u``
  (last hidden -> output).  A block lists, for each upper-layer neuron in
  turn, that neuron's incoming-connection bits;
* ``b_grid`` bits holding ``G - 1``;
* ``b_depth`` bits holding ``depth - 1``.

Integers are stored most-significant bit first.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .network import KanSpec


@dataclass(frozen=True)
class SearchSpace:
    n: int
    m: int
    d: int = 4
    u: int = 5
    b_grid: int = 6
    b_depth: int = 2

    def __post_init__(self):
        for name in ("n", "m", "d", "u", "b_grid", "b_depth"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"search space field {name} must be >= 1")

    def block_shapes(self) -> list[tuple[int, int]]:
        """``(upper, lower)`` neuron counts of every connection block."""
        if self.d == 1:
            return [(self.m, self.n)]
        return [(self.u, self.n)] + [(self.u, self.u)] * (self.d - 2) + [(self.m, self.u)]

    def block_offsets(self) -> list[int]:
        offs, pos = [], 0
        for r, c in self.block_shapes():
            offs.append(pos)
            pos += r * c
        return offs

    @property
    def connection_bits(self) -> int:
        return sum(r * c for r, c in self.block_shapes())

    @property
    def grid_slice(self) -> slice:
        return slice(self.connection_bits, self.connection_bits + self.b_grid)

    @property
    def depth_slice(self) -> slice:
        start = self.connection_bits + self.b_grid
        return slice(start, start + self.b_depth)

    def neuron_groups(self) -> list[tuple[int, int]]:
        """``(start, length)`` of every upper-neuron incoming-bit group."""
        groups = []
        for (r, c), off in zip(self.block_shapes(), self.block_offsets()):
            groups += [(off + k * c, c) for k in range(r)]
        return groups

    def max_spec_layer_sizes(self, depth: int | None = None) -> tuple[int, ...]:
        depth = self.d if depth is None else depth
        return (self.n,) + (self.u,) * (depth - 1) + (self.m,)


def chromosome_length(space: SearchSpace) -> int:
    """Connection bits of every block plus grid and depth bits."""
    return space.connection_bits + space.b_grid + space.b_depth


def _unsigned(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def random_chromosome(space: SearchSpace, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=chromosome_length(space), dtype=np.uint8)


def bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in bits)


def str_to_bits(s: str) -> np.ndarray:
    if any(c not in "01" for c in s):
        raise ValueError("chromosome string may contain only '0' and '1'")
    return np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0")


@dataclass
class DecodedNet:
    spec: KanSpec
    valid: bool
    target_depth: int
    effective_depth: int
    pruned_neurons: list[tuple[int, int]] = field(default_factory=list)
    reason: str = ""


def _reachable_forward(masks: list[np.ndarray]) -> list[np.ndarray]:
    reach = [np.ones(masks[0].shape[1], dtype=bool)]
    for M in masks:
        reach.append((M[:, reach[-1]].sum(axis=1) > 0))
    return reach


def _reachable_backward(masks: list[np.ndarray]) -> list[np.ndarray]:
    reach = [np.ones(masks[-1].shape[0], dtype=bool)]
    for M in reversed(masks):
        reach.append((M[reach[-1], :].sum(axis=0) > 0))
    return reach[::-1]


def validity(spec: KanSpec) -> bool:
    """True iff every output neuron is reachable from some input neuron."""
    return bool(np.all(_reachable_forward(list(spec.masks))[-1]))


def _prune(masks: list[np.ndarray]):
    fwd = _reachable_forward(masks)
    bwd = _reachable_backward(masks)
    L = len(masks)
    keep = [np.ones(masks[0].shape[1], dtype=bool)]
    keep += [fwd[l] & bwd[l] for l in range(1, L)]
    keep.append(np.ones(masks[-1].shape[0], dtype=bool))
    pruned = [(l, int(i)) for l in range(1, L) for i in np.nonzero(~keep[l])[0]]
    new_masks = []
    for l, M in enumerate(masks):
        # an edge survives only if its source has an input path and its
        # target has an output path
        src_ok = fwd[l] & keep[l]
        dst_ok = bwd[l + 1] & keep[l + 1]
        Mk = M * np.outer(dst_ok, src_ok)
        new_masks.append(Mk[np.ix_(keep[l + 1], keep[l])])
    return new_masks, pruned, keep


def decode(space: SearchSpace, bits) -> DecodedNet:
    """Bits -> architecture.  Total: never raises for a correct-length string."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (chromosome_length(space),):
        raise ValueError(f"chromosome must have {chromosome_length(space)} bits, got {bits.size}")
    grid = _unsigned(bits[space.grid_slice]) + 1
    target = min(max(_unsigned(bits[space.depth_slice]) + 1, 1), space.d)

    blocks = [
        bits[off : off + r * c].reshape(r, c).copy()
        for (r, c), off in zip(space.block_shapes(), space.block_offsets())
    ]

    def invalid(mats, reason, depth=None):
        sizes = (mats[0].shape[1],) + tuple(M.shape[0] for M in mats)
        spec = KanSpec(sizes, tuple(mats), grid, valid=False)
        return DecodedNet(spec, False, target, len(mats) if depth is None else depth, [], reason)

    if space.d == 1:
        mats = [blocks[0]]
    elif target == 1:
        if space.m > space.u:
            return invalid([np.zeros((space.m, space.n), dtype=np.uint8)], "depth 1 needs m <= u")
        mats = [blocks[0][: space.m, :]]
    else:
        # zero mask: hidden blocks target..d-1 are ignored, output block re-attached
        mats = [blocks[0]] + blocks[1 : target - 1] + [blocks[-1]]

    # degradation: an all-zero hidden->hidden block removes the layer it feeds
    k = 1
    while k < len(mats) - 1:
        if not mats[k].any():
            del mats[k]
        else:
            k += 1
    if not mats[0].any():
        return invalid(mats, "no connection leaves the input layer")
    if not mats[-1].any():
        return invalid(mats, "no connection reaches the output layer")

    pre_spec = KanSpec((space.n,) + tuple(M.shape[0] for M in mats), tuple(mats), grid)
    if not validity(pre_spec):
        return invalid(mats, "some output neuron has no path from the inputs")
    new_masks, pruned, _ = _prune(mats)
    sizes = (space.n,) + tuple(M.shape[0] for M in new_masks)
    spec = KanSpec(sizes, tuple(new_masks), grid, valid=True)
    return DecodedNet(spec, True, target, len(new_masks), pruned)


def genome_to_dict(space: SearchSpace, bits) -> dict:
    dec = decode(space, bits)
    return {
        "space": asdict(space),
        "bits": bits_to_str(bits),
        "decoded": {
            "layer_sizes": list(dec.spec.layer_sizes),
            "masks": [M.astype(int).tolist() for M in dec.spec.masks],
            "grid": dec.spec.grid,
            "depth": dec.effective_depth,
            "valid": dec.valid,
        },
    }


def save_genome(space: SearchSpace, bits, path) -> None:
    Path(path).write_text(json.dumps(genome_to_dict(space, bits), indent=1) + "\n")


def load_genome(path) -> tuple[SearchSpace, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    space = SearchSpace(**doc["space"])
    bits = str_to_bits(doc["bits"])
    if bits.size != chromosome_length(space):
        raise ValueError(f"genome has {bits.size} bits, search space needs {chromosome_length(space)}")
    return space, bits
