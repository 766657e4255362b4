import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanevo.genome import (
    SearchSpace,
    bits_to_str,
    chromosome_length,
    decode,
    genome_to_dict,
    load_genome,
    random_chromosome,
    save_genome,
    str_to_bits,
    validity,
)
from kanevo.network import KanSpec


def bfs_valid(masks) -> bool:
    """Independent reachability: explicit node graph + queue from all inputs."""
    adj = {}
    for l, M in enumerate(masks):
        for j, i in zip(*np.nonzero(M)):
            adj.setdefault((l, int(i)), []).append((l + 1, int(j)))
    n_in = masks[0].shape[1]
    seen = set((0, i) for i in range(n_in))
    q = deque(seen)
    while q:
        v = q.popleft()
        for w in adj.get(v, []):
            if w not in seen:
                seen.add(w)
                q.append(w)
    L = len(masks)
    return all((L, j) in seen for j in range(masks[-1].shape[0]))


def set_uint(bits, sl, value):
    width = sl.stop - sl.start
    for k in range(width):
        bits[sl.start + k] = (value >> (width - 1 - k)) & 1


class TestLength:
    def test_worked_example(self):
        assert chromosome_length(SearchSpace(n=6, m=2, d=3, u=5)) == 73

    def test_iris_space(self):
        assert chromosome_length(SearchSpace(n=4, m=3, d=4, u=5)) == 93

    def test_tiny_space(self):
        assert chromosome_length(SearchSpace(n=2, m=1, d=2, u=1)) == 11

    def test_bad_space(self):
        with pytest.raises(ValueError):
            SearchSpace(n=0, m=1)


class TestDecode:
    space = SearchSpace(n=4, m=3)

    def test_all_zero_invalid(self):
        for depth in range(4):
            for grid in (0, 17, 63):
                bits = np.zeros(93, np.uint8)
                set_uint(bits, self.space.depth_slice, depth)
                set_uint(bits, self.space.grid_slice, grid)
                assert not decode(self.space, bits).valid

    def test_depth_bits(self):
        bits = np.ones(93, np.uint8)
        set_uint(bits, self.space.depth_slice, 0)
        d = decode(self.space, bits)
        assert d.target_depth == 1 and d.spec.layer_sizes == (4, 3)
        set_uint(bits, self.space.depth_slice, 3)
        assert decode(self.space, bits).target_depth == 4

    def test_all_ones(self):
        d = decode(self.space, np.ones(93, np.uint8))
        assert d.valid and d.spec.layer_sizes == (4, 5, 5, 5, 3) and d.spec.grid == 64
        assert d.pruned_neurons == [] and all(M.all() for M in d.spec.masks)

    def test_grid_bijection(self):
        bits = np.ones(93, np.uint8)
        grids = set()
        for v in range(64):
            set_uint(bits, self.space.grid_slice, v)
            grids.add(decode(self.space, bits).spec.grid)
        assert grids == set(range(1, 65))

    def test_depth_clamped(self):
        sp = SearchSpace(n=2, m=1, d=2, u=3, b_depth=3)
        bits = np.ones(chromosome_length(sp), np.uint8)  # requests depth 8
        d = decode(sp, bits)
        assert d.target_depth == 2 and d.valid

    def test_depth_one_needs_m_le_u(self):
        sp = SearchSpace(n=3, m=4, d=3, u=2)
        bits = np.ones(chromosome_length(sp), np.uint8)
        set_uint(bits, sp.depth_slice, 0)
        d = decode(sp, bits)
        assert not d.valid and "m <= u" in d.reason

    def test_degradation_equivalence(self):
        rng = np.random.default_rng(0)
        shapes = self.space.block_shapes()
        offs = self.space.block_offsets()
        done = 0
        while done < 30:
            bits = random_chromosome(self.space, rng)
            r, c = shapes[2]
            bits[offs[2] : offs[2] + r * c] = 0  # block 3 zero
            set_uint(bits, self.space.depth_slice, 3)  # depth 4 requested
            a = decode(self.space, bits)
            b_bits = bits.copy()
            set_uint(b_bits, self.space.depth_slice, 2)  # explicit depth 3
            b = decode(self.space, b_bits)
            assert a.valid == b.valid
            if a.valid:
                assert a.spec == b.spec
                assert a.effective_depth <= 3
                done += 1

    def test_degradation_reduces_depth(self):
        bits = np.ones(93, np.uint8)
        r, c = self.space.block_shapes()[1]
        off = self.space.block_offsets()[1]
        bits[off : off + r * c] = 0
        d = decode(self.space, bits)
        assert d.valid and d.target_depth == 4 and d.effective_depth == 3
        assert d.spec.layer_sizes == (4, 5, 5, 3)

    def test_totality_and_validity_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(10_000):
            bits = random_chromosome(self.space, rng)
            # sparsify half the draws so invalid nets are common
            if rng.random() < 0.5:
                bits[: self.space.connection_bits] &= (rng.random(self.space.connection_bits) < 0.15).astype(np.uint8)
            d = decode(self.space, bits)
            assert d.valid == bfs_valid(list(d.spec.masks))
            if d.valid:
                assert validity(d.spec) and bfs_valid(list(d.spec.masks))

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            decode(self.space, np.zeros(10, np.uint8))

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=93, max_size=93))
    def test_total_property(self, bits):
        d = decode(self.space, np.array(bits, np.uint8))
        assert d.effective_depth <= max(d.target_depth, 1)


class TestPruning:
    def test_soundness(self):
        rng = np.random.default_rng(5)
        sp = SearchSpace(n=4, m=3)
        for _ in range(300):
            bits = random_chromosome(sp, rng)
            bits[: sp.connection_bits] &= (rng.random(sp.connection_bits) < 0.5).astype(np.uint8)
            d = decode(sp, bits)
            if not d.valid:
                continue
            # after pruning every hidden neuron has both an in-edge and an out-edge
            for l in range(1, d.spec.depth):
                assert np.all(d.spec.masks[l - 1].sum(axis=1) > 0)
                assert np.all(d.spec.masks[l].sum(axis=0) > 0)

    def test_dead_end_neuron_pruned(self):
        sp = SearchSpace(n=2, m=1, d=2, u=2)
        # block 1 (2x2): h0 <- x0, h1 <- x1 ; block 2 (1x2): out <- h0 only
        bits = np.array([1, 0, 0, 1, 1, 0] + [0, 0, 0, 0, 1, 0] + [0, 1], np.uint8)
        d = decode(sp, bits)
        assert d.valid and d.spec.layer_sizes == (2, 1, 1)
        assert d.pruned_neurons == [(1, 1)]
        assert d.spec.masks[0].tolist() == [[1, 0]]


class TestValidity:
    def test_chain(self):
        one = np.ones((1, 1), np.uint8)
        assert validity(KanSpec((1, 1, 1), (one, one), 3))

    def test_unreachable_output(self):
        spec = KanSpec((2, 2), (np.array([[1, 1], [0, 0]], np.uint8),), 3)
        assert not validity(spec)

    def test_random_specs_match_bfs(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            sizes = tuple(int(v) for v in rng.integers(1, 5, int(rng.integers(2, 5))))
            masks = tuple((rng.random((b, a)) < 0.4).astype(np.uint8) for a, b in zip(sizes[:-1], sizes[1:]))
            assert validity(KanSpec(sizes, masks, 2)) == bfs_valid(list(masks))


class TestRandomAndIO:
    def test_random_length_and_seed(self):
        sp = SearchSpace(n=4, m=3)
        a = random_chromosome(sp, np.random.default_rng(1))
        b = random_chromosome(sp, np.random.default_rng(1))
        assert a.size == 93 and np.array_equal(a, b)

    def test_fair_coin(self):
        sp = SearchSpace(n=4, m=3)
        rng = np.random.default_rng(2)
        bits = np.concatenate([random_chromosome(sp, rng) for _ in range(108)])[:10_000]
        assert 0.47 <= bits.mean() <= 0.53

    def test_string_round_trip(self):
        bits = random_chromosome(SearchSpace(n=3, m=2), np.random.default_rng(0))
        assert np.array_equal(str_to_bits(bits_to_str(bits)), bits)
        with pytest.raises(ValueError):
            str_to_bits("0120")

    def test_genome_file(self, tmp_path):
        sp = SearchSpace(n=4, m=3)
        bits = random_chromosome(sp, np.random.default_rng(4))
        save_genome(sp, bits, tmp_path / "g.json")
        doc = json.loads((tmp_path / "g.json").read_text())
        assert set(doc) == {"space", "bits", "decoded"}
        assert set(doc["decoded"]) == {"layer_sizes", "masks", "grid", "depth", "valid"}
        sp2, bits2 = load_genome(tmp_path / "g.json")
        assert sp2 == sp and np.array_equal(bits2, bits)
        assert genome_to_dict(sp, bits) == doc
