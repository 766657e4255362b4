"""Genetic search over chromosomes: variation, cached fitness, (mu + lambda) survival."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .genome import DecodedNet, SearchSpace, bits_to_str, chromosome_length, decode, random_chromosome
from .network import ContractError, KanSpec, init_model
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class GaConfig:
    population: int = 100
    generations: int = 20
    crossover_rate: float = 0.9
    mutation_rate: float = 0.5
    neuron_swap_prob: float = 0.5
    per_bit_flip_prob: float | None = None  # None -> 1 / chromosome length
    tournament_size: int = 2
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate", "neuron_swap_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.per_bit_flip_prob is not None and not 0.0 <= self.per_bit_flip_prob <= 1.0:
            raise ValueError(f"per_bit_flip_prob must lie in [0, 1], got {self.per_bit_flip_prob}")
        if self.population < 2 or self.population % 2:
            raise ValueError(f"population must be an even number >= 2, got {self.population}")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def flip_prob(self, space: SearchSpace) -> float:
        if self.per_bit_flip_prob is None:
            return 1.0 / chromosome_length(space)
        return self.per_bit_flip_prob


@dataclass
class Individual:
    bits: np.ndarray
    fitness: float = math.nan  # NaN = not evaluated yet
    n_edges: int = 0
    valid: bool = False

    @property
    def key(self) -> str:
        return bits_to_str(self.bits)

    @property
    def evaluated(self) -> bool:
        return not math.isnan(self.fitness)

    def copy(self) -> "Individual":
        return Individual(self.bits.copy(), self.fitness, self.n_edges, self.valid)


class EvalCache:
    """Bit string -> (fitness, n_edges, valid).  Counts hits and misses."""

    def __init__(self):
        self._store: dict[str, tuple[float, int, bool]] = {}
        self.hits = 0
        self.misses = 0

    def __contains__(self, key: str) -> bool:
        return key in self._store

    def __len__(self) -> int:
        return len(self._store)

    def get(self, key: str):
        val = self._store.get(key)
        if val is None:
            self.misses += 1
        else:
            self.hits += 1
        return val

    def put(self, key: str, value: tuple[float, int, bool]) -> None:
        self._store[key] = value


@dataclass
class FitnessContext:
    """Everything a worker needs to score a chromosome; picklable."""

    space: SearchSpace
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    train_config: TrainConfig
    run_seed: int = 0


def spec_digest(spec: KanSpec) -> str:
    doc = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()


def init_seed(run_seed: int, spec: KanSpec) -> int:
    """Model-init seed from the run seed and the decoded architecture.

    Bit strings that decode to the same network share a seed, so fitness is
    a function of the phenotype alone.
    """
    h = hashlib.sha256(f"{int(run_seed)}:{spec_digest(spec)}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def fitness_of(dec: DecodedNet, ctx: FitnessContext) -> float:
    if not dec.valid:
        return math.inf
    model = init_model(dec.spec, ctx.X_train, seed=init_seed(ctx.run_seed, dec.spec))
    try:
        report = train(model, (ctx.X_train, ctx.y_train), (ctx.X_val, ctx.y_val), ctx.train_config)
    except (FloatingPointError, ValueError) as exc:
        log.warning("training failed: %s", exc)
        return math.inf
    return report.min_val_loss


def _score(args) -> tuple[float, int, bool]:
    bits, ctx = args
    dec = decode(ctx.space, bits)
    return fitness_of(dec, ctx), dec.spec.n_edges() if dec.valid else 0, dec.valid


def evaluate(ind: Individual, ctx: FitnessContext, cache: EvalCache) -> float:
    """Assign ``ind.fitness`` (cached by bit string) and return it."""
    key = ind.key
    hit = cache.get(key)
    if hit is None:
        hit = _score((ind.bits, ctx))
        cache.put(key, hit)
    ind.fitness, ind.n_edges, ind.valid = hit
    return ind.fitness


def evaluate_all(pop: list[Individual], ctx: FitnessContext, cache: EvalCache, pool=None) -> int:
    """Evaluate a population; returns the number of fresh trainings."""
    todo: dict[str, np.ndarray] = {}
    for ind in pop:
        if ind.key not in cache and ind.key not in todo:
            todo[ind.key] = ind.bits
    keys = list(todo)
    if pool is not None and len(keys) > 1:
        results = list(pool.map(_score, [(todo[k], ctx) for k in keys]))
    else:
        results = [_score((todo[k], ctx)) for k in keys]
    for k, r in zip(keys, results):
        cache.put(k, r)
    for ind in pop:
        evaluate(ind, ctx, cache)
    # the lookups above counted fresh keys as hits; re-book them as misses
    cache.hits -= len(keys)
    cache.misses += len(keys)
    return len(keys)


# ---------------------------------------------------------------------------
# variation
# ---------------------------------------------------------------------------


def crossover(p1, p2, rng: np.random.Generator, config: GaConfig, space: SearchSpace):
    """Per-neuron group swap on the connection blocks, single point on the tail."""
    a = np.array(p1.bits if isinstance(p1, Individual) else p1, dtype=np.uint8)
    b = np.array(p2.bits if isinstance(p2, Individual) else p2, dtype=np.uint8)
    if a.shape != b.shape or a.size != chromosome_length(space):
        raise ContractError(f"crossover needs two chromosomes of length {chromosome_length(space)}")
    c1, c2 = a.copy(), b.copy()
    if rng.random() >= config.crossover_rate:
        return c1, c2
    groups = space.neuron_groups()
    swap = rng.random(len(groups)) < config.neuron_swap_prob
    for (start, length), s in zip(groups, swap):
        if s:
            sl = slice(start, start + length)
            c1[sl], c2[sl] = b[sl], a[sl]
    tail = space.connection_bits
    cut = int(rng.integers(tail, a.size + 1))  # uniform over the tail's cut points
    c1[cut:], c2[cut:] = b[cut:], a[cut:]
    return c1, c2


def mutate(bits, rng: np.random.Generator, config: GaConfig, space: SearchSpace) -> np.ndarray:
    out = np.array(bits.bits if isinstance(bits, Individual) else bits, dtype=np.uint8)
    if rng.random() < config.mutation_rate:
        flips = rng.random(out.size) < config.flip_prob(space)
        out ^= flips.astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def _rank_key(ind: Individual, order: int):
    return (ind.fitness, ind.n_edges, order)


def tournament(pop: list[Individual], rng: np.random.Generator, size: int) -> Individual:
    picks = rng.integers(0, len(pop), size=size)
    best = min(picks, key=lambda k: _rank_key(pop[k], int(k)))
    return pop[int(best)]


def select_survivors(parents: list[Individual], offspring: list[Individual], config: GaConfig) -> list[Individual]:
    """(mu + lambda) truncation; ties -> fewer edges, then earlier insertion."""
    merged = list(parents) + list(offspring)
    if any(not ind.evaluated for ind in merged):
        raise ContractError("every individual must be evaluated before survivor selection")
    order = sorted(range(len(merged)), key=lambda k: _rank_key(merged[k], k))
    return [merged[k] for k in order[: config.population]]


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class GenerationStats:
    generation: int
    min_fitness: float
    mean_fitness: float
    evaluations: int
    cache_hits: int


@dataclass
class RunReport:
    best: Individual
    history: list[GenerationStats] = field(default_factory=list)
    wall_clock: float = 0.0
    evaluations: int = 0
    cache_hits: int = 0
    population: list[Individual] = field(default_factory=list)

    def history_dicts(self) -> list[dict]:
        return [asdict(h) for h in self.history]

    def save_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "min_fitness", "mean_fitness", "evaluations", "cache_hits"])
            for h in self.history:
                w.writerow([h.generation, repr(h.min_fitness), repr(h.mean_fitness), h.evaluations, h.cache_hits])


def _mean_fitness(pop: list[Individual]) -> float:
    f = np.array([ind.fitness for ind in pop])
    finite = f[np.isfinite(f)]
    # inf only when every member is invalid
    return float(finite.mean()) if finite.size else math.inf


def run(
    space: SearchSpace,
    train_set,
    val_set,
    config: GaConfig | None = None,
    train_config: TrainConfig | None = None,
    progress=None,
) -> RunReport:
    """Evolve ``config.generations`` generations and return the best individual.

    ``train_set`` / ``val_set`` are ``(X, y)`` pairs.  ``progress`` is an
    optional callable receiving each :class:`GenerationStats`.
    """
    cfg = config or GaConfig()
    tcfg = train_config or TrainConfig()
    Xtr, ytr = (np.ascontiguousarray(a) for a in train_set)
    Xva, yva = (np.ascontiguousarray(a) for a in val_set)
    if Xtr.ndim != 2 or Xtr.shape[1] != space.n or Xva.shape[1:] != (space.n,):
        raise ContractError(f"datasets must have {space.n} feature columns")
    if tcfg.loss_kind == "cross_entropy":
        n_cls = int(max(ytr.max(), yva.max())) + 1
        if n_cls > space.m:
            raise ContractError(f"labels reach class {n_cls - 1} but the search space has {space.m} outputs")
    ctx = FitnessContext(space, Xtr, ytr, Xva, yva, tcfg, cfg.seed)

    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    cache = EvalCache()
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    history: list[GenerationStats] = []
    try:
        pop = [Individual(random_chromosome(space, rng)) for _ in range(cfg.population)]
        n_eval = evaluate_all(pop, ctx, cache, pool)
        pop = select_survivors(pop, [], cfg)
        for gen in range(1, cfg.generations + 1):
            if gen > 1:
                offspring = []
                while len(offspring) < cfg.population:
                    p1 = tournament(pop, rng, cfg.tournament_size)
                    p2 = tournament(pop, rng, cfg.tournament_size)
                    c1, c2 = crossover(p1, p2, rng, cfg, space)
                    offspring.append(Individual(mutate(c1, rng, cfg, space)))
                    offspring.append(Individual(mutate(c2, rng, cfg, space)))
                n_eval = evaluate_all(offspring, ctx, cache, pool)
                pop = select_survivors(pop, offspring, cfg)
            stats = GenerationStats(gen, float(pop[0].fitness), _mean_fitness(pop), n_eval, cache.hits)
            history.append(stats)
            log.info("generation %d: min %.6g mean %.6g (%d trained)", gen, stats.min_fitness, stats.mean_fitness, n_eval)
            if progress is not None:
                progress(stats)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunReport(
        best=pop[0].copy(),
        history=history,
        wall_clock=time.perf_counter() - t0,
        evaluations=cache.misses,
        cache_hits=cache.hits,
        population=pop,
    )
