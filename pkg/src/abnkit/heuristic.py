"""Heuristic structure search over a score cache, plus consensus utilities.

All three algorithms walk the space of cache-backed DAGs with single-arc
moves (add, delete, reverse).  A candidate move is admissible only when the
resulting parent sets exist in the cache -- which is exactly how ban/retain
and cardinality constraints propagate -- and the graph stays acyclic.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cache import ScoreCache
from .dag import ConstraintSet, Dag, find_cycle
from .errors import EmptyCache, NodeSetMismatch
from .exact import StructuralPrior

Move = tuple[str, int, int]  # kind, child, parent


@dataclass(frozen=True)
class HeuristicConfig:
    algorithm: str = "hill_climb"
    restarts: int = 1
    max_steps: int = 500
    tabu_length: int = 10
    initial_temperature: float = 1.0
    cooling_factor: float = 0.995
    seed: int = 0
    init_density: float = 0.1

    def __post_init__(self):
        if self.algorithm not in ("hill_climb", "tabu", "simulated_annealing"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.restarts < 1 or self.max_steps < 1 or self.tabu_length < 1:
            raise ValueError("restarts, max_steps, tabu_length must be positive")
        if not 0 < self.cooling_factor < 1:
            raise ValueError("cooling_factor must lie in (0, 1)")
        if self.initial_temperature <= 0:
            raise ValueError("initial_temperature must be positive")


@dataclass(frozen=True)
class RestartTrace:
    dag: Dag
    score: float
    best_scores: tuple[float, ...]


@dataclass(frozen=True)
class SearchTrace:
    restarts: tuple[RestartTrace, ...]
    score_type: str

    def best(self) -> RestartTrace:
        """Highest-scoring restart; earliest index wins exact ties."""
        return max(self.restarts, key=lambda r: (r.score, -self.restarts.index(r)))


class _State:
    """Mutable search state: parent masks, per-node scores, adjacency."""

    def __init__(self, cache: ScoreCache, prior: StructuralPrior, score_type: str):
        self.cache = cache
        self.n = cache.n_nodes
        self.prior = prior
        self.score_type = score_type
        retained = cache.constraints.retained
        self.masks = [
            sum(1 << int(j) for j in np.flatnonzero(retained[i]))
            for i in range(self.n)
        ]
        self.node_scores = [self._score(i, self.masks[i]) for i in range(self.n)]

    def _score(self, node: int, mask: int) -> float:
        return self.cache.score(node, mask, self.score_type) + self.prior.log_prior(
            self.n, bin(mask).count("1")
        )

    def has_entry(self, node: int, mask: int) -> bool:
        return self.cache.has_entry(node, mask)

    def total(self) -> float:
        return float(sum(self.node_scores))

    def has_arc(self, child: int, parent: int) -> bool:
        return bool(self.masks[child] >> parent & 1)

    def path_exists(self, start: int, goal: int) -> bool:
        """Directed path start -> ... -> goal over current arcs."""
        stack = [start]
        seen = {start}
        while stack:
            cur = stack.pop()
            if cur == goal:
                return True
            for child in range(self.n):
                if self.masks[child] >> cur & 1 and child not in seen:
                    seen.add(child)
                    stack.append(child)
        return False

    # --- move machinery ---------------------------------------------------

    def valid_moves(self) -> list[tuple[Move, float]]:
        """All admissible single-arc moves with their score deltas, in the
        canonical order add < delete < reverse, then (child, parent)."""
        out = []
        for child in range(self.n):
            cur = self.masks[child]
            for parent in range(self.n):
                if parent == child or self.has_arc(child, parent):
                    continue
                new = cur | (1 << parent)
                if not self.has_entry(child, new):
                    continue
                if self.path_exists(child, parent):
                    continue  # parent -> child arc would close a cycle
                delta = self._score(child, new) - self.node_scores[child]
                out.append((("add", child, parent), delta))
        for child in range(self.n):
            cur = self.masks[child]
            for parent in range(self.n):
                if not self.has_arc(child, parent):
                    continue
                new = cur & ~(1 << parent)
                if not self.has_entry(child, new):
                    continue  # retained arcs have no cached subset
                delta = self._score(child, new) - self.node_scores[child]
                out.append((("delete", child, parent), delta))
        for child in range(self.n):
            for parent in range(self.n):
                if not self.has_arc(child, parent):
                    continue
                child_new = self.masks[child] & ~(1 << parent)
                parent_new = self.masks[parent] | (1 << child)
                if not (self.has_entry(child, child_new)
                        and self.has_entry(parent, parent_new)):
                    continue
                # after dropping parent->child, child->parent must not close a cycle
                self.masks[child] = child_new
                closes = self.path_exists(parent, child)
                self.masks[child] = self.masks[child] | (1 << parent)
                if closes:
                    continue
                delta = (self._score(child, child_new) - self.node_scores[child]
                         + self._score(parent, parent_new) - self.node_scores[parent])
                out.append((("reverse", child, parent), delta))
        return out

    def apply(self, move: Move) -> None:
        kind, child, parent = move
        if kind == "add":
            self.masks[child] |= 1 << parent
            self.node_scores[child] = self._score(child, self.masks[child])
        elif kind == "delete":
            self.masks[child] &= ~(1 << parent)
            self.node_scores[child] = self._score(child, self.masks[child])
        else:
            self.masks[child] &= ~(1 << parent)
            self.masks[parent] |= 1 << child
            self.node_scores[child] = self._score(child, self.masks[child])
            self.node_scores[parent] = self._score(parent, self.masks[parent])

    def dag(self) -> Dag:
        adjacency = np.zeros((self.n, self.n), dtype=np.int8)
        for i, mask in enumerate(self.masks):
            for j in range(self.n):
                if mask >> j & 1:
                    adjacency[i, j] = 1
        return Dag(self.cache.nodes, adjacency)


def _inverse(move: Move) -> Move:
    kind, child, parent = move
    if kind == "add":
        return ("delete", child, parent)
    if kind == "delete":
        return ("add", child, parent)
    return ("reverse", parent, child)


def _randomize_start(state: _State, rng: np.random.Generator, density: float) -> None:
    pairs = [(i, j) for i in range(state.n) for j in range(state.n) if i != j]
    order = rng.permutation(len(pairs))
    for k in order:
        child, parent = pairs[k]
        if rng.random() >= density or state.has_arc(child, parent):
            continue
        new = state.masks[child] | (1 << parent)
        if state.has_entry(child, new) and not state.path_exists(child, parent):
            state.apply(("add", child, parent))


def _run_restart(
    cache: ScoreCache,
    prior: StructuralPrior,
    score_type: str,
    config: HeuristicConfig,
    restart_index: int,
) -> RestartTrace:
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(restart_index,))
    )
    state = _State(cache, prior, score_type)
    _randomize_start(state, rng, config.init_density)

    best_score = state.total()
    best_masks = list(state.masks)
    trail = [best_score]

    if config.algorithm == "hill_climb":
        for _ in range(config.max_steps):
            moves = state.valid_moves()
            chosen, delta = None, 0.0
            for move, d in moves:
                if d > delta:
                    chosen, delta = move, d
            if chosen is None:
                break
            state.apply(chosen)
            best_score = state.total()
            best_masks = list(state.masks)
            trail.append(best_score)
    elif config.algorithm == "tabu":
        tabu: deque[Move] = deque(maxlen=config.tabu_length)
        for _ in range(config.max_steps):
            moves = state.valid_moves()
            current = state.total()
            chosen, chosen_delta = None, -math.inf
            for move, d in moves:
                admissible = move not in tabu or current + d > best_score
                if admissible and d > chosen_delta:
                    chosen, chosen_delta = move, d
            if chosen is None:
                break
            tabu.append(_inverse(chosen))
            state.apply(chosen)
            if state.total() > best_score:
                best_score = state.total()
                best_masks = list(state.masks)
            trail.append(best_score)
    else:  # simulated annealing
        temperature = config.initial_temperature
        for _ in range(config.max_steps):
            moves = state.valid_moves()
            if not moves:
                break
            move, delta = moves[rng.integers(len(moves))]
            if delta >= 0 or rng.random() < math.exp(delta / temperature):
                state.apply(move)
                if state.total() > best_score:
                    best_score = state.total()
                    best_masks = list(state.masks)
            temperature *= config.cooling_factor
            trail.append(best_score)

    final = _State(cache, prior, score_type)
    final.masks = best_masks
    final.node_scores = [final._score(i, m) for i, m in enumerate(best_masks)]
    return RestartTrace(dag=final.dag(), score=best_score, best_scores=tuple(trail))


def _restart_worker(args):
    return _run_restart(*args)


def heuristic_search(
    cache: ScoreCache,
    constraints: ConstraintSet | None = None,
    config: HeuristicConfig = HeuristicConfig(),
    prior: StructuralPrior = StructuralPrior("uninformative"),
    score_type: str | None = None,
    jobs: int = 1,
) -> SearchTrace:
    """Run the configured stochastic search, one trace per restart.

    Constraints are taken from the cache itself (parent sets outside it are
    never reachable); passing ``constraints`` merely asserts they match.
    Each restart draws from a generator derived from (seed, restart index),
    so a fixed seed reproduces the trace bit for bit, restarts may run in
    parallel, and traces merge deterministically by index.
    """
    if cache.n_entries == 0:
        raise EmptyCache("score cache has no entries")
    if constraints is not None and constraints.nodes != cache.nodes:
        raise NodeSetMismatch("constraint node set differs from cache")
    score_type = score_type or cache.default_score_type()
    tasks = [(cache, prior, score_type, config, k) for k in range(config.restarts)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_restart_worker, tasks))
    else:
        traces = [_restart_worker(t) for t in tasks]
    return SearchTrace(restarts=tuple(traces), score_type=score_type)


# --------------------------------------------------------------------------
# consensus and cycle repair
# --------------------------------------------------------------------------


def arc_frequency_matrix(dags: list[Dag]) -> np.ndarray:
    if not dags:
        raise NodeSetMismatch("need at least one DAG")
    nodes = dags[0].nodes
    for d in dags:
        if d.nodes != nodes:
            raise NodeSetMismatch("all DAGs must share one node set")
    freq = np.zeros((len(nodes), len(nodes)))
    for d in dags:
        freq += d.adjacency
    return freq / len(dags)


def majority_consensus(
    dags: list[Dag], threshold: float = 0.5, mode: str = "directed"
) -> tuple[np.ndarray, np.ndarray]:
    """Arc-frequency consensus over candidate structures.

    Returns ``(kept, frequency)`` where ``kept`` holds the arcs whose support
    meets the threshold.  Directed mode counts each direction separately and
    may produce a cyclic matrix (see :func:`repair_to_dag`); undirected mode
    sums both directions and returns a symmetric matrix.
    """
    freq = arc_frequency_matrix(dags)
    if mode == "directed":
        kept = (freq >= threshold).astype(np.int8)
    elif mode == "undirected":
        und = freq + freq.T
        kept = ((und >= threshold) & ~np.eye(len(freq), dtype=bool)).astype(np.int8)
    else:
        raise ValueError(f"unknown consensus mode {mode!r}")
    return kept, freq


def repair_to_dag(matrix, frequencies, nodes) -> Dag:
    """Break every cycle of a consensus matrix, guided by arc frequencies.

    While a cycle exists, the lowest-frequency arc on it is reversed; when
    the reversed arc would immediately close another cycle the arc is
    deleted instead.  The result is acyclic and every surviving arc is an
    input arc or the reversal of one.
    """
    m = np.array(matrix, dtype=np.int8)
    freq = np.asarray(frequencies, dtype=float)
    n = m.shape[0]
    budget = 4 * int(m.sum()) + 4
    for _ in range(budget):
        cycle = find_cycle(m)
        if cycle is None:
            break
        # path of child->parent hops; arcs point parent -> child
        arcs = []
        for k, child in enumerate(cycle):
            parent = cycle[(k + 1) % len(cycle)]
            if m[child, parent]:
                arcs.append((child, parent))
        child, parent = min(arcs, key=lambda a: (freq[a[0], a[1]], a[0], a[1]))
        m[child, parent] = 0
        if m[parent, child]:
            continue  # two-cycle: the higher-frequency direction survives
        # reversal closes a cycle iff some path child -> ... -> parent remains
        if not _path(m, child, parent):
            m[parent, child] = 1
    else:
        # safety: delete remaining cycle arcs outright
        while (cycle := find_cycle(m)) is not None:
            child = cycle[0]
            parent = cycle[1 % len(cycle)]
            m[child, parent] = 0
    return Dag(nodes, m)


def _path(m: np.ndarray, start: int, goal: int) -> bool:
    stack = [start]
    seen = {start}
    while stack:
        cur = stack.pop()
        if cur == goal:
            return True
        for child in np.flatnonzero(m[:, cur]):
            child = int(child)
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return False
