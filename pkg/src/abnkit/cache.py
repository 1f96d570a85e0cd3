"""Parent-set enumeration and score caching.

For every node, all parent sets compatible with the constraints (retained
subset, banned excluded, cardinality limit) are enumerated as bitmasks over
the node index order and scored once.  The cache is the single input of both
search backends; a dataset fingerprint guards against scoring one dataset
and searching another.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dag import ConstraintSet, Dag
from .data import Dataset, design_for_mask
from .errors import (
    AbnError,
    CacheMismatch,
    RetainedExceedsLimit,
    UnenumeratedParentSet,
)
from .formula import parse_formula, render_formula
from .glm import PriorSpec, fit_node, frequentist_scores

BAYES_SCORES = ("mlik",)
MLE_SCORES = ("loglik", "aic", "bic", "mdl")


def enumerate_parent_sets(
    node: int, constraints: ConstraintSet, n_nodes: int
) -> list[int]:
    """All constraint-valid parent sets of one node, as ascending bitmasks.

    Valid means: contains the retained parents, avoids banned parents and the
    node itself, and stays within the node's cardinality limit.
    """
    if n_nodes > 64:
        raise AbnError("parent-set bitmasks support at most 64 nodes")
    retained = [j for j in range(n_nodes) if constraints.retained[node, j]]
    base = 0
    for j in retained:
        base |= 1 << j
    limit = constraints.max_parents[node]
    if len(retained) > limit:
        raise RetainedExceedsLimit(
            f"node {constraints.nodes[node]!r} retains more parents than allowed"
        )
    free = [
        j
        for j in range(n_nodes)
        if j != node and not constraints.banned[node, j] and not constraints.retained[node, j]
    ]
    masks = []
    for extra in range(0, limit - len(retained) + 1):
        for combo in combinations(free, extra):
            mask = base
            for j in combo:
                mask |= 1 << j
            masks.append(mask)
    return sorted(masks)


@dataclass(frozen=True)
class ScoreCache:
    """Immutable map (node, parent set) -> score vector.

    ``masks[i]`` lists node i's enumerated parent sets in ascending bitmask
    order; ``scores[i]`` is the aligned (n_sets, n_score_types) block.
    Failed fits carry -inf scores and a diagnostic message.
    """

    nodes: tuple[str, ...]
    distributions: tuple[str, ...]
    method: str
    score_types: tuple[str, ...]
    fingerprint: str
    constraints: ConstraintSet
    masks: tuple[np.ndarray, ...] = field(repr=False)
    scores: tuple[np.ndarray, ...] = field(repr=False)
    diagnostics: tuple[tuple[int, int, str], ...] = ()

    def __post_init__(self):
        lookup = []
        for node_masks in self.masks:
            lookup.append({int(m): k for k, m in enumerate(node_masks)})
        object.__setattr__(self, "_lookup", tuple(lookup))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_entries(self) -> int:
        return sum(len(m) for m in self.masks)

    def score_index(self, score_type: str) -> int:
        try:
            return self.score_types.index(score_type)
        except ValueError:
            raise AbnError(
                f"score type {score_type!r} not in cache (has {self.score_types})"
            ) from None

    def default_score_type(self) -> str:
        return "mlik" if self.method == "bayes" else "bic"

    def has_entry(self, node: int, mask: int) -> bool:
        return mask in self._lookup[node]

    def entry_row(self, node: int, mask: int) -> int:
        try:
            return self._lookup[node][mask]
        except KeyError:
            raise UnenumeratedParentSet(
                f"parent set {mask:#x} of node {self.nodes[node]!r} was never enumerated"
            ) from None

    def score(self, node: int, mask: int, score_type: str | None = None) -> float:
        st = self.score_index(score_type or self.default_score_type())
        return float(self.scores[node][self.entry_row(node, mask), st])

    def score_vector(self, node: int, score_type: str | None = None) -> np.ndarray:
        st = self.score_index(score_type or self.default_score_type())
        return self.scores[node][:, st]

    def check_dataset(self, ds: Dataset) -> None:
        if ds.fingerprint() != self.fingerprint:
            raise CacheMismatch(
                "dataset fingerprint does not match the score cache; rebuild the cache"
            )

    def dag_score(self, dag: Dag, score_type: str | None = None) -> float:
        """Decomposable total: sum of per-node scores over the DAG's parent sets."""
        if dag.nodes != self.nodes:
            raise CacheMismatch("DAG node set differs from cache")
        total = 0.0
        for i, mask in enumerate(dag.parent_masks()):
            total += self.score(i, mask, score_type)
        return total


def _score_one_node(
    ds: Dataset,
    node: int,
    node_masks: list[int],
    method: str,
    priors: PriorSpec,
    score_types: tuple[str, ...],
) -> tuple[np.ndarray, list[tuple[int, int, str]]]:
    n_cand = len(ds.names) - 1
    block = np.full((len(node_masks), len(score_types)), -np.inf)
    notes: list[tuple[int, int, str]] = []
    for k, mask in enumerate(node_masks):
        design = design_for_mask(ds, node, mask)
        try:
            fit = fit_node(design, method=method, priors=priors)
            if method == "bayes":
                block[k, 0] = fit.mlik
            else:
                fs = frequentist_scores(fit, ds.n_obs, n_cand)
                block[k] = (fs.loglik, fs.aic, fs.bic, fs.mdl)
        except (AbnError, np.linalg.LinAlgError, ValueError) as exc:
            notes.append((node, mask, f"{type(exc).__name__}: {exc}"))
        if not np.all(np.isfinite(block[k])):
            block[k] = -np.inf
            if not notes or notes[-1][:2] != (node, mask):
                notes.append((node, mask, "non-finite score"))
    return block, notes


def _worker(args):
    return _score_one_node(*args)


def build_cache(
    ds: Dataset,
    constraints: ConstraintSet | None = None,
    method: str = "bayes",
    priors: PriorSpec | None = None,
    jobs: int = 1,
) -> ScoreCache:
    """Score every constraint-valid (node, parent set) pair.

    The build is embarrassingly parallel across nodes; output ordering is
    fixed by the enumeration, not by worker scheduling, so repeated builds
    are byte-identical.  Individual fit failures are recorded as -inf scores
    and never abort the build.
    """
    if method not in ("bayes", "mle"):
        raise AbnError(f"unknown method {method!r}")
    if constraints is None:
        constraints = ConstraintSet(ds.names)
    if constraints.nodes != ds.names:
        raise CacheMismatch("constraint node set differs from dataset columns")
    priors = priors or PriorSpec()
    score_types = BAYES_SCORES if method == "bayes" else MLE_SCORES
    n = len(ds.names)
    all_masks = [enumerate_parent_sets(i, constraints, n) for i in range(n)]

    tasks = [(ds, i, all_masks[i], method, priors, score_types) for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]

    diagnostics: list[tuple[int, int, str]] = []
    blocks = []
    for block, notes in results:
        blocks.append(block)
        diagnostics.extend(notes)
    return ScoreCache(
        nodes=ds.names,
        distributions=ds.distributions,
        method=method,
        score_types=score_types,
        fingerprint=ds.fingerprint(),
        constraints=constraints,
        masks=tuple(np.array(m, dtype=np.int64) for m in all_masks),
        scores=tuple(blocks),
        diagnostics=tuple(diagnostics),
    )


# --------------------------------------------------------------------------
# portable text serialization
# --------------------------------------------------------------------------

_CACHE_MAGIC = "# abnkit score cache v1"


def cache_to_text(cache: ScoreCache) -> str:
    lines = [
        _CACHE_MAGIC,
        f"fingerprint={cache.fingerprint}",
        f"method={cache.method}",
        f"score_types={','.join(cache.score_types)}",
        f"nodes={','.join(cache.nodes)}",
        f"distributions={','.join(cache.distributions)}",
        f"max_parents={','.join(str(v) for v in cache.constraints.max_parents)}",
        f"banned={render_formula(cache.constraints.banned, cache.nodes)}",
        f"retained={render_formula(cache.constraints.retained, cache.nodes)}",
    ]
    for i in range(cache.n_nodes):
        for k, mask in enumerate(cache.masks[i]):
            for s, st in enumerate(cache.score_types):
                lines.append(f"{i}\t{int(mask)}\t{st}\t{cache.scores[i][k, s]:.17g}")
    for node, mask, message in cache.diagnostics:
        lines.append(f"# diag\t{node}\t{mask}\t{message}")
    return "\n".join(lines) + "\n"


def cache_from_text(text: str) -> ScoreCache:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _CACHE_MAGIC:
        raise CacheMismatch("not a score cache file")
    header: dict[str, str] = {}
    body_start = 1
    for k, line in enumerate(lines[1:], start=1):
        if "=" not in line or line.startswith("#"):
            body_start = k
            break
        key, _, value = line.partition("=")
        header[key] = value
        body_start = k + 1
    nodes = tuple(header["nodes"].split(","))
    score_types = tuple(header["score_types"].split(","))
    constraints = ConstraintSet(
        nodes,
        banned=parse_formula(header["banned"], nodes),
        retained=parse_formula(header["retained"], nodes),
        max_parents=[int(v) for v in header["max_parents"].split(",")],
    )
    per_node: dict[int, dict[int, dict[str, float]]] = {i: {} for i in range(len(nodes))}
    diagnostics = []
    for line in lines[body_start:]:
        if not line.strip():
            continue
        if line.startswith("# diag\t"):
            _, node, mask, message = line.split("\t", 3)
            diagnostics.append((int(node), int(mask), message))
            continue
        node, mask, st, value = line.split("\t")
        per_node[int(node)].setdefault(int(mask), {})[st] = float(value)
    masks = []
    scores = []
    for i in range(len(nodes)):
        node_masks = sorted(per_node[i])
        block = np.full((len(node_masks), len(score_types)), -np.inf)
        for k, mask in enumerate(node_masks):
            for s, st in enumerate(score_types):
                block[k, s] = per_node[i][mask].get(st, -np.inf)
        masks.append(np.array(node_masks, dtype=np.int64))
        scores.append(block)
    return ScoreCache(
        nodes=nodes,
        distributions=tuple(header["distributions"].split(",")),
        method=header["method"],
        score_types=score_types,
        fingerprint=header["fingerprint"],
        constraints=constraints,
        masks=tuple(masks),
        scores=tuple(scores),
        diagnostics=tuple(diagnostics),
    )
