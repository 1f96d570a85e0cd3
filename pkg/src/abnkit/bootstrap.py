"""Parametric-bootstrap control of structure over-fitting.

Given a fitted model, each replicate samples parameters from the grid
posteriors, forward-simulates a dataset of the original size, re-learns the
optimal structure with the same constraints, and records the selected DAG.
Aggregated arc support then prunes the original DAG: arcs recovered in fewer
than the threshold fraction of replicates are treated as over-fitting.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cache import build_cache
from .dag import ConstraintSet, Dag
from .data import Dataset, build_design, standardize
from .errors import AbnError, NodeSetMismatch
from .exact import StructuralPrior, best_parents_table, most_probable_dag
from .glm import FitResult, PriorSpec, marginal_densities
from .simulate import GridPosterior, SimSpec, sample_posterior_params, simulate_data

MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class BootstrapReport:
    n_replicates: int
    replicate_dags: tuple[Dag, ...]
    replicate_scores: tuple[float, ...]
    arc_counts: tuple[int, ...]
    support: np.ndarray = field(repr=False)
    pruned: Dag = None
    threshold: float = 0.5
    mode: str = "directed"
    failures: tuple[tuple[int, str], ...] = ()


def model_grid_posteriors(
    ds: Dataset,
    dag: Dag,
    fits: dict[str, FitResult],
    priors: PriorSpec | None = None,
    n_grid: int = 1000,
) -> dict[str, GridPosterior]:
    """Discretized marginal posteriors for every parameter of every node."""
    priors = priors or PriorSpec()
    grids = {}
    for node in dag.nodes:
        fit = fits[node]
        design = build_design(ds, node, dag.parents(node))
        dens = marginal_densities(fit, design, priors, n_grid=n_grid)
        grids[node] = GridPosterior(
            node=node,
            labels=tuple(d.label for d in dens),
            grids=tuple(d.grid for d in dens),
            probabilities=tuple(d.probabilities for d in dens),
        )
    return grids


def _draw_simspec(
    dag: Dag,
    families_map: dict[str, str],
    grids: dict[str, GridPosterior],
    n_obs: int,
    rng: np.random.Generator,
) -> SimSpec:
    coefficients: dict[str, dict[str, float]] = {}
    sd: dict[str, float] = {}
    for node in dag.nodes:
        draw = sample_posterior_params(grids[node], rng)
        lam = draw.pop("log_precision", None)
        coefficients[node] = draw
        if families_map[node] == "gaussian":
            sd[node] = 1.0 / math.sqrt(math.exp(lam))
    return SimSpec(
        dag=dag,
        families=families_map,
        coefficients=coefficients,
        sd=sd,
        n_obs=n_obs,
        seed=int(rng.integers(2**63)),
    )


def _one_replicate(args):
    (k, dag, families_map, grids, n_obs, seed, constraints, priors,
     prior_kind) = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
    try:
        spec = _draw_simspec(dag, families_map, grids, n_obs, rng)
        replicate = simulate_data(spec)
        if any(d == "gaussian" for d in replicate.distributions):
            replicate = standardize(replicate)
        cache = build_cache(replicate, constraints, method="bayes", priors=priors)
        for i in range(cache.n_nodes):
            if not np.any(np.isfinite(cache.scores[i])):
                raise AbnError(
                    f"node {cache.nodes[i]!r} has -inf scores for every parent set"
                )
        table = best_parents_table(cache, StructuralPrior(prior_kind))
        selected, _ = most_probable_dag(table)
        score = cache.dag_score(selected)
        return k, selected.adjacency, score, None
    except AbnError as exc:
        return k, None, None, f"{type(exc).__name__}: {exc}"


def run_bootstrap(
    fits: dict[str, FitResult],
    dag: Dag,
    ds: Dataset,
    constraints: ConstraintSet | None = None,
    n_replicates: int = 200,
    seed: int = 0,
    priors: PriorSpec | None = None,
    structural_prior: str = "koivisto",
    threshold: float = 0.5,
    mode: str = "directed",
    n_grid: int = 1000,
    jobs: int = 1,
) -> BootstrapReport:
    """Full bootstrap pipeline for a fitted model.

    Replicate datasets match the original's size; replicate searches reuse
    the original constraints and structural prior.  Individual replicate
    failures are logged and excluded, but more than 5% of them abort the
    run.  The whole pipeline is a pure function of ``seed``.
    """
    if dag.nodes != ds.names:
        raise NodeSetMismatch("DAG node set differs from dataset columns")
    priors = priors or PriorSpec()
    if constraints is None:
        constraints = ConstraintSet(ds.names)
    grids = model_grid_posteriors(ds, dag, fits, priors, n_grid=n_grid)
    families_map = ds.dist_map()
    tasks = [
        (k, dag, families_map, grids, ds.n_obs, seed, constraints, priors,
         structural_prior)
        for k in range(n_replicates)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replicate, tasks))
    else:
        results = [_one_replicate(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    dags: list[Dag] = []
    scores: list[float] = []
    failures: list[tuple[int, str]] = []
    for k, adjacency, score, err in results:
        if err is not None:
            failures.append((k, err))
            continue
        dags.append(Dag(ds.names, adjacency))
        scores.append(score)
    if len(failures) > MAX_FAILURE_FRACTION * n_replicates:
        raise AbnError(
            f"{len(failures)}/{n_replicates} bootstrap replicates failed; "
            f"first: {failures[0][1]}"
        )
    support = arc_support_matrix(dags)[0]
    pruned = prune_by_support(dag, support, threshold=threshold, mode=mode)
    return BootstrapReport(
        n_replicates=n_replicates,
        replicate_dags=tuple(dags),
        replicate_scores=tuple(scores),
        arc_counts=tuple(d.n_arcs for d in dags),
        support=support,
        pruned=pruned,
        threshold=threshold,
        mode=mode,
        failures=tuple(failures),
    )


def arc_support_matrix(dags: list[Dag]) -> tuple[np.ndarray, np.ndarray]:
    """Directed arc frequencies over DAGs, plus the undirected variant
    (sum of both directions)."""
    if not dags:
        raise NodeSetMismatch("need at least one DAG")
    nodes = dags[0].nodes
    for d in dags:
        if d.nodes != nodes:
            raise NodeSetMismatch("all DAGs must share one node set")
    directed = np.zeros((len(nodes), len(nodes)))
    for d in dags:
        directed += d.adjacency
    directed /= len(dags)
    return directed, directed + directed.T


def prune_by_support(
    original: Dag,
    support: np.ndarray,
    threshold: float = 0.5,
    mode: str = "directed",
) -> Dag:
    """Keep only original arcs whose bootstrap support meets the threshold.

    Directed mode uses each arc's own frequency; undirected mode credits an
    arc with the support of both directions.  The result is a subgraph of
    the original, hence automatically acyclic.
    """
    support = np.asarray(support, dtype=float)
    if mode == "directed":
        effective = support
    elif mode == "undirected":
        effective = support + support.T
    else:
        raise ValueError(f"unknown pruning mode {mode!r}")
    keep = original.adjacency.astype(bool) & (effective >= threshold)
    return Dag(original.nodes, keep.astype(np.int8))
