"""Random DAG generation, grid-posterior sampling, and forward simulation.

Data are simulated by ancestral sampling: nodes are visited in topological
order and each draws from its family with linear predictor
``intercept + sum(coef * parent value)`` on the link scale.  Parameter
uncertainty enters through categorical draws from per-parameter posterior
grids, which makes replicate draws exact and independent (no burn-in or
thinning needed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dag import Dag, topological_order
from .data import Dataset
from .errors import AbnError, PoissonOverflow
from .families import check_family

POISSON_MEAN_GUARD = 1e9


def simulate_dag(n_nodes: int, arc_probability: float, seed: int) -> Dag:
    """Random DAG: uniform node permutation, then each permitted
    earlier-to-later arc included independently with ``arc_probability``.

    Acyclic by construction; the label permutation ensures node order
    carries no information about the topology.
    """
    if not 0.0 <= arc_probability <= 1.0:
        raise AbnError("arc_probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    names = tuple(f"v{i + 1}" for i in range(n_nodes))
    perm = rng.permutation(n_nodes)
    adjacency = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    # position in `perm` is the causal order; arcs go earlier -> later
    for later in range(n_nodes):
        for earlier in range(later):
            if rng.random() < arc_probability:
                adjacency[perm[later], perm[earlier]] = 1
    return Dag(names, adjacency)


@dataclass(frozen=True)
class GridPosterior:
    """Discretized posteriors: per parameter a grid and its probabilities."""

    node: str
    labels: tuple[str, ...]
    grids: tuple[np.ndarray, ...]
    probabilities: tuple[np.ndarray, ...]

    def __post_init__(self):
        for label, probs in zip(self.labels, self.probabilities):
            p = np.asarray(probs, dtype=float)
            if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-8):
                raise AbnError(f"grid probabilities of {label!r} must sum to 1")


def sample_posterior_params(
    grids: GridPosterior, seed: int | np.random.Generator
) -> dict[str, float]:
    """One independent categorical draw per parameter from its grid."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draw = {}
    for label, grid, probs in zip(grids.labels, grids.grids, grids.probabilities):
        grid = np.asarray(grid, dtype=float)
        if len(grid) == 1:  # degenerate grid is legal: the draw is that point
            draw[label] = float(grid[0])
            continue
        draw[label] = float(rng.choice(grid, p=np.asarray(probs, dtype=float)))
    return draw


@dataclass(frozen=True)
class SimSpec:
    """Everything needed to forward-simulate one dataset.

    ``coefficients[node]`` maps ``(Intercept)`` and each parent name to its
    coefficient on the link scale; gaussian nodes also need ``sd``.
    """

    dag: Dag
    families: dict[str, str]
    coefficients: dict[str, dict[str, float]]
    sd: dict[str, float] = field(default_factory=dict)
    n_obs: int = 100
    seed: int = 0

    def __post_init__(self):
        for node in self.dag.nodes:
            fam = check_family(self.families[node])
            coefs = self.coefficients[node]
            expected = {"(Intercept)", *self.dag.parents(node)}
            if set(coefs) != expected:
                raise AbnError(
                    f"node {node!r} needs coefficients for exactly {sorted(expected)}"
                )
            if fam == "gaussian":
                if self.sd.get(node, 0.0) <= 0.0:
                    raise AbnError(f"gaussian node {node!r} needs a positive sd")
        if self.n_obs < 1:
            raise AbnError("n_obs must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": list(self.dag.nodes),
                "adjacency": self.dag.adjacency.tolist(),
                "families": self.families,
                "coefficients": self.coefficients,
                "sd": self.sd,
                "n_obs": self.n_obs,
                "seed": self.seed,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "SimSpec":
        raw = json.loads(text)
        return SimSpec(
            dag=Dag(raw["nodes"], np.array(raw["adjacency"], dtype=np.int8)),
            families={k: str(v) for k, v in raw["families"].items()},
            coefficients={
                node: {k: float(v) for k, v in coefs.items()}
                for node, coefs in raw["coefficients"].items()
            },
            sd={k: float(v) for k, v in raw.get("sd", {}).items()},
            n_obs=int(raw["n_obs"]),
            seed=int(raw["seed"]),
        )


def simulate_data(spec: SimSpec) -> Dataset:
    """Ancestral sampling of ``spec.n_obs`` observations.

    binomial -> Bernoulli(expit eta), poisson -> Poisson(exp eta), gaussian
    -> Normal(eta, sd).  A poisson mean beyond the overflow guard aborts the
    draw with a diagnostic rather than fabricating counts.
    """
    rng = np.random.default_rng(spec.seed)
    dag = spec.dag
    values = np.zeros((spec.n_obs, dag.n_nodes))
    for node in topological_order(dag):
        i = dag.index(node)
        coefs = spec.coefficients[node]
        eta = np.full(spec.n_obs, coefs["(Intercept)"])
        for parent in dag.parents(node):
            eta += coefs[parent] * values[:, dag.index(parent)]
        fam = spec.families[node]
        if fam == "binomial":
            values[:, i] = rng.random(spec.n_obs) < expit(eta)
        elif fam == "poisson":
            with np.errstate(over="ignore"):
                mean = np.exp(eta)
            if np.any(~np.isfinite(mean)) or np.any(mean > POISSON_MEAN_GUARD):
                raise PoissonOverflow(
                    f"poisson node {node!r} has mean beyond {POISSON_MEAN_GUARD:g}; "
                    "check coefficients"
                )
            values[:, i] = rng.poisson(mean)
        else:
            values[:, i] = rng.normal(eta, spec.sd[node])
    return Dataset(
        names=dag.nodes,
        columns=values,
        distributions=tuple(spec.families[v] for v in dag.nodes),
    )
