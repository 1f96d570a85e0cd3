"""Dataset ingestion, validation, standardization and design matrices.

Supported node distributions: binomial (two levels, coded 0/1), gaussian
(continuous) and poisson (nonnegative counts).  Data must be complete;
missing values are rejected at load rather than silently dropped.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dag import check_node_names
from .errors import (
    BadLevelCount,
    DataError,
    MissingColumn,
    MissingValue,
    NegativeCount,
    SelfParent,
    UnknownName,
    ZeroVariance,
)

DISTRIBUTIONS = ("binomial", "gaussian", "poisson")

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class Dataset:
    """Validated, fully numeric dataset with one declared family per column."""

    names: tuple[str, ...]
    columns: np.ndarray = field(repr=False)  # (n_obs, n_cols) float64
    distributions: tuple[str, ...]
    group_var: str | None = None
    group_values: tuple[str, ...] | None = None
    transforms: dict = field(default_factory=dict)  # name -> (mean, sd)
    standardized: bool = False

    def __post_init__(self):
        check_node_names(self.names)
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim != 2 or cols.shape[1] != len(self.names):
            raise DataError(f"column block shape {cols.shape} does not match names")
        if cols.shape[0] == 0:
            raise DataError("dataset has no observations")
        if not np.all(np.isfinite(cols)):
            raise MissingValue("dataset contains non-finite values")
        for j, (name, dist) in enumerate(zip(self.names, self.distributions)):
            if dist not in DISTRIBUTIONS:
                raise DataError(f"unknown distribution {dist!r} for column {name!r}")
            col = cols[:, j]
            if dist == "binomial":
                if not np.all((col == 0) | (col == 1)):
                    raise BadLevelCount(
                        f"binomial column {name!r} must be coded 0/1"
                    )
            elif dist == "poisson":
                if np.any(col < 0) or np.any(col != np.floor(col)):
                    raise NegativeCount(
                        f"poisson column {name!r} must hold nonnegative integers"
                    )
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def n_obs(self) -> int:
        return self.columns.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownName(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.columns[:, self.index(name)]

    def distribution(self, name: str) -> str:
        return self.distributions[self.index(name)]

    def dist_map(self) -> dict[str, str]:
        return dict(zip(self.names, self.distributions))

    def fingerprint(self) -> str:
        """Stable hash of values + declared distributions.

        Changes iff the data or the distribution spec changes; used to detect
        stale score caches.
        """
        h = hashlib.sha256()
        for name, dist in zip(self.names, self.distributions):
            h.update(f"{name}={dist};".encode())
        h.update(b"std=1;" if self.standardized else b"std=0;")
        h.update(np.ascontiguousarray(self.columns, dtype=np.float64).tobytes())
        return h.hexdigest()

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = list(self.names)
        if self.group_var is not None:
            header.append(self.group_var)
        writer.writerow(header)
        for r in range(self.n_obs):
            row = [_format_cell(self.columns[r, j], self.distributions[j])
                   for j in range(len(self.names))]
            if self.group_var is not None:
                row.append(self.group_values[r])
            writer.writerow(row)
        return buf.getvalue()


def _format_cell(value: float, dist: str) -> str:
    if dist in ("binomial", "poisson"):
        return str(int(value))
    return repr(float(value))


def parse_dist_spec(text: str) -> tuple[dict[str, str], str | None]:
    """Parse a ``column=distribution`` spec file.

    One assignment per line; ``#`` starts a comment; the reserved key
    ``group_var`` names an optional grouping column carried as metadata.
    """
    dists: dict[str, str] = {}
    group_var = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"dist spec line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip().lower()
        if key == "group_var":
            group_var = value if value else None
            continue
        if value not in DISTRIBUTIONS:
            raise DataError(
                f"dist spec line {lineno}: {value!r} is not one of {DISTRIBUTIONS}"
            )
        dists[key] = value
    if not dists:
        raise DataError("dist spec declares no columns")
    return dists, group_var


def format_dist_spec(dists: Mapping[str, str], group_var: str | None = None) -> str:
    lines = [f"{k}={v}" for k, v in dists.items()]
    if group_var:
        lines.append(f"group_var={group_var}")
    return "\n".join(lines) + "\n"


def load_dataset(
    path,
    dist_spec: Mapping[str, str] | str | Path,
    group_var: str | None = None,
    delimiter: str = ",",
) -> Dataset:
    """Read a delimited text file with header into a validated Dataset.

    ``dist_spec`` maps every modeled column to a distribution; it may also be
    the path of a spec file.  Two-level string columns declared binomial are
    mapped to {0, 1} with the lexicographically first level as 0.  The file
    may contain the grouping column; any other undeclared column is an error.
    """
    if isinstance(dist_spec, (str, Path)):
        dists, spec_group = parse_dist_spec(Path(dist_spec).read_text())
        group_var = group_var or spec_group
    else:
        dists = dict(dist_spec)

    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text), delimiter=delimiter))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    for col in dists:
        if col not in header:
            raise MissingColumn(f"declared column {col!r} not found in {path}")
    if group_var is not None and group_var not in header:
        raise MissingColumn(f"group_var {group_var!r} not found in {path}")
    for col in header:
        if col not in dists and col != group_var:
            raise MissingColumn(
                f"column {col!r} in {path} is not named in the dist spec"
            )

    # keep file column order for the modeled variables
    names = tuple(c for c in header if c in dists)
    col_pos = {c: header.index(c) for c in header}
    n_obs = len(rows) - 1
    raw: dict[str, list[str]] = {c: [] for c in names}
    group_values: list[str] = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for c in names:
            raw[c].append(row[col_pos[c]].strip())
        if group_var is not None:
            group_values.append(row[col_pos[group_var]].strip())

    columns = np.empty((n_obs, len(names)), dtype=float)
    for j, name in enumerate(names):
        columns[:, j] = _decode_column(name, raw[name], dists[name])

    return Dataset(
        names=names,
        columns=columns,
        distributions=tuple(dists[c] for c in names),
        group_var=group_var,
        group_values=tuple(group_values) if group_var is not None else None,
    )


def _decode_column(name: str, cells: list[str], dist: str) -> np.ndarray:
    for cell in cells:
        if cell.lower() in _MISSING_TOKENS:
            raise MissingValue(f"column {name!r} contains a missing value")
    numeric = True
    values = np.empty(len(cells))
    try:
        for i, cell in enumerate(cells):
            values[i] = float(cell)
    except ValueError:
        numeric = False

    if dist == "binomial":
        if numeric:
            levels = np.unique(values)
        else:
            text_levels = sorted(set(cells))
            if len(text_levels) != 2:
                raise BadLevelCount(
                    f"binomial column {name!r} has {len(text_levels)} levels: {text_levels}"
                )
            mapping = {text_levels[0]: 0.0, text_levels[1]: 1.0}
            return np.array([mapping[c] for c in cells])
        if len(levels) != 2 or set(levels) != {0.0, 1.0}:
            raise BadLevelCount(
                f"binomial column {name!r} must have exactly the levels 0 and 1, "
                f"found {levels.tolist()}"
            )
        return values
    if not numeric:
        raise DataError(f"column {name!r} declared {dist} but is not numeric")
    if dist == "poisson":
        if np.any(values < 0):
            raise NegativeCount(f"poisson column {name!r} contains negative values")
        if np.any(values != np.floor(values)):
            raise NegativeCount(f"poisson column {name!r} contains non-integers")
    return values


def standardize(ds: Dataset) -> Dataset:
    """Center and scale every gaussian column to mean 0, sd 1.

    Other columns pass through bit-for-bit.  The (mean, sd) pair per column
    is retained for mapping fitted coefficients back to the raw scale.
    """
    columns = np.array(ds.columns)
    transforms = dict(ds.transforms)
    for j, (name, dist) in enumerate(zip(ds.names, ds.distributions)):
        if dist != "gaussian":
            continue
        mean = float(columns[:, j].mean())
        sd = float(columns[:, j].std(ddof=1)) if ds.n_obs > 1 else 0.0
        if sd == 0.0:
            raise ZeroVariance(f"gaussian column {name!r} is constant")
        columns[:, j] = (columns[:, j] - mean) / sd
        transforms[name] = (mean, sd)
    return Dataset(
        names=ds.names,
        columns=columns,
        distributions=ds.distributions,
        group_var=ds.group_var,
        group_values=ds.group_values,
        transforms=transforms,
        standardized=True,
    )


@dataclass(frozen=True)
class DesignMatrix:
    """Response vector plus predictor block for one node's regression.

    Predictors always lead with an all-ones intercept column; parent columns
    follow in canonical (lexicographic) name order.
    """

    response: np.ndarray
    predictors: np.ndarray
    labels: tuple[str, ...]
    child: str
    family: str

    @property
    def n_obs(self) -> int:
        return self.response.shape[0]

    @property
    def width(self) -> int:
        return self.predictors.shape[1]

    def drop(self, label: str) -> "DesignMatrix":
        """Design with one predictor column removed (never the intercept)."""
        if label == "(Intercept)" or label not in self.labels:
            raise UnknownName(f"cannot drop predictor {label!r}")
        keep = [k for k, lab in enumerate(self.labels) if lab != label]
        return DesignMatrix(
            response=self.response,
            predictors=self.predictors[:, keep],
            labels=tuple(self.labels[k] for k in keep),
            child=self.child,
            family=self.family,
        )


def build_design(ds: Dataset, child: str, parent_set: Sequence[str]) -> DesignMatrix:
    parents = list(parent_set)
    if child in parents:
        raise SelfParent(f"{child!r} cannot be its own parent")
    if len(set(parents)) != len(parents):
        raise UnknownName(f"duplicate parent names in {parents}")
    order = sorted(parents)
    y = ds.column(child)
    block = np.ones((ds.n_obs, 1 + len(order)))
    for k, p in enumerate(order, start=1):
        block[:, k] = ds.column(p)
    return DesignMatrix(
        response=y,
        predictors=block,
        labels=("(Intercept)", *order),
        child=child,
        family=ds.distribution(child),
    )


def design_for_mask(ds: Dataset, child_index: int, parent_mask: int) -> DesignMatrix:
    """Design matrix for a parent set given as a bitmask over column indices."""
    parents = [ds.names[j] for j in range(len(ds.names)) if parent_mask >> j & 1]
    return build_design(ds, ds.names[child_index], parents)
