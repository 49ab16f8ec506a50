"""Survey dataset container, CSV ingestion, and weighted estimators.

A dataset is a columnar view of unit records: response, covariates,
base design weights, optional design metadata (strata, cluster draws,
cluster sizes, draw probabilities), and optionally a matrix of bootstrap
replicate weights.  Weighted proportion and two-way table estimators
live here because everything downstream (GOF, independence, regression
tests) consumes them.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError


class DesignKind(str, Enum):
    POISSON = "poisson"
    PPSWR = "ppswr"
    STRATIFIED_SRS = "stratified"
    TWO_STAGE_CLUSTER = "two-stage"


@dataclass(frozen=True)
class UnitRecord:
    """One sampled unit (a draw, for with-replacement designs)."""

    y: object
    x: np.ndarray
    w: float
    stratum_id: object | None = None
    cluster_id: object | None = None
    draw_index: int | None = None


@dataclass(frozen=True)
class BootstrapWeightMatrix:
    """Replicate weight columns, one per bootstrap replicate.

    weights[i, b] is the weight of unit record i in replicate b.  Zero
    entries are legitimate (units dropped by a replicate).
    """

    weights: np.ndarray
    master_seed: int
    design: DesignKind

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2:
            raise DataError("replicate weight matrix must be 2-dimensional")
        if not np.all(np.isfinite(w)):
            raise DataError("replicate weights must be finite")
        if np.any(w < 0):
            raise DataError("replicate weights must be nonnegative")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n_units(self) -> int:
        return self.weights.shape[0]

    @property
    def n_replicates(self) -> int:
        return self.weights.shape[1]


def _freeze(arr: np.ndarray | None) -> np.ndarray | None:
    if arr is None:
        return None
    out = np.asarray(arr)
    if out.dtype.kind == "f":
        out = out.astype(float)
    out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SurveyDataset:
    """Columnar sample with design metadata.

    population_size is the known number of units in the finite
    population (clusters excluded; see population_clusters).  It is
    authoritative: when the weights disagree with it by more than 10%
    a warning is emitted but the stated size wins.
    """

    y: np.ndarray
    x: np.ndarray
    weights: np.ndarray
    population_size: int
    design: DesignKind = DesignKind.POISSON
    stratum: np.ndarray | None = None
    cluster: np.ndarray | None = None
    cluster_size: np.ndarray | None = None
    draw_prob: np.ndarray | None = None
    draw_index: np.ndarray | None = None
    population_clusters: int | None = None
    replicate_weights: BootstrapWeightMatrix | None = None
    columns: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        y = _freeze(np.asarray(self.y))
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = _freeze(x)
        w = _freeze(np.asarray(self.weights, dtype=float))
        n = len(w)
        if len(y) != n or x.shape[0] != n:
            raise DataError("y, x, and weights must have equal length")
        if n == 0:
            raise DataError("dataset has no unit records")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("base weights must be finite and strictly positive")
        if int(self.population_size) < 1:
            raise DataError("population_size must be a known positive integer")
        object.__setattr__(self, "population_size", int(self.population_size))
        if self.design == DesignKind.POISSON and np.any(w < 1.0 - 1e-12):
            raise DataError(
                "Poisson design weights are reciprocal inclusion "
                "probabilities and must be >= 1"
            )
        if self.design == DesignKind.STRATIFIED_SRS and self.stratum is None:
            raise DataError("stratified design requires stratum labels")
        if self.design == DesignKind.TWO_STAGE_CLUSTER:
            if self.cluster is None or self.cluster_size is None:
                raise DataError(
                    "two-stage design requires cluster labels and cluster sizes"
                )
        for name in ("stratum", "cluster", "cluster_size", "draw_prob", "draw_index"):
            val = getattr(self, name)
            if val is not None:
                val = _freeze(np.asarray(val))
                if len(val) != n:
                    raise DataError(f"{name} must have one entry per unit record")
                object.__setattr__(self, name, val)
        if self.draw_prob is not None:
            dp = np.asarray(self.draw_prob, dtype=float)
            if np.any(dp <= 0) or np.any(dp > 1):
                raise DataError("draw probabilities must lie in (0, 1]")
        if self.replicate_weights is not None:
            if self.replicate_weights.n_units != n:
                raise DataError(
                    "replicate weight matrix row count must equal unit count"
                )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "weights", w)
        total = float(w.sum())
        if abs(total - self.population_size) > 0.10 * self.population_size:
            warnings.warn(
                "sum of base weights differs from population_size by more than 10%",
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    def unit(self, i: int) -> UnitRecord:
        return UnitRecord(
            y=self.y[i],
            x=self.x[i],
            w=float(self.weights[i]),
            stratum_id=None if self.stratum is None else self.stratum[i],
            cluster_id=None if self.cluster is None else self.cluster[i],
            draw_index=None if self.draw_index is None else int(self.draw_index[i]),
        )

    def __iter__(self) -> Iterator[UnitRecord]:
        return (self.unit(i) for i in range(self.n))

    def with_replicates(self, matrix: BootstrapWeightMatrix) -> "SurveyDataset":
        return replace(self, replicate_weights=matrix)


@dataclass(frozen=True)
class CellTable:
    """Weighted two-way proportion table with margins."""

    proportions: np.ndarray
    row_margins: np.ndarray
    col_margins: np.ndarray
    n: int
    row_categories: tuple = ()
    col_categories: tuple = ()

    def __post_init__(self):
        p = _freeze(np.asarray(self.proportions, dtype=float))
        if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] < 2:
            raise DataError("two-way table needs at least 2 rows and 2 columns")
        if np.any(p < 0):
            raise DataError("cell proportions must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise DataError("cell proportions must sum to 1")
        rm = _freeze(np.asarray(self.row_margins, dtype=float))
        cm = _freeze(np.asarray(self.col_margins, dtype=float))
        if np.max(np.abs(rm - p.sum(axis=1))) > 1e-12:
            raise DataError("row margins inconsistent with cells")
        if np.max(np.abs(cm - p.sum(axis=0))) > 1e-12:
            raise DataError("column margins inconsistent with cells")
        object.__setattr__(self, "proportions", p)
        object.__setattr__(self, "row_margins", rm)
        object.__setattr__(self, "col_margins", cm)

    @property
    def shape(self) -> tuple[int, int]:
        return self.proportions.shape


# ---------------------------------------------------------------------------
# category coding

def category_codes(values, categories: Sequence | None = None):
    """Integer-code a label array.

    Without a declared order, categories are indexed in order of first
    appearance.  With one, every observed value must be declared.
    Returns (codes, categories_tuple).
    """
    vals = list(values)
    if categories is None:
        cats: list = []
        index: dict = {}
        for v in vals:
            if v not in index:
                index[v] = len(cats)
                cats.append(v)
    else:
        cats = list(categories)
        index = {v: k for k, v in enumerate(cats)}
        for i, v in enumerate(vals):
            if v not in index:
                raise DataError(
                    f"value {v!r} at data row {i + 1} is not a declared category"
                )
    codes = np.array([index[v] for v in vals], dtype=np.intp)
    return codes, tuple(cats)


def weighted_proportions(data: SurveyDataset, categories: Sequence | None = None,
                         weights: np.ndarray | None = None,
                         values=None) -> np.ndarray:
    """Estimated category proportions p_hat_k = sum_{A_k} w_i / sum w_i."""
    vals = data.y if values is None else values
    codes, cats = category_codes(vals, categories)
    w = data.weights if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise DataError("weights sum to zero; proportions undefined")
    out = np.zeros(len(cats))
    np.add.at(out, codes, w)
    return out / total


def replicate_proportions(data: SurveyDataset, categories: Sequence | None = None,
                          matrix: BootstrapWeightMatrix | None = None,
                          values=None) -> np.ndarray:
    """Per-replicate proportions, shape (K, B).

    Replicates whose weights sum to zero come back as NaN columns; the
    caller decides whether to drop them.
    """
    mat = matrix if matrix is not None else data.replicate_weights
    if mat is None:
        raise DataError("no replicate weights available")
    vals = data.y if values is None else values
    codes, cats = category_codes(vals, categories)
    onehot = np.zeros((data.n, len(cats)))
    onehot[np.arange(data.n), codes] = 1.0
    totals = mat.weights.sum(axis=0)                      # (B,)
    raw = onehot.T @ mat.weights                          # (K, B)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(totals > 0, raw / totals, np.nan)
    return out


def _resolve_variable(data: SurveyDataset, var):
    if isinstance(var, str):
        if var not in data.columns:
            raise DataError(f"unknown column {var!r}")
        return np.asarray(data.columns[var])
    return np.asarray(var)


def weighted_two_way_table(data: SurveyDataset, row, col,
                           row_categories: Sequence | None = None,
                           col_categories: Sequence | None = None,
                           weights: np.ndarray | None = None) -> CellTable:
    """Weighted R x C proportion table for two categorical variables.

    row / col may be column names or aligned arrays.  Cells never seen
    in the data get proportion zero (position fixed by declared order).
    """
    rvals = _resolve_variable(data, row)
    cvals = _resolve_variable(data, col)
    rcodes, rcats = category_codes(rvals, row_categories)
    ccodes, ccats = category_codes(cvals, col_categories)
    R, C = len(rcats), len(ccats)
    if R < 2 or C < 2:
        raise DataError("two-way table needs at least 2 rows and 2 columns")
    w = data.weights if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise DataError("weights sum to zero; table undefined")
    p = np.zeros((R, C))
    np.add.at(p, (rcodes, ccodes), w)
    p /= total
    return CellTable(
        proportions=p,
        row_margins=p.sum(axis=1),
        col_margins=p.sum(axis=0),
        n=data.n,
        row_categories=rcats,
        col_categories=ccats,
    )


def replicate_two_way_tables(data: SurveyDataset, row, col,
                             row_categories: Sequence | None = None,
                             col_categories: Sequence | None = None,
                             matrix: BootstrapWeightMatrix | None = None) -> np.ndarray:
    """Per-replicate tables, shape (B, R, C); zero-total replicates are NaN."""
    mat = matrix if matrix is not None else data.replicate_weights
    if mat is None:
        raise DataError("no replicate weights available")
    rvals = _resolve_variable(data, row)
    cvals = _resolve_variable(data, col)
    rcodes, rcats = category_codes(rvals, row_categories)
    ccodes, ccats = category_codes(cvals, col_categories)
    R, C = len(rcats), len(ccats)
    cell = rcodes * C + ccodes
    onehot = np.zeros((data.n, R * C))
    onehot[np.arange(data.n), cell] = 1.0
    raw = (onehot.T @ mat.weights).T                       # (B, R*C)
    totals = mat.weights.sum(axis=0)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        flat = np.where(totals > 0, raw / totals, np.nan)
    return flat.reshape(-1, R, C)


# ---------------------------------------------------------------------------
# CSV interface
#
# UTF-8, header row required.  Numbers are written with repr(), which
# round-trips float64 exactly (shortest representation, <= 17 significant
# digits).  Replicate weight columns are named <prefix>1..<prefix>B.

@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for load_csv / write_csv."""

    y: str = "y"
    x: tuple[str, ...] = ()
    weight: str = "w"
    stratum: str | None = None
    cluster: str | None = None
    cluster_size: str | None = None
    draw_prob: str | None = None
    draw_index: str | None = None
    bw_prefix: str | None = "bw_"
    categories: Mapping[str, Sequence] | None = None


def _parse_float(raw: str, column: str, row: int) -> float:
    txt = raw.strip()
    if txt == "":
        raise DataError(f"missing value in column {column!r} at data row {row}")
    try:
        return float(txt)
    except ValueError:
        raise DataError(
            f"non-numeric value {raw!r} in column {column!r} at data row {row}"
        ) from None


def load_csv(path, schema: CsvSchema = CsvSchema(), *,
             design: DesignKind = DesignKind.POISSON,
             population_size: int | None = None,
             population_clusters: int | None = None) -> SurveyDataset:
    """Load a survey sample from CSV.

    Missing values are a hard error.  If population_size is not given it
    is taken as round(sum of weights) with a warning, since several
    downstream operations need the true population size.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: ragged row at data row {lineno}: expected "
                    f"{len(header)} fields, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")

    col_idx = {name: k for k, name in enumerate(header)}

    def need(name: str) -> int:
        if name not in col_idx:
            raise DataError(f"{path}: missing required column {name!r}")
        return col_idx[name]

    # replicate weight columns, ordered by integer suffix
    bw_cols: list[tuple[int, str]] = []
    if schema.bw_prefix:
        for name in header:
            if name.startswith(schema.bw_prefix):
                suffix = name[len(schema.bw_prefix):]
                if suffix.isdigit():
                    bw_cols.append((int(suffix), name))
        bw_cols.sort()
        if bw_cols:
            expect = list(range(1, len(bw_cols) + 1))
            if [k for k, _ in bw_cols] != expect:
                raise DataError(
                    f"{path}: replicate weight columns must be numbered "
                    f"{schema.bw_prefix}1..{schema.bw_prefix}{len(bw_cols)} "
                    "without gaps"
                )

    x_names = tuple(schema.x)
    if not x_names:
        auto = [
            name for name in header
            if name.startswith("x")
            and name[1:].isdigit()
        ]
        auto.sort(key=lambda s: int(s[1:]))
        x_names = tuple(auto)

    yk = need(schema.y)
    wk = need(schema.weight)
    xks = [need(name) for name in x_names]

    n = len(rows)
    weights = np.empty(n)
    xmat = np.empty((n, len(xks)))
    y_raw: list = []
    for i, row in enumerate(rows, start=1):
        weights[i - 1] = _parse_float(row[wk], schema.weight, i)
        if weights[i - 1] <= 0:
            raise DataError(
                f"{path}: nonpositive weight {row[wk]!r} at data row {i}"
            )
        for j, k in enumerate(xks):
            xmat[i - 1, j] = _parse_float(row[k], x_names[j], i)
        y_raw.append(row[yk].strip())

    # response: numeric when every entry parses, label array otherwise
    try:
        y = np.array([float(v) for v in y_raw])
    except ValueError:
        y = np.array(y_raw, dtype=object)
    for i, v in enumerate(y_raw, start=1):
        if v == "":
            raise DataError(f"{path}: missing value in column {schema.y!r} at data row {i}")

    def opt_float(name: str | None):
        if name is None:
            return None
        k = need(name)
        return np.array([_parse_float(r[k], name, i) for i, r in enumerate(rows, 1)])

    def opt_label(name: str | None):
        if name is None:
            return None
        k = need(name)
        out = []
        for i, r in enumerate(rows, 1):
            v = r[k].strip()
            if v == "":
                raise DataError(f"{path}: missing value in column {name!r} at data row {i}")
            out.append(v)
        return np.array(out, dtype=object)

    stratum = opt_label(schema.stratum)
    cluster = opt_label(schema.cluster)
    cluster_size = opt_float(schema.cluster_size)
    draw_prob = opt_float(schema.draw_prob)
    draw_index = opt_float(schema.draw_index)
    if draw_index is not None:
        draw_index = draw_index.astype(int)

    matrix = None
    if bw_cols:
        bw = np.empty((n, len(bw_cols)))
        for b, (_, name) in enumerate(bw_cols):
            k = col_idx[name]
            for i, r in enumerate(rows, 1):
                val = _parse_float(r[k], name, i)
                if val < 0:
                    raise DataError(
                        f"{path}: negative replicate weight at data row {i}, column {name!r}"
                    )
                bw[i - 1, b] = val
        matrix = BootstrapWeightMatrix(weights=bw, master_seed=0, design=design)

    if population_size is None:
        population_size = int(round(weights.sum()))
        warnings.warn(
            "population_size not given; using round(sum of weights)",
            stacklevel=2,
        )

    # raw named columns for categorical analyses
    columns: dict[str, np.ndarray] = {}
    bw_names = {name for _, name in bw_cols}
    for name in header:
        if name in bw_names:
            continue
        k = col_idx[name]
        vals = [r[k].strip() for r in rows]
        try:
            columns[name] = np.array([float(v) for v in vals])
        except ValueError:
            columns[name] = np.array(vals, dtype=object)

    return SurveyDataset(
        y=y, x=xmat, weights=weights,
        population_size=population_size,
        design=design,
        stratum=stratum, cluster=cluster, cluster_size=cluster_size,
        draw_prob=draw_prob, draw_index=draw_index,
        population_clusters=population_clusters,
        replicate_weights=matrix,
        columns=columns,
    )


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(data: SurveyDataset, path, schema: CsvSchema = CsvSchema(),
              *, include_replicates: bool = True) -> None:
    """Write a dataset (optionally with replicate weights) to CSV.

    Floats use shortest round-trip formatting so a load_csv of the file
    reproduces every value bit-exactly.
    """
    x_names = tuple(schema.x) or tuple(f"x{j + 1}" for j in range(data.n_covariates))
    header = [schema.y, *x_names, schema.weight]
    extras: list[tuple[str, np.ndarray]] = []
    for name, arr in (
        (schema.stratum or "stratum", data.stratum),
        (schema.cluster or "cluster", data.cluster),
        (schema.cluster_size or "cluster_size", data.cluster_size),
        (schema.draw_prob or "draw_prob", data.draw_prob),
        (schema.draw_index or "draw_index", data.draw_index),
    ):
        if arr is not None:
            extras.append((name, arr))
    header.extend(name for name, _ in extras)
    mat = data.replicate_weights
    prefix = schema.bw_prefix or "bw_"
    if include_replicates and mat is not None:
        header.extend(f"{prefix}{b + 1}" for b in range(mat.n_replicates))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [_fmt(data.y[i])]
            row.extend(_fmt(v) for v in data.x[i])
            row.append(_fmt(data.weights[i]))
            row.extend(_fmt(arr[i]) for _, arr in extras)
            if include_replicates and mat is not None:
                row.extend(_fmt(v) for v in mat.weights[i])
            writer.writerow(row)
