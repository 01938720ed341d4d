"""Typed datasets with causal roles, CSV/JSON I/O, splitting, scaling and
missingness simulation.

Cells are stored in one ``float64`` matrix.  Categorical cells hold the
index of their label in ``VariableSpec.categories``; missing cells hold NaN
and are ``False`` in the mask.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, LoadError, ScalingError, SchemaError, SplitError
from .numeric.rng import rng_stream

ROLES = ("treatment", "confounder", "adjustment", "outcome")
KINDS = ("continuous", "binary", "ordinal", "nominal")
CATEGORICAL = ("binary", "ordinal", "nominal")
ROW_ID = "row_id"
SCENARIOS = ("none", "moderate", "substantial")
DEFAULT_RATES = {"none": 0.0, "moderate": 0.3, "substantial": 0.6}


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    kind: str = "continuous"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "continuous" and self.categories:
            raise SchemaError(f"{self.name}: continuous variables take no categories")
        if self.kind in CATEGORICAL and len(self.categories) < 2:
            raise SchemaError(f"{self.name}: {self.kind} needs at least 2 categories")
        if self.kind == "binary" and len(self.categories) != 2:
            raise SchemaError(f"{self.name}: binary needs exactly 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaError(f"{self.name}: duplicate category labels")

    @property
    def is_categorical(self) -> bool:
        return self.kind in CATEGORICAL

    def to_json(self) -> dict:
        return {"name": self.name, "role": self.role, "kind": self.kind,
                "categories": list(self.categories)}


def validate_schema(schema) -> tuple[VariableSpec, ...]:
    schema = tuple(schema)
    names = [v.name for v in schema]
    if len(set(names)) != len(names):
        raise SchemaError("variable names must be unique")
    if ROW_ID in names:
        raise SchemaError(f"{ROW_ID!r} is a reserved column name")
    outcomes = [v for v in schema if v.role == "outcome"]
    if len(outcomes) != 1:
        raise SchemaError(f"exactly one outcome column required, found {len(outcomes)}")
    if outcomes[0].kind != "continuous":
        raise SchemaError("the outcome must be continuous")
    return schema


def schema_fingerprint(schema) -> str:
    text = json.dumps([v.to_json() for v in schema], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def read_schema(path) -> tuple[VariableSpec, ...]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read schema {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaError("schema JSON must be an array")
    specs = []
    for entry in raw:
        unknown = set(entry) - {"name", "role", "kind", "categories"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        specs.append(VariableSpec(entry["name"], entry["role"], entry.get("kind", "continuous"),
                                  tuple(entry.get("categories", ()))))
    return validate_schema(specs)


def write_schema(schema, path):
    Path(path).write_text(json.dumps([v.to_json() for v in schema], indent=2) + "\n",
                          encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of typed cells plus an observed-cell mask."""

    schema: tuple[VariableSpec, ...]
    values: np.ndarray
    mask: np.ndarray
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        schema = validate_schema(self.schema)
        values = np.array(self.values, dtype=float, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise DomainError(f"values shape {values.shape} does not match {len(schema)} columns")
        if mask.shape != values.shape:
            raise DomainError("mask shape differs from values shape")
        ids = np.arange(values.shape[0]) if self.row_ids is None else np.array(self.row_ids, dtype=np.int64)
        if ids.shape != (values.shape[0],):
            raise DomainError("row_ids length differs from the number of rows")
        values[~mask] = np.nan
        for j, spec in enumerate(schema):
            col, obs = values[:, j], mask[:, j]
            if spec.role != "confounder" and not obs.all():
                raise DomainError(f"column {spec.name!r} ({spec.role}) must be fully observed")
            if not np.all(np.isfinite(col[obs])):
                raise DomainError(f"column {spec.name!r} has non-finite observed cells")
            if spec.is_categorical:
                k = len(spec.categories)
                ok = (col[obs] == np.round(col[obs])) & (col[obs] >= 0) & (col[obs] < k)
                if not ok.all():
                    raise DomainError(f"column {spec.name!r} holds invalid category indices")
        for arr in (values, mask, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def role_indices(self, role: str) -> list[int]:
        return [j for j, v in enumerate(self.schema) if v.role == role]

    @property
    def outcome_index(self) -> int:
        return self.role_indices("outcome")[0]

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.schema, self.values[rows], self.mask[rows], self.row_ids[rows])

    def replace(self, values=None, mask=None) -> "Dataset":
        return Dataset(self.schema,
                       self.values if values is None else values,
                       self.mask if mask is None else mask,
                       self.row_ids)

    def select_columns(self, names) -> "Dataset":
        """Sub-table with the given columns; requires the outcome to be among them."""
        idx = [self.index(n) for n in names]
        return Dataset(tuple(self.schema[j] for j in idx), self.values[:, idx],
                       self.mask[:, idx], self.row_ids)

    def equals(self, other: "Dataset") -> bool:
        return (self.schema == other.schema
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values, other.values, equal_nan=True)
                and np.array_equal(self.row_ids, other.row_ids))


def concat_rows(parts) -> Dataset:
    parts = list(parts)
    schema = parts[0].schema
    if any(p.schema != schema for p in parts):
        raise DomainError("datasets have different schemas")
    return Dataset(schema, np.vstack([p.values for p in parts]),
                   np.vstack([p.mask for p in parts]),
                   np.concatenate([p.row_ids for p in parts]))


def _format_cell(spec: VariableSpec, value: float, observed: bool) -> str:
    if not observed:
        return ""
    if spec.is_categorical:
        return spec.categories[int(value)]
    return repr(float(value))


def save_dataset(ds: Dataset, csv_path, schema_path=None, with_row_ids=True):
    """Write the CSV (and optionally the schema JSON).

    Floats are written with ``repr`` so a load returns bit-identical values.
    """
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(([ROW_ID] if with_row_ids else []) + ds.names)
        for i in range(ds.n_rows):
            cells = [_format_cell(s, ds.values[i, j], ds.mask[i, j]) for j, s in enumerate(ds.schema)]
            writer.writerow(([str(int(ds.row_ids[i]))] if with_row_ids else []) + cells)
    if schema_path is not None:
        write_schema(ds.schema, schema_path)


def load_dataset(csv_path, schema_path=None, schema=None) -> Dataset:
    """Read a dataset CSV against a schema (given as a path or as specs).

    An empty cell is missing.  A leading ``row_id`` column is optional.
    """
    if schema is None:
        if schema_path is None:
            raise LoadError("a schema or schema_path is required")
        schema = read_schema(schema_path)
    schema = validate_schema(schema)
    by_name = {v.name: v for v in schema}
    try:
        fh = open(csv_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot open {csv_path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{csv_path}: empty file") from None
        has_ids = bool(header) and header[0] == ROW_ID
        cols = header[1:] if has_ids else header
        for name in cols:
            if name not in by_name:
                raise LoadError(f"{csv_path}: unknown column {name!r}")
        if sorted(cols) != sorted(by_name):
            missing = sorted(set(by_name) - set(cols))
            raise LoadError(f"{csv_path}: columns {missing} absent from header")
        order = [cols.index(v.name) for v in schema]
        values, mask, ids = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LoadError(f"{csv_path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            if has_ids:
                try:
                    ids.append(int(row[0]))
                except ValueError:
                    raise LoadError(f"{csv_path}:{lineno}: bad row_id {row[0]!r}") from None
                row = row[1:]
            vrow, mrow = [], []
            for spec, pos in zip(schema, order):
                cell = row[pos].strip()
                if cell == "":
                    if spec.role != "confounder":
                        raise LoadError(f"{csv_path}:{lineno}: missing value in {spec.role} "
                                        f"column {spec.name!r}")
                    vrow.append(math.nan)
                    mrow.append(False)
                    continue
                if spec.is_categorical:
                    if cell not in spec.categories:
                        raise LoadError(f"{csv_path}:{lineno}: column {spec.name!r}: "
                                        f"unknown category {cell!r}")
                    vrow.append(float(spec.categories.index(cell)))
                else:
                    try:
                        val = float(cell)
                    except ValueError:
                        raise LoadError(f"{csv_path}:{lineno}: column {spec.name!r}: "
                                        f"cannot parse {cell!r} as a number") from None
                    if not math.isfinite(val):
                        raise LoadError(f"{csv_path}:{lineno}: column {spec.name!r}: non-finite {cell!r}")
                    vrow.append(val)
                mrow.append(True)
            values.append(vrow)
            mask.append(mrow)
    n = len(values)
    arr = np.array(values, dtype=float).reshape(n, len(schema))
    return Dataset(schema, arr, np.array(mask, dtype=bool).reshape(n, len(schema)),
                   np.array(ids, dtype=np.int64) if has_ids else None)


def split(ds: Dataset, train_frac=0.6, valid_frac=0.2, seed=0):
    """Random disjoint train/validation/test partition of the rows."""
    if train_frac <= 0 or valid_frac <= 0 or train_frac + valid_frac >= 1:
        raise SplitError("fractions must be positive and sum to less than 1")
    n = ds.n_rows
    if n < 3:
        raise SplitError(f"need at least 3 rows to split, got {n}")
    n_train = min(max(int(round(n * train_frac)), 1), n - 2)
    n_valid = min(max(int(round(n * valid_frac)), 1), n - n_train - 1)
    perm = rng_stream(seed, "split").permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    return tuple(ds.take(np.sort(p)) for p in parts)


def simulate_missingness(ds: Dataset, scenario="none", seed=0, rates=None, mode="mcar") -> Dataset:
    """Mask confounder cells according to a missingness scenario.

    ``mode="mcar"`` masks exactly ``round(rate * cells)`` confounder cells chosen
    uniformly; ``mode="prefix"`` masks the trailing ``round(rate * D_x)``
    confounder columns entirely, as when late-arriving features are not yet
    available.  Other roles are never touched.
    """
    rates = {**DEFAULT_RATES, **(rates or {})}
    if scenario not in rates:
        raise DomainError(f"unknown scenario {scenario!r}")
    rate = float(rates[scenario])
    if not 0.0 <= rate < 1.0:
        raise DomainError("missingness rate must lie in [0, 1)")
    conf = ds.role_indices("confounder")
    if rate == 0.0 or not conf:
        return ds
    if not ds.mask[:, conf].all():
        raise DomainError("confounder columns already contain missing cells")
    mask = ds.mask.copy()
    if mode == "mcar":
        n_cells = ds.n_rows * len(conf)
        k = int(round(rate * n_cells))
        chosen = rng_stream(seed, "missingness", scenario).choice(n_cells, size=k, replace=False)
        block = np.ones(n_cells, dtype=bool)
        block[chosen] = False
        mask[:, conf] = block.reshape(ds.n_rows, len(conf))
    elif mode == "prefix":
        k = int(round(rate * len(conf)))
        for j in conf[len(conf) - k:]:
            mask[:, j] = False
    else:
        raise DomainError(f"unknown missingness mode {mode!r}")
    return ds.replace(mask=mask)


@dataclass(frozen=True)
class ScalingParams:
    """Per-column (mean, population std) for continuous columns."""

    stats: dict

    def to_json(self) -> dict:
        return {k: [float(m), float(s)] for k, (m, s) in self.stats.items()}

    @classmethod
    def from_json(cls, raw) -> "ScalingParams":
        return cls({k: (float(v[0]), float(v[1])) for k, v in raw.items()})


def standardize(train: Dataset):
    """Scale observed continuous cells to mean 0 / std 1 (population std)."""
    stats = {}
    for j, spec in enumerate(train.schema):
        if spec.kind != "continuous":
            continue
        obs = train.values[train.mask[:, j], j]
        if np.unique(obs).size < 2:
            raise ScalingError(f"column {spec.name!r} is constant on the training rows")
        mean = float(obs.mean())
        std = float(np.sqrt(np.mean((obs - mean) ** 2)))
        if not std > 0:
            raise ScalingError(f"column {spec.name!r} has zero spread")
        stats[spec.name] = (mean, std)
    params = ScalingParams(stats)
    return apply_scaling(train, params), params


def apply_scaling(ds: Dataset, params: ScalingParams) -> Dataset:
    values = ds.values.copy()
    for name, (mean, std) in params.stats.items():
        j = ds.index(name)
        values[:, j] = (values[:, j] - mean) / std
    return ds.replace(values=values)


def invert_scaling(ds: Dataset, params: ScalingParams) -> Dataset:
    values = ds.values.copy()
    for name, (mean, std) in params.stats.items():
        j = ds.index(name)
        values[:, j] = values[:, j] * std + mean
    return ds.replace(values=values)
