"""Classification dataset built from simulated states.

Attributes, in this fixed order: ``V_<bus>`` voltage magnitude (pu) per bus,
then ``P_<from>_<to>`` and ``Q_<from>_<to>`` sending-end flows (MW, MVAr) per
branch. A parallel circuit between the same buses gets a ``_<n>`` suffix
(``P_42_49``, ``P_42_49_2``). Missing cells are NaN in memory and empty
fields on disk.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .grid import NetworkCase
from .powerflow import SystemState
from .scenarios import StateRecord
from .security import SecurityClass, SecurityWeights, classify, security_index

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    missing_mask: np.ndarray

    @classmethod
    def from_values(cls, values) -> "FeatureVector":
        v = np.asarray(values, dtype=float)
        return cls(v, np.isnan(v))


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    label: SecurityClass
    si: float


def branch_names(case: NetworkCase) -> list[str]:
    seen: dict[str, int] = {}
    names = []
    for br in case.branches:
        base = br.name
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}_{seen[base]}")
    return names


def feature_schema(case: NetworkCase) -> list[str]:
    names = branch_names(case)
    return ([f"V_{b.id}" for b in case.buses] + [f"P_{n}" for n in names]
            + [f"Q_{n}" for n in names])


def state_features(state: SystemState, case: NetworkCase) -> np.ndarray:
    if len(state.v_mag) != case.n_buses or len(state.p_from) != case.n_branches:
        raise DatasetError("state does not match the case topology")
    return np.concatenate([state.v_mag, state.p_from, state.q_from])


def extract_features(record: StateRecord | SystemState, case: NetworkCase) -> FeatureVector:
    """Features of a record. A diverged record is described by its
    pre-collapse state (see :class:`~powersec.scenarios.StateRecord`)."""
    state = record.observed_state if isinstance(record, StateRecord) else record
    return FeatureVector.from_values(state_features(state, case))


class Dataset:
    """Feature matrix ``X`` (NaN = missing), security index ``si`` and class
    codes ``y`` (:class:`SecurityClass` values)."""

    def __init__(self, schema, X, si, y=None):
        self.schema = list(schema)
        self.X = np.asarray(X, dtype=float).reshape(-1, len(self.schema))
        self.si = np.asarray(si, dtype=float)
        if y is None:
            y = [int(classify(s)) for s in self.si]
        self.y = np.asarray(y, dtype=np.int64)
        if not (len(self.X) == len(self.si) == len(self.y)):
            raise DatasetError("X, si and y lengths differ")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return len(self.schema)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.X)

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(FeatureVector.from_values(x), SecurityClass(int(c)), float(s))
                for x, s, c in zip(self.X, self.si, self.y)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.schema, self.X[idx], self.si[idx], self.y[idx])

    def class_counts(self) -> dict[str, int]:
        return {SecurityClass(c).label: int((self.y == c).sum()) for c in SecurityClass}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.schema == other.schema and np.array_equal(self.y, other.y)
                and np.array_equal(self.si, other.si)
                and np.array_equal(self.X, other.X, equal_nan=True))


def build_dataset(records: list[StateRecord], case: NetworkCase,
                  weights: SecurityWeights = SecurityWeights()) -> Dataset:
    schema = feature_schema(case)
    X = np.empty((len(records), len(schema)))
    si = np.empty(len(records))
    for i, rec in enumerate(records):
        X[i] = extract_features(rec, case).values
        si[i] = security_index(rec.state, case, weights).si
    return Dataset(schema, X, si)


def _quotas(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` across classes in proportion
    to ``counts``; every class with two or more samples lands on both sides."""
    exact = counts * total / counts.sum()
    q = np.floor(exact).astype(int)
    rem = total - q.sum()
    for c in np.argsort(-(exact - q), kind="stable")[:rem]:
        q[c] += 1
    lo = np.where(counts >= 2, 1, 0)
    hi = np.where(counts >= 2, counts - 1, counts)
    return np.clip(q, lo, hi)


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified random partition into (train, test)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n_test = int(round(test_fraction * len(data)))
    classes, counts = np.unique(data.y, return_counts=True)
    if (counts < 2).any():
        log.warning("a class has fewer than 2 samples; falling back to an unstratified split")
        perm = rng.permutation(len(data))
        test_idx = perm[:n_test]
    else:
        quota = _quotas(counts, n_test)
        parts = []
        for c, q in zip(classes, quota):
            members = np.flatnonzero(data.y == c)
            parts.append(members[rng.permutation(len(members))[:q]])
        test_idx = np.concatenate(parts)
    is_test = np.zeros(len(data), dtype=bool)
    is_test[test_idx] = True
    return data.subset(np.flatnonzero(~is_test)), data.subset(np.flatnonzero(is_test))


def inject_gaps(data: Dataset, gap_fraction: float, seed: int) -> Dataset:
    """Blank exactly ``round(gap_fraction * cells)`` present feature cells,
    uniformly over (sample, attribute) pairs. Labels and SI are untouched."""
    if not 0 <= gap_fraction < 1:
        raise ValueError("gap_fraction must lie in [0, 1)")
    X = data.X.copy()
    n_gaps = int(round(gap_fraction * X.size))
    present = np.flatnonzero(~np.isnan(X).ravel())
    if n_gaps > len(present):
        raise DatasetError("not enough present cells to blank")
    if n_gaps:
        rng = np.random.default_rng(seed)
        X.ravel()[rng.choice(present, n_gaps, replace=False)] = np.nan
    return Dataset(data.schema, X, data.si, data.y)


def attribute_medians(reference: Dataset) -> np.ndarray:
    X = reference.X
    empty = np.isnan(X).all(axis=0)
    if len(X) == 0 or empty.any():
        names = [reference.schema[i] for i in np.flatnonzero(empty)] or reference.schema
        raise DatasetError(f"attribute entirely missing in reference: {names[0]}")
    return np.nanmedian(X, axis=0)


def impute(data: Dataset, reference: Dataset) -> Dataset:
    """Fill every missing cell with the reference (training) median of its
    attribute."""
    if data.schema != reference.schema:
        raise DatasetError("schema mismatch between data and reference")
    miss = np.isnan(data.X)
    if not miss.any():
        return data
    med = attribute_medians(reference)
    X = data.X.copy()
    rows, cols = np.nonzero(miss)
    X[rows, cols] = med[cols]
    return Dataset(data.schema, X, data.si, data.y)


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def write_dataset_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.schema + ["SI", "class"])
        for x, s, c in zip(data.X, data.si, data.y):
            w.writerow([_fmt(v) for v in x] + [repr(float(s)), SecurityClass(int(c)).label])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-2:] != ["SI", "class"]:
        raise DatasetError(f"{path}: header must end with SI,class")
    schema = rows[0][:-2]
    p = len(schema)
    X = np.empty((len(rows) - 1, p))
    si = np.empty(len(rows) - 1)
    y = np.empty(len(rows) - 1, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        if len(row) != p + 2:
            raise DatasetError(f"{path}:{i + 2}: expected {p + 2} fields, got {len(row)}")
        try:
            X[i] = [float(v) if v != "" else np.nan for v in row[:p]]
            si[i] = float(row[p])
            y[i] = int(SecurityClass.parse(row[p + 1]))
        except (ValueError, KeyError) as exc:
            raise DatasetError(f"{path}:{i + 2}: bad value ({exc})") from None
    return Dataset(schema, X, si, y)
