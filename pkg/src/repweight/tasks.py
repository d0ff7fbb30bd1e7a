"""Weighting tasks: source/target sample pairs for common causal estimands.

A weighting task holds one source sample (covariates, and pseudo-outcomes
when available) and one target covariate sample. Builders construct tasks
for three standard framings:

- ATT: reweight the control arm toward the treated arm's covariates.
- ATE: one task per treatment arm, each reweighted toward the full sample.
- Transportability: reweight an RCT sample toward an observational target,
  with Horvitz-Thompson pseudo-outcomes built from the in-trial assignment
  rate.

Pseudo-outcomes are attached eagerly when outcomes exist, but weighting
code never needs them: a family can be `masked()` so the design phase is
provably outcome-free.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Dataset",
    "WeightingTask",
    "TaskFamily",
    "CsvSchema",
    "TaskConstructionError",
    "CsvFormatError",
    "build_att_task",
    "build_ate_tasks",
    "build_transport_task",
    "load_dataset_csv",
    "standardize_family",
]


class TaskConstructionError(ValueError):
    """A task builder received structurally unusable input."""


class CsvFormatError(ValueError):
    """A CSV file violated the declared schema; message carries row/column."""


def _as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"covariates must be a 2-d array, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class Dataset:
    """One raw sample: covariates plus optional treatment/outcome/RCT columns.

    `treatment` stores integer codes into `treatment_alphabet`, which keeps
    the original labels (sorted). All columns must have the same length and
    covariates must be finite.
    """

    covariates: np.ndarray
    treatment: np.ndarray | None = None
    outcome: np.ndarray | None = None
    rct_indicator: np.ndarray | None = None
    treatment_alphabet: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", _as_matrix(self.covariates))
        n = self.covariates.shape[0]
        if n == 0:
            raise ValueError("dataset has no rows")
        if not np.all(np.isfinite(self.covariates)):
            raise ValueError("covariates contain non-finite values")
        if self.treatment is not None:
            t = np.asarray(self.treatment)
            if t.shape != (n,):
                raise ValueError("treatment column length != number of rows")
            if not self.treatment_alphabet:
                alphabet = tuple(sorted(set(t.tolist())))
                codes = np.array([alphabet.index(v) for v in t.tolist()], dtype=np.int64)
                object.__setattr__(self, "treatment_alphabet", alphabet)
                object.__setattr__(self, "treatment", codes)
            else:
                codes = np.asarray(t, dtype=np.int64)
                if codes.min(initial=0) < 0 or codes.max(initial=0) >= len(self.treatment_alphabet):
                    raise ValueError("treatment codes outside declared alphabet")
                object.__setattr__(self, "treatment", codes)
        if self.outcome is not None:
            y = np.asarray(self.outcome, dtype=float)
            if y.shape != (n,):
                raise ValueError("outcome column length != number of rows")
            if not np.all(np.isfinite(y)):
                raise ValueError("outcome contains non-finite values")
            object.__setattr__(self, "outcome", y)
        if self.rct_indicator is not None:
            s = np.asarray(self.rct_indicator, dtype=np.int64)
            if s.shape != (n,):
                raise ValueError("rct indicator length != number of rows")
            if not set(np.unique(s).tolist()) <= {0, 1}:
                raise ValueError("rct indicator must be binary 0/1")
            object.__setattr__(self, "rct_indicator", s)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class WeightingTask:
    """Source sample (with optional pseudo-outcomes) and target covariates.

    `source_rows_in_target`, when set, gives each source row's index in the
    target sample (the ATE case, where every arm targets the full sample).
    Holdout splits use it to keep source and target splits consistent, so
    no row trains on one side and validates on the other.
    """

    index: object
    source_x: np.ndarray
    target_x: np.ndarray
    source_pseudo_y: np.ndarray | None = None
    source_rows_in_target: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "source_x", _as_matrix(self.source_x))
        object.__setattr__(self, "target_x", _as_matrix(self.target_x))
        if self.source_x.shape[0] == 0 or self.target_x.shape[0] == 0:
            raise TaskConstructionError("source and target samples must be non-empty")
        if self.source_x.shape[1] != self.target_x.shape[1]:
            raise TaskConstructionError(
                f"source has {self.source_x.shape[1]} columns, target has "
                f"{self.target_x.shape[1]}"
            )
        if self.source_pseudo_y is not None:
            y = np.asarray(self.source_pseudo_y, dtype=float)
            if y.shape != (self.source_x.shape[0],):
                raise TaskConstructionError("pseudo-outcome length != source rows")
            object.__setattr__(self, "source_pseudo_y", y)
        if self.source_rows_in_target is not None:
            idx = np.asarray(self.source_rows_in_target, dtype=np.int64)
            if idx.shape != (self.source_x.shape[0],):
                raise TaskConstructionError("row mapping length != source rows")
            if idx.min(initial=0) < 0 or idx.max(initial=0) >= self.target_x.shape[0]:
                raise TaskConstructionError("row mapping points outside the target")
            object.__setattr__(self, "source_rows_in_target", idx)

    @property
    def n_source(self) -> int:
        return self.source_x.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_x.shape[0]

    def masked(self) -> "WeightingTask":
        """Drop pseudo-outcomes; the design phase sees only covariates."""
        return replace(self, source_pseudo_y=None)


@dataclass(frozen=True)
class TaskFamily:
    """A collection of tasks with a probability vector over task indices."""

    tasks: tuple
    p: np.ndarray = field(default=None)

    def __post_init__(self):
        tasks = tuple(self.tasks)
        object.__setattr__(self, "tasks", tasks)
        if not tasks:
            raise TaskConstructionError("task family is empty")
        p = self.p
        if p is None:
            p = np.full(len(tasks), 1.0 / len(tasks))
        p = np.asarray(p, dtype=float)
        if p.shape != (len(tasks),):
            raise TaskConstructionError("task probability vector length mismatch")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise TaskConstructionError("task probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def masked(self) -> "TaskFamily":
        return TaskFamily(tuple(t.masked() for t in self.tasks), self.p)

    def fingerprint(self) -> str:
        """Content hash; identical inputs must give identical task bytes."""
        h = hashlib.sha256()
        h.update(self.p.tobytes())
        for t in self.tasks:
            h.update(repr(t.index).encode())
            h.update(t.source_x.tobytes())
            h.update(t.target_x.tobytes())
            if t.source_pseudo_y is not None:
                h.update(t.source_pseudo_y.tobytes())
            if t.source_rows_in_target is not None:
                h.update(t.source_rows_in_target.tobytes())
        return h.hexdigest()


def _require_binary_treatment(ds: Dataset) -> None:
    if ds.treatment is None:
        raise TaskConstructionError("dataset has no treatment column")
    if len(ds.treatment_alphabet) != 2:
        raise TaskConstructionError(
            f"binary treatment required, alphabet is {ds.treatment_alphabet}"
        )


def build_att_task(ds: Dataset) -> TaskFamily:
    """Control rows are the source, treated covariates the target.

    Pseudo-outcome on the source is the observed outcome when present.
    """
    _require_binary_treatment(ds)
    control = ds.treatment == 0
    treated = ds.treatment == 1
    if not control.any():
        raise TaskConstructionError("control arm empty")
    if not treated.any():
        raise TaskConstructionError("treated arm empty")
    pseudo = ds.outcome[control] if ds.outcome is not None else None
    task = WeightingTask(
        index=0,
        source_x=ds.covariates[control],
        target_x=ds.covariates[treated],
        source_pseudo_y=pseudo,
    )
    return TaskFamily((task,), np.array([1.0]))


def build_ate_tasks(ds: Dataset, arm_weighting: str = "uniform") -> TaskFamily:
    """One task per treatment arm; every task targets the full sample.

    `arm_weighting` is "uniform" (default) or "frequency" (arms weighted by
    their empirical share, matching a joint objective that draws the arm at
    its marginal rate).
    """
    if ds.treatment is None:
        raise TaskConstructionError("dataset has no treatment column")
    if len(ds.treatment_alphabet) < 2:
        raise TaskConstructionError("need at least two treatment arms")
    if arm_weighting not in ("uniform", "frequency"):
        raise TaskConstructionError(f"unknown arm weighting {arm_weighting!r}")
    tasks = []
    counts = []
    for code, label in enumerate(ds.treatment_alphabet):
        mask = ds.treatment == code
        if not mask.any():
            raise TaskConstructionError(f"arm {label!r} empty")
        pseudo = ds.outcome[mask] if ds.outcome is not None else None
        tasks.append(
            WeightingTask(
                index=label,
                source_x=ds.covariates[mask],
                target_x=ds.covariates,
                source_pseudo_y=pseudo,
                source_rows_in_target=np.flatnonzero(mask),
            )
        )
        counts.append(int(mask.sum()))
    if arm_weighting == "frequency":
        p = np.array(counts, dtype=float) / ds.n
    else:
        p = np.full(len(tasks), 1.0 / len(tasks))
    return TaskFamily(tuple(tasks), p)


def build_transport_task(rct: Dataset, obs: Dataset) -> TaskFamily:
    """RCT rows are the source, observational covariates the target.

    The pseudo-outcome is the Horvitz-Thompson contrast
    a*y/pi - (1-a)*y/(1-pi) with pi the empirical treated fraction of the
    RCT, so the plain mean of pseudo-outcomes reproduces the
    difference-in-means estimator exactly.
    """
    if rct.treatment is None:
        raise TaskConstructionError("RCT dataset has no treatment column")
    if set(rct.treatment_alphabet) <= {0, 1} and len(rct.treatment_alphabet) == 1:
        raise TaskConstructionError("degenerate RCT assignment: single-arm trial")
    _require_binary_treatment(rct)
    if tuple(rct.treatment_alphabet) != (0, 1):
        raise TaskConstructionError(
            f"transport needs treatment labels 0/1, got {rct.treatment_alphabet}"
        )
    if rct.outcome is None:
        raise TaskConstructionError("RCT dataset has no outcome column")
    if rct.d != obs.d:
        raise TaskConstructionError(
            f"RCT has {rct.d} covariates, observational data has {obs.d}"
        )
    a = rct.treatment.astype(float)  # codes coincide with labels for (0, 1)
    pi = a.mean()
    if pi == 0.0 or pi == 1.0:
        raise TaskConstructionError("degenerate RCT assignment: single-arm trial")
    y = rct.outcome
    pseudo = a * y / pi - (1.0 - a) * y / (1.0 - pi)
    task = WeightingTask(
        index=0,
        source_x=rct.covariates,
        target_x=obs.covariates,
        source_pseudo_y=pseudo,
    )
    return TaskFamily((task,), np.array([1.0]))


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for `load_dataset_csv`."""

    covariates: tuple
    treatment: str | None = None
    outcome: str | None = None
    rct_indicator: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise ValueError("schema declares no covariate columns")


def _parse_number(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise CsvFormatError(f"non-numeric value {cell!r} at (row {row}, {col!r})")
    if not np.isfinite(value):
        raise CsvFormatError(f"non-finite value {cell!r} at (row {row}, {col!r})")
    return value


def load_dataset_csv(path, schema: CsvSchema) -> Dataset:
    """Read a UTF-8, comma-separated, headered file into a typed Dataset.

    Rows keep file order. Treatment labels are collected into a sorted
    finite alphabet (numeric labels parsed as integers when integral).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file: missing header row")
        header = [h.strip() for h in header]
        declared = list(schema.covariates) + [
            c for c in (schema.treatment, schema.outcome, schema.rct_indicator) if c
        ]
        for col in declared:
            if col not in header:
                raise CsvFormatError(f"declared column {col!r} missing from header")
        col_idx = {name: header.index(name) for name in declared}

        xs, treat, ys, ss = [], [], [], []
        for row_num, row in enumerate(reader, start=2):  # 1-based incl. header
            if len(row) != len(header):
                raise CsvFormatError(
                    f"ragged row at row {row_num}: {len(row)} cells, "
                    f"expected {len(header)}"
                )
            xs.append(
                [_parse_number(row[col_idx[c]].strip(), row_num, c) for c in schema.covariates]
            )
            if schema.treatment:
                treat.append(row[col_idx[schema.treatment]].strip())
            if schema.outcome:
                ys.append(_parse_number(row[col_idx[schema.outcome]].strip(), row_num, schema.outcome))
            if schema.rct_indicator:
                cell = row[col_idx[schema.rct_indicator]].strip()
                val = _parse_number(cell, row_num, schema.rct_indicator)
                if val not in (0.0, 1.0):
                    raise CsvFormatError(
                        f"rct indicator must be 0/1, got {cell!r} at "
                        f"(row {row_num}, {schema.rct_indicator!r})"
                    )
                ss.append(int(val))

    if not xs:
        raise CsvFormatError("file has a header but no data rows")

    treatment = None
    if schema.treatment:
        labels = []
        for raw in treat:
            try:
                num = float(raw)
                labels.append(int(num) if num.is_integer() else num)
            except ValueError:
                labels.append(raw)
        treatment = np.array(labels, dtype=object)
    return Dataset(
        covariates=np.array(xs, dtype=float),
        treatment=treatment,
        outcome=np.array(ys) if ys else None,
        rct_indicator=np.array(ss) if ss else None,
    )


def standardize_family(family: TaskFamily) -> TaskFamily:
    """Z-score each task with its source-sample statistics.

    Kernel scales are unit-sensitive; the same affine map is applied to the
    task's source and target so the weighting problem is unchanged up to
    coordinates. Constant columns are left at zero.
    """
    tasks = []
    for t in family.tasks:
        mu = t.source_x.mean(axis=0)
        sd = t.source_x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        tasks.append(
            replace(
                t,
                source_x=(t.source_x - mu) / sd,
                target_x=(t.target_x - mu) / sd,
            )
        )
    return TaskFamily(tuple(tasks), family.p)
