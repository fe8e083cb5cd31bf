"""Data model and ingestion for mixed-type multi-study cohorts.

A cohort couples a continuous covariate block (subjects x continuous
biomarkers), a factor covariate block with levels in {1..A}, study/group
membership labels, and optional right-censored survival outcomes.  All
containers are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "IngestConfig",
    "MixedDataset",
    "StandardizationParams",
    "coarsen_factor",
    "load_dataset",
    "load_dataset_dir",
    "standardize_continuous",
    "write_dataset",
]


@dataclass(frozen=True)
class IngestConfig:
    """Declared shape of an on-disk cohort.

    Parameters
    ----------
    n_studies, n_groups : int
        Number of studies J and comparison groups K.
    n_levels : int
        Number of factor levels A (>= 2); ignored when the factor block
        is empty.
    factor_codes : sequence or None
        Raw values used for the factor levels in the CSV, in level
        order.  ``None`` means the file already stores levels 1..A.
    """

    n_studies: int
    n_groups: int
    n_levels: int = 2
    factor_codes: tuple | None = None

    def __post_init__(self):
        if self.n_studies < 1 or self.n_groups < 1:
            raise ValueError("n_studies and n_groups must be positive")
        if self.n_levels < 2:
            raise ValueError("n_levels must be at least 2")
        if self.factor_codes is not None:
            object.__setattr__(self, "factor_codes", tuple(self.factor_codes))
            if len(self.factor_codes) != self.n_levels:
                raise ValueError(
                    "factor_codes must list one raw value per level "
                    f"(expected {self.n_levels}, got {len(self.factor_codes)})"
                )

    def to_json(self) -> dict:
        out = {
            "schema": 1,
            "n_studies": self.n_studies,
            "n_groups": self.n_groups,
            "n_levels": self.n_levels,
        }
        if self.factor_codes is not None:
            out["factor_codes"] = list(self.factor_codes)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "IngestConfig":
        codes = obj.get("factor_codes")
        return cls(
            n_studies=int(obj["n_studies"]),
            n_groups=int(obj["n_groups"]),
            n_levels=int(obj.get("n_levels", 2)),
            factor_codes=None if codes is None else tuple(codes),
        )


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column location/scale learned on training rows."""

    mean: np.ndarray
    sd: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Standardize rows of ``X`` with the stored training parameters."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise ValueError(
                f"expected {self.mean.shape[0]} continuous columns, got {X.shape[-1]}"
            )
        return (X - self.mean) / self.sd

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "StandardizationParams":
        return cls(np.asarray(obj["mean"], dtype=float), np.asarray(obj["sd"], dtype=float))


@dataclass(frozen=True)
class MixedDataset:
    """Subjects' mixed covariates, memberships, and optional outcomes.

    ``continuous`` is N x p1 float, ``factor`` is N x p2 int with levels
    in {1..n_levels} (p2 may be 0), ``study``/``group`` are 1-based
    membership labels, and ``survival_time``/``event`` are either both
    present or both absent.
    """

    continuous: np.ndarray
    factor: np.ndarray
    n_levels: int
    study: np.ndarray
    group: np.ndarray
    n_studies: int
    n_groups: int
    survival_time: np.ndarray | None = None
    event: np.ndarray | None = None
    continuous_names: tuple = ()
    factor_names: tuple = ()

    def __post_init__(self):
        cont = np.ascontiguousarray(np.asarray(self.continuous, dtype=float))
        fact = np.ascontiguousarray(np.asarray(self.factor, dtype=np.int64))
        if cont.ndim != 2 or fact.ndim != 2:
            raise ValueError("continuous and factor blocks must be 2-d")
        n = cont.shape[0]
        if fact.shape[0] != n:
            raise ValueError(
                f"row count mismatch: continuous has {n} rows, factor has {fact.shape[0]}"
            )
        study = np.asarray(self.study, dtype=np.int64)
        group = np.asarray(self.group, dtype=np.int64)
        if study.shape != (n,) or group.shape != (n,):
            raise ValueError("study/group labels must be vectors of length N")
        if not np.isfinite(cont).all():
            raise ValueError("continuous block contains non-finite entries")
        if fact.size and (fact.min() < 1 or fact.max() > self.n_levels):
            raise ValueError(
                f"factor level out of range: levels must lie in 1..{self.n_levels}"
            )
        if study.size and (study.min() < 1 or study.max() > self.n_studies):
            raise ValueError(f"study label out of range 1..{self.n_studies}")
        if group.size and (group.min() < 1 or group.max() > self.n_groups):
            raise ValueError(f"group label out of range 1..{self.n_groups}")
        if (self.survival_time is None) != (self.event is None):
            raise ValueError("survival_time and event must be given together")
        if self.survival_time is not None:
            t = np.asarray(self.survival_time, dtype=float)
            e = np.asarray(self.event, dtype=np.int64)
            if t.shape != (n,) or e.shape != (n,):
                raise ValueError("survival columns must have length N")
            if (t < 0).any() or not np.isfinite(t).all():
                raise ValueError("survival_time must be finite and nonnegative")
            if not np.isin(e, (0, 1)).all():
                raise ValueError("event indicator must be 0 or 1")
            object.__setattr__(self, "survival_time", t)
            object.__setattr__(self, "event", e)
        for name, arr in (("continuous", cont), ("factor", fact), ("study", study), ("group", group)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "continuous_names", tuple(self.continuous_names))
        object.__setattr__(self, "factor_names", tuple(self.factor_names))

    @property
    def n_subjects(self) -> int:
        return self.continuous.shape[0]

    @property
    def p1(self) -> int:
        return self.continuous.shape[1]

    @property
    def p2(self) -> int:
        return self.factor.shape[1]

    @property
    def has_survival(self) -> bool:
        return self.survival_time is not None

    def class_index(self) -> np.ndarray:
        """Flatten (study, group) to 1..J*K as (s-1)*K + z."""
        return (self.study - 1) * self.n_groups + self.group

    def subset(self, idx) -> "MixedDataset":
        """Row subset (bootstrap resamples, train/test splits)."""
        idx = np.asarray(idx)
        return replace(
            self,
            continuous=self.continuous[idx],
            factor=self.factor[idx],
            study=self.study[idx],
            group=self.group[idx],
            survival_time=None if self.survival_time is None else self.survival_time[idx],
            event=None if self.event is None else self.event[idx],
        )


def _read_csv_matrix(path, kind: str):
    """Read a numeric CSV with a header row; reject missing cells."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file (expected a header row)") from None
        header = [h.strip() for h in header]
        if header == [""]:
            header = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    raise ValueError(
                        f"{path}:{lineno}: missing value in column '{name}' "
                        "(missing data is unsupported)"
                    )
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric {kind} cell '{cell}' in column '{name}'"
                    ) from None
            rows.append(parsed)
    mat = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return mat, tuple(header)


def _recode_factor(raw: np.ndarray, config: IngestConfig, path) -> np.ndarray:
    """Map raw factor codes onto contiguous levels 1..A."""
    if raw.size == 0:
        return raw.astype(np.int64)
    codes = config.factor_codes
    if codes is None:
        codes = tuple(range(1, config.n_levels + 1))
    lut = {float(code): level for level, code in enumerate(codes, start=1)}
    out = np.empty(raw.shape, dtype=np.int64)
    flat_raw = raw.ravel()
    flat_out = out.ravel()
    for k, value in enumerate(flat_raw):
        try:
            flat_out[k] = lut[float(value)]
        except KeyError:
            raise ValueError(
                f"{path}: factor level {value!r} outside declared codes {list(codes)}"
            ) from None
    return out


def load_dataset(continuous_path, factor_path, labels_path, config: IngestConfig) -> MixedDataset:
    """Load and validate a cohort from three CSV files.

    `labels_path` must have columns ``study,group`` and optionally
    ``time,event``.  `factor_path` may be ``None`` or a header-only file
    for a cohort without factor covariates.  Missing values anywhere are
    a hard error.
    """
    cont, cont_names = _read_csv_matrix(continuous_path, "continuous")
    if factor_path is None:
        fact_raw = np.empty((cont.shape[0], 0))
        fact_names: tuple = ()
    else:
        fact_raw, fact_names = _read_csv_matrix(factor_path, "factor")
        if fact_raw.shape[1] == 0:
            fact_raw = np.empty((cont.shape[0], 0))
    labels, label_names = _read_csv_matrix(labels_path, "label")
    for name in ("study", "group"):
        if name not in label_names:
            raise ValueError(f"{labels_path}: labels file must have a '{name}' column")
    n = cont.shape[0]
    if fact_raw.shape[0] != n or labels.shape[0] != n:
        raise ValueError(
            "dimension mismatch: row counts differ across files "
            f"(continuous {n}, factor {fact_raw.shape[0]}, labels {labels.shape[0]})"
        )
    cols = {name: labels[:, j] for j, name in enumerate(label_names)}
    study = cols["study"]
    group = cols["group"]
    if not (study == np.round(study)).all() or not (group == np.round(group)).all():
        raise ValueError(f"{labels_path}: study/group labels must be integers")
    time = cols.get("time")
    event = cols.get("event")
    if (time is None) != (event is None):
        raise ValueError(f"{labels_path}: 'time' and 'event' columns must appear together")
    fact = _recode_factor(fact_raw, config, factor_path)
    try:
        return MixedDataset(
            continuous=cont,
            factor=fact,
            n_levels=config.n_levels,
            study=study.astype(np.int64),
            group=group.astype(np.int64),
            n_studies=config.n_studies,
            n_groups=config.n_groups,
            survival_time=time,
            event=None if event is None else event.astype(np.int64),
            continuous_names=cont_names,
            factor_names=fact_names,
        )
    except ValueError as exc:
        raise ValueError(f"invalid dataset ({labels_path}): {exc}") from None


def load_dataset_dir(directory) -> MixedDataset:
    """Load a cohort from a directory laid out by :func:`write_dataset`."""
    directory = Path(directory)
    with open(directory / "config.json", encoding="utf-8") as fh:
        config = IngestConfig.from_json(json.load(fh))
    factor_path = directory / "factor.csv"
    return load_dataset(
        directory / "continuous.csv",
        factor_path if factor_path.exists() else None,
        directory / "labels.csv",
        config,
    )


def _write_csv(path, header, rows, fmt):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) for x in row])


def write_dataset(data: MixedDataset, directory) -> None:
    """Write a cohort as continuous/factor/labels CSVs plus config.json.

    Floats are written with repr precision so a load round-trips within
    1e-12; factors and labels round-trip bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cont_names = data.continuous_names or tuple(f"x{j + 1}" for j in range(data.p1))
    fact_names = data.factor_names or tuple(f"f{j + 1}" for j in range(data.p2))
    _write_csv(directory / "continuous.csv", cont_names, data.continuous, lambda x: f"{x:.17g}")
    if data.p2:
        _write_csv(directory / "factor.csv", fact_names, data.factor, lambda x: str(int(x)))
    header = ["study", "group"]
    cols = [data.study, data.group]
    if data.has_survival:
        header += ["time", "event"]
        cols += [data.survival_time, data.event]
    rows = zip(*cols)
    _write_csv(
        directory / "labels.csv",
        header,
        rows,
        lambda x: f"{x:.17g}" if isinstance(x, float) else str(int(x)),
    )
    config = IngestConfig(
        n_studies=data.n_studies, n_groups=data.n_groups, n_levels=data.n_levels
    )
    with open(directory / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def standardize_continuous(data: MixedDataset):
    """Standardize continuous columns to mean 0, sd 1.

    Returns the standardized dataset and the per-column parameters so the
    same affine transform can be applied to held-out rows.  A constant
    column is an error (its scale is undefined).
    """
    X = data.continuous
    if X.shape[1] == 0:
        return data, StandardizationParams(np.empty(0), np.empty(0))
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=0)
    bad = np.flatnonzero(sd == 0.0)
    if bad.size:
        names = data.continuous_names or tuple(f"x{j + 1}" for j in range(data.p1))
        raise ValueError(f"constant column '{names[bad[0]]}' cannot be standardized")
    params = StandardizationParams(mean=mean, sd=sd)
    return replace(data, continuous=(X - mean) / sd), params


def coarsen_factor(raw, rule) -> np.ndarray:
    """Coarsen a real matrix into factor levels {1..A}.

    `rule` is either the string ``"nonzero"`` (level 1 for exact zeros,
    level 2 otherwise, the copy-number convention) or a sorted sequence
    of cut points defining A = len(cuts)+1 monotone bins
    ``(-inf, c1], (c1, c2], ..., (c_{A-1}, inf)``.  A list of per-column
    cut sequences applies one rule per column.
    """
    raw = np.asarray(raw, dtype=float)
    if not np.isfinite(raw).all():
        raise ValueError("coarsen_factor input must be finite")
    if isinstance(rule, str):
        if rule != "nonzero":
            raise ValueError(f"unknown coarsening rule {rule!r}")
        return np.where(raw == 0.0, 1, 2).astype(np.int64)
    rule = list(rule)
    per_column = bool(rule) and isinstance(rule[0], (list, tuple, np.ndarray))
    if per_column:
        if raw.ndim != 2 or len(rule) != raw.shape[1]:
            raise ValueError("need one cut sequence per column")
        out = np.empty(raw.shape, dtype=np.int64)
        for j, cuts in enumerate(rule):
            out[:, j] = _apply_cuts(raw[:, j], cuts)
        return out
    return _apply_cuts(raw, rule)


def _apply_cuts(values, cuts) -> np.ndarray:
    cuts = np.asarray(cuts, dtype=float)
    if cuts.size == 0:
        raise ValueError("cut rule must contain at least one cut point")
    if (np.diff(cuts) <= 0).any():
        raise ValueError("cut points must be strictly increasing")
    return (1 + np.searchsorted(cuts, values, side="left")).astype(np.int64)
