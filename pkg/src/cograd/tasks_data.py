"""Synthetic correlated-task datasets and CSV ingestion with time-ordered splits.

Row order is the time order: splits are contiguous slices, never shuffled.
The synthetic generator exposes one knob for task relatedness (the angle
between the tasks' weight vectors) and one for label sparsity (per-task
positive rates, hit by solving for the logit offset).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import ConfigError, CsvParseError, DataError

_BIAS_BRACKET = 60.0  # sigmoid saturates far inside +-60, so this always brackets


@dataclass
class MultiTaskDataset:
    """Feature matrix plus one binary label column per task.

    ``group_ids`` (optional, e.g. user ids) enable grouped ranking metrics.
    """

    features: np.ndarray  # (n, d) float64, finite
    labels: np.ndarray  # (n, T) in {0, 1}
    group_ids: np.ndarray | None = None  # (n,) identifiers

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DataError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} label rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise DataError("labels must be binary 0/1")
        if self.group_ids is not None:
            self.group_ids = np.asarray(self.group_ids)
            if self.group_ids.shape != (self.features.shape[0],):
                raise DataError("group_ids must be one identifier per row")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.labels.shape[1]

    def take(self, indices: np.ndarray) -> "MultiTaskDataset":
        """Row subset in the given order."""
        idx = np.asarray(indices)
        groups = self.group_ids[idx] if self.group_ids is not None else None
        return MultiTaskDataset(self.features[idx], self.labels[idx], groups)


@dataclass(frozen=True)
class SyntheticTaskConfig:
    """Controls for the correlated-task generator.

    ``task_angle_deg`` is the angle between task weight vectors: 0 makes the
    tasks share a decision direction, 90 makes them orthogonal.
    """

    n_samples: int
    n_features: int
    task_angle_deg: float
    positive_rates: tuple[float, ...]
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "positive_rates", tuple(float(r) for r in self.positive_rates))
        if self.n_samples <= 0:
            raise ConfigError("n_samples must be positive")
        if not self.positive_rates:
            raise ConfigError("positive_rates must name at least one task")
        if self.n_features < max(2, len(self.positive_rates)):
            raise ConfigError(
                "n_features must be at least max(2, number of tasks) "
                "to host the rotated weight vectors"
            )
        if not 0.0 <= self.task_angle_deg <= 90.0:
            raise ConfigError("task_angle_deg must lie in [0, 90]")
        if any(not 0.0 < r < 1.0 for r in self.positive_rates):
            raise ConfigError("positive_rates must lie strictly in (0, 1)")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError("label_noise must lie in [0, 0.5)")


def _task_weights(cfg: SyntheticTaskConfig) -> np.ndarray:
    """Unit weight vectors, one row per task.

    Task 0 points along axis 0; task t > 0 is rotated away from it by the
    configured angle, using axis t as the perpendicular direction so that
    distinct tasks get distinct rotations.
    """
    rho = np.deg2rad(cfg.task_angle_deg)
    weights = np.zeros((len(cfg.positive_rates), cfg.n_features))
    weights[0, 0] = 1.0
    for t in range(1, len(cfg.positive_rates)):
        weights[t, 0] = np.cos(rho)
        weights[t, t] = np.sin(rho)
    return weights


def generate_synthetic(cfg: SyntheticTaskConfig) -> MultiTaskDataset:
    """Draw standard-normal features and correlated Bernoulli task labels.

    Labels follow Bernoulli(sigmoid(3 * w_t . x + b_t)) with b_t solved by
    bisection so the realized positive rate hits the configured target.
    All tasks threshold one shared latent uniform per row, so tasks with
    identical parameters produce identical label columns. Label noise then
    flips each row with the configured probability (same rows in every task).
    """
    rng = np.random.default_rng(cfg.seed)
    features = rng.standard_normal((cfg.n_samples, cfg.n_features))
    label_latent = rng.uniform(size=cfg.n_samples)
    noise_latent = rng.uniform(size=cfg.n_samples)

    weights = _task_weights(cfg)
    labels = np.zeros((cfg.n_samples, len(cfg.positive_rates)))
    for t, rate in enumerate(cfg.positive_rates):
        scores = 3.0 * (features @ weights[t])

        # The empirical rate is a monotone step function of the bias, so
        # bisecting it directly lands within 1/n of the target.
        def rate_gap(bias: float) -> float:
            return float(np.mean(label_latent < expit(scores + bias))) - rate

        lo, hi = -_BIAS_BRACKET, _BIAS_BRACKET
        if rate_gap(lo) >= 0.0 or rate_gap(hi) <= 0.0:
            raise DataError(f"task {t}: cannot bracket bias for positive rate {rate}")
        bias = brentq(rate_gap, lo, hi, xtol=1e-12)
        column = (label_latent < expit(scores + bias)).astype(np.float64)
        realized = float(np.mean(column))
        if abs(realized - rate) > 0.02:
            raise DataError(
                f"task {t}: realized positive rate {realized:.4f} misses target "
                f"{rate:.4f} by more than 0.02; increase n_samples"
            )
        labels[:, t] = column

    if cfg.label_noise > 0.0:
        flip = noise_latent < cfg.label_noise
        labels[flip] = 1.0 - labels[flip]
    return MultiTaskDataset(features, labels)


def load_csv(path: str | Path, n_tasks: int, has_group_column: bool = False) -> MultiTaskDataset:
    """Parse a header-first CSV laid out as: group id?, features..., labels...

    The label columns are the last ``n_tasks`` columns and must be literal
    0/1. Errors name the offending physical line (header is line 1).
    """
    if n_tasks < 1:
        raise ConfigError("n_tasks must be at least 1")
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvParseError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, expected a header row") from None
        n_cols = len(header)
        n_feat = n_cols - n_tasks - (1 if has_group_column else 0)
        if n_feat < 1:
            raise CsvParseError(
                f"{path}: {n_cols} columns cannot hold {n_tasks} labels"
                f"{' plus a group column' if has_group_column else ''} and any feature"
            )
        groups: list[str] = []
        feat_rows: list[list[float]] = []
        label_rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise CsvParseError(f"{path}:{lineno}: expected {n_cols} fields, got {len(row)}")
            pos = 0
            if has_group_column:
                groups.append(row[0])
                pos = 1
            feats = []
            for c in range(pos, pos + n_feat):
                try:
                    value = float(row[c])
                except ValueError:
                    raise CsvParseError(
                        f"{path}:{lineno}: non-numeric feature {row[c]!r} in column {c + 1}"
                    ) from None
                if not np.isfinite(value):
                    raise CsvParseError(f"{path}:{lineno}: non-finite feature in column {c + 1}")
                feats.append(value)
            labs = []
            for c in range(pos + n_feat, n_cols):
                if row[c] not in ("0", "1"):
                    raise CsvParseError(
                        f"{path}:{lineno}: label must be 0 or 1, got {row[c]!r} in column {c + 1}"
                    )
                labs.append(float(row[c]))
            feat_rows.append(feats)
            label_rows.append(labs)
    if not feat_rows:
        raise CsvParseError(f"{path}: no data rows")
    return MultiTaskDataset(
        np.array(feat_rows),
        np.array(label_rows),
        np.array(groups) if has_group_column else None,
    )


def write_csv(ds: MultiTaskDataset, path: str | Path) -> None:
    """Inverse of ``load_csv``: group id?, f0..f{d-1}, label0..label{T-1}.

    Floats use repr formatting, so a write/load round trip is bitwise exact.
    """
    path = Path(path)
    header: list[str] = []
    if ds.group_ids is not None:
        header.append("group_id")
    header += [f"f{j}" for j in range(ds.n_features)]
    header += [f"label{t}" for t in range(ds.n_tasks)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n_rows):
            row: list[str] = []
            if ds.group_ids is not None:
                row.append(str(ds.group_ids[i]))
            row += [repr(float(v)) for v in ds.features[i]]
            row += [str(int(v)) for v in ds.labels[i]]
            writer.writerow(row)


@dataclass(frozen=True)
class DatasetSplits:
    train: MultiTaskDataset
    val: MultiTaskDataset
    test: MultiTaskDataset


def split(ds: MultiTaskDataset, proportions: tuple[float, float, float]) -> DatasetSplits:
    """Contiguous train/val/test split in row (time) order.

    Train and val sizes are floors of their shares; the remainder goes to
    test. Exact rational arithmetic keeps e.g. 600 at 4:1:1 from landing on
    399 through float rounding.
    """
    if len(proportions) != 3:
        raise ConfigError("proportions must be [train, val, test]")
    if any(p <= 0 for p in proportions):
        raise ConfigError("split proportions must be positive")
    total = sum(Fraction(float(p)) for p in proportions)
    n = ds.n_rows
    n_train = int(n * Fraction(float(proportions[0])) / total)
    n_val = int(n * Fraction(float(proportions[1])) / total)
    n_test = n - n_train - n_val
    if n_train == 0 or n_val == 0 or n_test == 0:
        raise ConfigError(f"split of {n} rows at {tuple(proportions)} leaves an empty part")
    idx = np.arange(n)
    return DatasetSplits(
        ds.take(idx[:n_train]),
        ds.take(idx[n_train : n_train + n_val]),
        ds.take(idx[n_train + n_val :]),
    )


def batches(
    ds: MultiTaskDataset, batch_size: int, shuffle_seed: int | None = None
) -> list[MultiTaskDataset]:
    """One epoch of row batches; every row appears exactly once.

    With a shuffle seed the epoch uses one fixed seeded permutation; without
    it, row order. The final short batch is kept.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if shuffle_seed is None:
        order = np.arange(ds.n_rows)
    else:
        order = np.random.default_rng(shuffle_seed).permutation(ds.n_rows)
    return [ds.take(order[lo : lo + batch_size]) for lo in range(0, ds.n_rows, batch_size)]


def select_tasks(ds: MultiTaskDataset, task_ids: list[int]) -> MultiTaskDataset:
    """Dataset with only the named label columns (features untouched)."""
    for t in task_ids:
        if not 0 <= t < ds.n_tasks:
            raise ConfigError(f"task id {t} out of range for {ds.n_tasks} tasks")
    return MultiTaskDataset(ds.features, ds.labels[:, task_ids], ds.group_ids)
