"""
Equal Recourse - Grouped Datasets
CSV ingestion, synthetic two-group scenarios, stratified splitting and subsampling
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from recourse.utils.errors import ContractViolation, CsvParseError, DataError, SchemaError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# x2 spread of the linear layout's positive blob, in units of noise_sd
POSITIVE_STRETCH = 2.0


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    """
    Feature matrix with ±1 labels and ±1 group memberships.
    - features: n×d float matrix (read-only copy)
    - labels / groups: length-n int arrays over {-1, +1}
    - both group values must be present
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {features.shape}")
        n, d = features.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs n >= 1 and d >= 1, got {features.shape}")

        labels = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        groups = np.array(self.groups, dtype=np.int64, copy=True).ravel()
        if labels.shape[0] != n or groups.shape[0] != n:
            raise DataError(
                f"labels ({labels.shape[0]}) and groups ({groups.shape[0]}) must have length {n}"
            )
        if not np.all(np.isin(labels, (-1, 1))):
            raise DataError("labels must take values in {-1, +1}")
        if not np.all(np.isin(groups, (-1, 1))):
            raise DataError("groups must take values in {-1, +1}")
        if not (np.any(groups == 1) and np.any(groups == -1)):
            raise DataError("both groups (+1 and -1) must appear at least once")

        names = tuple(str(name) for name in self.feature_names) or tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise DataError(f"expected {d} feature names, got {len(names)}")

        for array in (features, labels, groups):
            array.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "GroupedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return GroupedDataset(self.features[idx], self.labels[idx], self.groups[idx], self.feature_names)

    def cell_indices(self) -> Dict[Tuple[int, int], np.ndarray]:
        """Row indices per (label, group) cell, in a fixed cell order"""
        cells = {}
        for label in (1, -1):
            for group in (1, -1):
                cells[(label, group)] = np.flatnonzero((self.labels == label) & (self.groups == group))
        return cells


@dataclass(frozen=True)
class PreprocessSpec:
    """
    How a raw CSV maps onto a GroupedDataset.
    - categorical_columns: one-hot encoded into one 0/1 column per observed value,
      named "<column>=<value>", before the numeric check
    """

    target_column: str
    positive_target_values: FrozenSet[str]
    group_column: str
    positive_group_values: FrozenSet[str]
    standardize: bool = True
    drop_rows_with_missing: bool = True
    exclude_columns: Tuple[str, ...] = ()
    categorical_columns: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.target_column == self.group_column:
            raise ContractViolation("target_column and group_column must differ")
        object.__setattr__(self, "positive_target_values", frozenset(_token(v) for v in self.positive_target_values))
        object.__setattr__(self, "positive_group_values", frozenset(_token(v) for v in self.positive_group_values))


class SyntheticKind(Enum):
    """Synthetic two-group layouts"""
    LINEAR_SHIFTED_GAUSSIANS = "linear_shifted_gaussians"
    RING_VS_CLUSTER = "ring_vs_cluster"


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind = SyntheticKind.LINEAR_SHIFTED_GAUSSIANS
    n_per_cell: int = 100
    group_shift: float = 4.0
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind(self.kind))
        if self.n_per_cell < 2:
            raise ContractViolation(f"n_per_cell must be >= 2, got {self.n_per_cell}")
        if not self.noise_sd > 0:
            raise ContractViolation(f"noise_sd must be positive, got {self.noise_sd}")


def _token(value) -> str:
    """Canonical string form used to match target/group values"""
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return str(int(value))
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    return str(value).strip()


def _standardize(features: np.ndarray) -> np.ndarray:
    means = features.mean(axis=0)
    sds = features.std(axis=0, ddof=1) if features.shape[0] > 1 else np.zeros(features.shape[1])
    out = np.zeros_like(features)
    varying = sds > 0
    out[:, varying] = (features[:, varying] - means[varying]) / sds[varying]
    constant = int(np.count_nonzero(~varying))
    if constant:
        logger.debug(f"{constant} constant feature column(s) left as zeros after standardization")
    return out


def load_csv(path: PathLike, spec: PreprocessSpec) -> GroupedDataset:
    """Read a headered, comma-delimited UTF-8 CSV into a GroupedDataset"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")

    try:
        frame = pd.read_csv(path, sep=",", encoding="utf-8", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CsvParseError(f"Failed to parse {path}: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    for column in (spec.target_column, spec.group_column):
        if column not in frame.columns:
            raise SchemaError(f"column '{column}' not found in {path} (columns: {list(frame.columns)})")

    missing_excluded = [c for c in spec.exclude_columns if c not in frame.columns]
    if missing_excluded:
        logger.warning(f"⚠️ Excluded columns not present in {path.name}: {missing_excluded}")

    feature_columns = [
        c for c in frame.columns
        if c not in (spec.target_column, spec.group_column) and c not in spec.exclude_columns
    ]
    if not feature_columns:
        raise SchemaError(f"{path} has no feature columns besides target/group")

    categorical = [c for c in spec.categorical_columns if c in feature_columns]
    missing_categorical = [c for c in spec.categorical_columns if c not in frame.columns]
    if missing_categorical:
        logger.warning(f"⚠️ Categorical columns not present in {path.name}: {missing_categorical}")
    source = frame[feature_columns]
    if categorical:
        source = source.assign(**{c: source[c].map(lambda v: v if pd.isna(v) else _token(v)) for c in categorical})
        source = pd.get_dummies(source, columns=categorical, prefix_sep="=", dtype=np.float64)
        feature_columns = [str(c) for c in source.columns]
        logger.debug(f"One-hot encoded {categorical} into {len(feature_columns)} feature columns")

    numeric = source.apply(pd.to_numeric, errors="coerce")
    bad_cells = numeric.isna().to_numpy()
    bad_rows = bad_cells.any(axis=1) | frame[[spec.target_column, spec.group_column]].isna().any(axis=1).to_numpy()

    if bad_rows.any():
        if not spec.drop_rows_with_missing:
            row, col = np.argwhere(bad_cells)[0] if bad_cells.any() else (int(np.flatnonzero(bad_rows)[0]), None)
            where = f"column '{feature_columns[col]}'" if col is not None else "target/group"
            raise CsvParseError(f"non-numeric or missing value at data row {row + 1}, {where}")
        logger.warning(f"⚠️ Dropping {int(bad_rows.sum())} row(s) with missing or non-numeric values from {path.name}")
        keep = ~bad_rows
        numeric = numeric[keep]
        frame = frame[keep]

    if len(frame) < 2:
        raise DataError(f"{path} has fewer than 2 usable rows after cleaning")

    targets = frame[spec.target_column].map(_token)
    group_values = frame[spec.group_column].map(_token)
    labels = np.where(targets.isin(spec.positive_target_values), 1, -1)
    groups = np.where(group_values.isin(spec.positive_group_values), 1, -1)

    features = numeric.to_numpy(dtype=np.float64)
    if spec.standardize:
        features = _standardize(features)

    dataset = GroupedDataset(features, labels, groups, tuple(feature_columns))
    logger.info(f"✅ Loaded {path.name}: {dataset.n_samples} rows, {dataset.n_features} features")
    return dataset


def write_csv(ds: GroupedDataset, path: PathLike, label_column: str = "label", group_column: str = "group") -> Path:
    """Write a dataset so that load_csv (without standardization) reproduces it exactly"""
    path = Path(path)
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame[label_column] = ds.labels
    frame[group_column] = ds.groups
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    return path


def roundtrip_spec(label_column: str = "label", group_column: str = "group") -> PreprocessSpec:
    """PreprocessSpec matching the layout produced by write_csv"""
    return PreprocessSpec(
        target_column=label_column,
        positive_target_values=frozenset({"1"}),
        group_column=group_column,
        positive_group_values=frozenset({"1"}),
        standardize=False,
        drop_rows_with_missing=False,
    )


def make_synthetic(spec: SyntheticSpec) -> GroupedDataset:
    """
    Two-group toy data in 2-D, n_per_cell rows for each (label, group) cell.
    - linear_shifted_gaussians: positives share one blob at (2, 0), stretched
      to sd 2·noise along x2; group +1 negatives sit at (-2, 2), group -1
      negatives at (-2 - shift, -2)
    - ring_vs_cluster: positives cluster at the origin; negatives on a ring of
      radius 3, group +1 on the right half, group -1 on the left half pushed
      out to radius 3 + shift
    """
    rng = np.random.default_rng(spec.seed)
    m = spec.n_per_cell
    noise = spec.noise_sd

    blocks: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    groups: List[np.ndarray] = []

    def add(points: np.ndarray, label: int, group: int):
        blocks.append(points)
        labels.append(np.full(points.shape[0], label))
        groups.append(np.full(points.shape[0], group))

    if spec.kind is SyntheticKind.LINEAR_SHIFTED_GAUSSIANS:
        positive_center = np.array([2.0, 0.0])
        positive_sd = noise * np.array([1.0, POSITIVE_STRETCH])
        add(positive_center + positive_sd * rng.standard_normal((m, 2)), 1, 1)
        add(positive_center + positive_sd * rng.standard_normal((m, 2)), 1, -1)
        add(np.array([-2.0, 2.0]) + noise * rng.standard_normal((m, 2)), -1, 1)
        add(np.array([-2.0 - spec.group_shift, -2.0]) + noise * rng.standard_normal((m, 2)), -1, -1)
    else:
        add(noise * rng.standard_normal((m, 2)), 1, 1)
        add(noise * rng.standard_normal((m, 2)), 1, -1)
        for group, radius, (low, high) in (
            (1, 3.0, (-np.pi / 2, np.pi / 2)),
            (-1, 3.0 + spec.group_shift, (np.pi / 2, 3 * np.pi / 2)),
        ):
            angles = rng.uniform(low, high, m)
            radii = radius + noise * rng.standard_normal(m)
            add(np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]), -1, group)

    return GroupedDataset(np.vstack(blocks), np.concatenate(labels), np.concatenate(groups), ("x1", "x2"))


def _allocate(sizes: Sequence[int], fraction: float) -> List[int]:
    """Largest-remainder allocation of round(fraction * total) rows across cells"""
    total = int(np.floor(fraction * sum(sizes) + 0.5))
    exact = [fraction * s for s in sizes]
    counts = [int(np.floor(x)) for x in exact]
    remainders = sorted(range(len(sizes)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in remainders[: max(0, total - sum(counts))]:
        counts[k] += 1
    clamped = []
    for size, count in zip(sizes, counts):
        if size >= 2:
            count = min(max(count, 1), size - 1)
        else:
            count = size
        clamped.append(count)
    return clamped


def _guarantee_group_in_test(cells: Sequence[Tuple[int, int]], sizes: Sequence[int], counts: List[int]) -> List[int]:
    """Move one row per group from train to test when a group would otherwise be absent from test"""
    counts = list(counts)
    for group in (1, -1):
        members = [k for k, cell in enumerate(cells) if cell[1] == group]
        total = sum(sizes[k] for k in members)
        if total < 2:
            raise DataError(f"split: group {group:+d} has {total} row(s); each group needs at least 2")
        if sum(sizes[k] - counts[k] for k in members) == 0:
            donor = max(members, key=lambda k: (counts[k], -k))
            counts[donor] -= 1
            logger.warning(
                f"⚠️ split: moving one row of cell (label={cells[donor][0]}, group={group}) to test "
                f"so that group {group:+d} appears in both splits"
            )
    return counts


def split(ds: GroupedDataset, train_frac: float, seed: int) -> Tuple[GroupedDataset, GroupedDataset]:
    """
    Stratified (label, group) train/test partition, deterministic given seed.
    Single-row cells go to train unless their group would then be missing from test.
    """
    if not 0.0 < train_frac < 1.0:
        raise ContractViolation(f"train_frac must lie in (0, 1), got {train_frac}")

    rng = np.random.default_rng(seed)
    cells = ds.cell_indices()
    sizes = [len(idx) for idx in cells.values()]
    counts = _guarantee_group_in_test(list(cells), sizes, _allocate(sizes, train_frac))

    train_parts, test_parts = [], []
    for (cell, idx), n_train in zip(cells.items(), counts):
        if len(idx) == 1 and n_train == 1:
            logger.warning(f"⚠️ Cell (label={cell[0]}, group={cell[1]}) has a single row; assigning it to train")
        shuffled = rng.permutation(idx)
        train_parts.append(shuffled[:n_train])
        test_parts.append(shuffled[n_train:])

    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return ds.subset(train_idx), ds.subset(test_idx)


def subsample(ds: GroupedDataset, size: int, seed: int, attempts: int = 10) -> GroupedDataset:
    """Random rows without replacement; both groups must survive the draw"""
    if size >= ds.n_samples:
        return ds
    if size < 2:
        raise ContractViolation(f"subsample size must be >= 2, got {size}")
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        idx = np.sort(rng.choice(ds.n_samples, size=size, replace=False))
        groups = ds.groups[idx]
        if np.any(groups == 1) and np.any(groups == -1):
            return ds.subset(idx)
    raise DataError(f"could not draw a {size}-row subsample containing both groups")


# Presets for the datasets evaluated in the experiments; files are read from the data dir only.
# german.csv: the Statlog German credit table with a header row. Numeric columns
# (duration, credit_amount, installment_rate, residence_since, age,
# existing_credits, people_liable) pass through; the GERMAN_CATEGORICAL columns
# are one-hot encoded; "sex" is male/female and "credit" is 1 (good) or 2 (bad).
GERMAN_CATEGORICAL = (
    "checking_status", "credit_history", "purpose", "savings", "employment", "other_debtors",
    "property", "other_installment_plans", "housing", "job", "telephone", "foreign_worker",
)

NAMED_DATASETS: Dict[str, Tuple[str, PreprocessSpec]] = {
    "german": ("german.csv", PreprocessSpec(
        target_column="credit",
        positive_target_values=frozenset({"1"}),
        group_column="sex",
        positive_group_values=frozenset({"male", "1"}),
        categorical_columns=GERMAN_CATEGORICAL,
    )),
    "credit": ("credit.csv", PreprocessSpec(
        target_column="NoDefaultNextMonth",
        positive_target_values=frozenset({"1"}),
        group_column="Married",
        positive_group_values=frozenset({"1"}),
    )),
    "givemecredit": ("givemecredit.csv", PreprocessSpec(
        target_column="SeriousDlqin2yrs",
        positive_target_values=frozenset({"0"}),
        group_column="AgeAtLeast35",
        positive_group_values=frozenset({"1"}),
        exclude_columns=("Unnamed: 0",),
    )),
    "propublica": ("propublica.csv", PreprocessSpec(
        target_column="two_year_recid",
        positive_target_values=frozenset({"0"}),
        group_column="sex",
        positive_group_values=frozenset({"Male", "male", "1"}),
    )),
}


def load_named(name: str, data_dir: PathLike) -> GroupedDataset:
    """Load one of the preset datasets from data_dir"""
    if name not in NAMED_DATASETS:
        raise DataError(f"unknown dataset '{name}' (known: {sorted(NAMED_DATASETS)})")
    filename, spec = NAMED_DATASETS[name]
    return load_csv(Path(data_dir) / filename, spec)
