import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

import validation_tools as vt
from podn.errors import DatasetFormatError, InfeasiblePackingError, ShapeError, SplitError

logger = logging.getLogger(__name__)

MAX_PACKING_TRIES = 1000
# unit directions whose cosine is <= 0.5 sit at chord distance >= 1
MAX_COSINE = 0.5


@dataclass
class Dataset:
    """Samples with unique integer ids, string labels and float64 features (one row each)."""
    ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.labels = np.asarray([str(label) for label in self.labels], dtype=str).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if not (self.ids.size == self.labels.size == self.features.shape[0]):
            raise ShapeError(
                f"{self.ids.size} ids, {self.labels.size} labels, {self.features.shape[0]} feature rows"
            )
        if not vt.detect_duplicates(self.ids):
            raise DatasetFormatError("sample ids are not unique")

    def __len__(self) -> int:
        return self.ids.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_registry(self) -> List[str]:
        return sorted(set(self.labels.tolist()))

    def subset(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.ids[positions], self.labels[positions], self.features[positions])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=[f"f{i}" for i in range(self.feature_dim)])
        frame.insert(0, "label", self.labels)
        return frame


def load_dataset(path) -> Dataset:
    """
    Loads a dataset CSV with header ``label,f0,f1,...,f{d-1}``:
      1. warns when the file does not end in .csv
      2. reads labels as strings and features with round-trip float precision
      3. checks the header and drops blank lines, keeping each row's file line
      4. converts every feature to a finite float, reporting the first bad line
      5. assigns ids 0..S-1 in file order
    """
    path = Path(path)

    # 1. extension
    vt.detect_endswith(path)

    # 2. read raw
    try:
        df = pd.read_csv(path, dtype={"label": str}, float_precision="round_trip",
                         skipinitialspace=True, keep_default_na=False, na_values=[""],
                         skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise DatasetFormatError(f"{path}: file is empty") from None
    except pd.errors.ParserError as exc:
        # pandas names the offending line ("Expected 3 fields in line 4, saw 4")
        raise DatasetFormatError(f"{path}: {exc}".strip()) from None

    # 3. header, blank lines
    if not vt.detect_header(df.columns):
        raise DatasetFormatError(
            f"{path}: line 1: header must be label,f0,...,f{{d-1}}, got {','.join(map(str, df.columns))}"
        )
    feature_cols = list(df.columns[1:])
    blank = df.isnull().all(axis=1).to_numpy()
    lines = np.flatnonzero(~blank) + 2
    df = df[~blank].reset_index(drop=True)

    # 4. numeric features; short rows and non-numeric cells surface as NaN
    features = df[feature_cols].apply(pd.to_numeric, errors="coerce")
    checked = pd.concat([df[["label"]], features], axis=1)
    if not vt.detect_nans(checked):
        line = lines[vt.locate_nans(checked, offset=0)[0]]
        raise DatasetFormatError(
            f"{path}: line {line}: expected a label and {len(feature_cols)} numeric features"
        )
    features = features.astype(np.float64)
    infinite = ~np.isfinite(features.to_numpy()).all(axis=1)
    if infinite.any():
        line = lines[np.flatnonzero(infinite)[0]]
        raise DatasetFormatError(f"{path}: line {line}: features must be finite")

    # 5. ids
    dataset = Dataset(np.arange(len(df)), df["label"].to_numpy(), features.to_numpy(dtype=np.float64))
    logger.info("loaded %d samples of dimension %d from %s", len(dataset), dataset.feature_dim, path)
    return dataset


def save_dataset(dataset: Dataset, path) -> Path:
    """Write ``dataset`` in the CSV layout read by ``load_dataset``; ids are not stored."""
    path = Path(path)
    dataset.to_frame().to_csv(path, index=False)
    return path


def _pack_directions(n_clusters: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    directions = []
    while len(directions) < n_clusters:
        for _ in range(MAX_PACKING_TRIES):
            candidate = rng.standard_normal(dim)
            candidate /= np.linalg.norm(candidate)
            if all(candidate @ other <= MAX_COSINE for other in directions):
                directions.append(candidate)
                break
        else:
            raise InfeasiblePackingError(
                f"could not place {n_clusters} separated centers in {dim} dimensions "
                f"({len(directions)} placed after {MAX_PACKING_TRIES} tries)"
            )
    return np.vstack(directions)


def generate_synthetic(n_clusters: int = 11, dim: int = 16, per_cluster: int = 100,
                       separation: float = 6.0, sigma: float = 1.0, seed: int = 0) -> Dataset:
    """
    Isotropic Gaussian clusters whose centers lie on a sphere.

    The sphere radius is chosen so the closest two centers are exactly
    ``separation * sigma`` apart. Labels are ``c00``, ``c01``, ... and samples
    are ordered cluster by cluster.
    """
    if n_clusters < 2:
        raise ValueError(f"at least 2 clusters are required, got {n_clusters}")
    if separation <= 0 or sigma <= 0:
        raise ValueError(f"separation and sigma must be positive, got {separation}, {sigma}")
    if dim < 1 or per_cluster < 1:
        raise ValueError(f"dim and per_cluster must be >= 1, got {dim}, {per_cluster}")

    rng = np.random.default_rng(seed)
    directions = _pack_directions(n_clusters, dim, rng)
    chords = np.linalg.norm(directions[:, None, :] - directions[None, :, :], axis=2)
    min_chord = chords[np.triu_indices(n_clusters, k=1)].min()
    centers = directions * (separation * sigma / min_chord)

    features = np.vstack([c + sigma * rng.standard_normal((per_cluster, dim)) for c in centers])
    labels = np.repeat([f"c{k:02d}" for k in range(n_clusters)], per_cluster)
    logger.debug("generated %d clusters, center radius %.3f", n_clusters, separation * sigma / min_chord)
    return Dataset(np.arange(features.shape[0]), labels, features)


@dataclass
class OpenSplit:
    known_labels: List[str]
    unknown_labels: List[str]
    initial: Dataset
    incremental: Dataset
    test: Dataset
    discarded: int = 0
    sizes: Dict[str, Tuple[int, int, int]] = field(default_factory=dict)

    def stream(self) -> Tuple[List[int], np.ndarray]:
        """Visible side of the incremental stream: ids and features, no labels."""
        return [int(i) for i in self.incremental.ids], self.incremental.features

    def oracle_labels(self) -> Dict[int, str]:
        return {int(i): str(label) for i, label in zip(self.incremental.ids, self.incremental.labels)}

    def test_unknown_mask(self) -> np.ndarray:
        return np.isin(self.test.labels, self.unknown_labels)


def open_split(dataset: Dataset, known_count: int, min_incremental: int = 10,
               test_fraction: float = 0.3, seed: int = 0) -> OpenSplit:
    """
    Seeded known/unknown protocol:
      1. permutes the categories and takes the first ``known_count`` as knowns
      2. shuffles each category and cuts it into test (``round(test_fraction * n)``,
         at least 1), incremental (``min_incremental``) and initial (the rest,
         knowns only; the rest of an unknown category is discarded)
      3. shuffles the incremental stream
    """
    registry = dataset.label_registry
    if not 1 <= known_count < len(registry):
        raise SplitError(f"known_count must lie in [1, {len(registry) - 1}], got {known_count}")
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)

    # 1. category partition
    order = rng.permutation(len(registry))
    known = sorted(registry[i] for i in order[:known_count])
    unknown = sorted(registry[i] for i in order[known_count:])

    # 2. per-category sample partition
    initial, incremental, test = [], [], []
    sizes, discarded = {}, 0
    for label in registry:
        idx = rng.permutation(np.flatnonzero(dataset.labels == label))
        n_test = max(1, int(round(test_fraction * idx.size)))
        is_known = label in known
        needed = n_test + min_incremental + (1 if is_known else 0)
        if idx.size < needed:
            raise SplitError(
                f"category {label!r} has {idx.size} samples, needs at least {needed} "
                f"({n_test} test, {min_incremental} incremental{', 1 initial' if is_known else ''})"
            )
        test.append(idx[:n_test])
        incremental.append(idx[n_test:n_test + min_incremental])
        rest = idx[n_test + min_incremental:]
        if is_known:
            initial.append(rest)
        else:
            discarded += rest.size
        sizes[label] = (rest.size if is_known else 0, min_incremental, n_test)

    # 3. stream order
    stream = rng.permutation(np.concatenate(incremental))
    split = OpenSplit(
        known_labels=known,
        unknown_labels=unknown,
        initial=dataset.subset(np.sort(np.concatenate(initial))),
        incremental=dataset.subset(stream),
        test=dataset.subset(np.sort(np.concatenate(test))),
        discarded=discarded,
        sizes=sizes,
    )
    logger.info("split: %d known %s, %d unknown %s; %d initial, %d stream, %d test",
                len(known), known, len(unknown), unknown,
                len(split.initial), len(split.incremental), len(split.test))
    return split


def sample_stream_prefix(split: OpenSplit, budget: int) -> Dataset:
    """Initial training set plus the first ``budget`` stream samples with their labels."""
    budget = max(0, min(int(budget), len(split.incremental)))
    prefix = split.incremental.subset(np.arange(budget))
    return Dataset(
        np.concatenate([split.initial.ids, prefix.ids]),
        np.concatenate([split.initial.labels, prefix.labels]),
        np.vstack([split.initial.features, prefix.features]),
    )

