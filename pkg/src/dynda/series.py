"""Time-series containers and UCR-archive ingestion.

Files follow the 2018 archive layout: ``<Name>/<Name>_TRAIN.tsv`` and
``<Name>/<Name>_TEST.tsv``, one series per line with the class label first.
Missing values are kept as NaN until :func:`impute_missing` runs.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    """Raised when a series file cannot be read."""


class DegenerateRangeError(ValueError):
    """Raised when the training split has no spread to normalize over."""


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One labelled sequence, stored as a ``[channels, length]`` matrix."""

    values: np.ndarray
    label: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError(f"values must be [C, T], got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 2:
            raise ValueError(f"need C >= 1 and T >= 2, got shape {arr.shape}")
        if int(self.label) < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")
        object.__setattr__(self, "values", _frozen(arr))
        object.__setattr__(self, "label", int(self.label))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.label == other.label
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    train: tuple[TimeSeries, ...]
    test: tuple[TimeSeries, ...]
    n_classes: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        shapes = {s.shape for s in self.train + self.test}
        if len(shapes) > 1:
            raise ValueError(f"dataset {self.name!r} mixes series shapes {sorted(shapes)}")
        for s in self.train + self.test:
            if not 0 <= s.label < self.n_classes:
                raise ValueError(f"label {s.label} outside [0, {self.n_classes})")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.train or self.test)[0].shape

    def replace(self, train=None, test=None) -> "Dataset":
        return Dataset(
            train=self.train if train is None else train,
            test=self.test if test is None else test,
            n_classes=self.n_classes,
            name=self.name,
        )


@dataclass(frozen=True)
class Normalizer:
    """Global min-max map of the training split onto [-1, 1]."""

    min_val: float
    max_val: float

    def __post_init__(self):
        if not (math.isfinite(self.min_val) and math.isfinite(self.max_val)):
            raise DegenerateRangeError("normalizer bounds must be finite")
        if not self.max_val > self.min_val:
            raise DegenerateRangeError(
                f"max_val ({self.max_val}) must exceed min_val ({self.min_val})"
            )

    def __call__(self, values: np.ndarray) -> np.ndarray:
        # NaN propagates through the affine map, so missing values stay missing
        values = np.asarray(values, dtype=np.float64)
        return 2.0 * (values - self.min_val) / (self.max_val - self.min_val) - 1.0


# ---------------------------------------------------------------------------
# parsing


def _split_fields(line: str) -> list[str]:
    if "\t" in line:
        return line.split("\t")
    if "," in line:
        return line.split(",")
    return line.split()


def _parse_value(field_text: str, lineno: int) -> float:
    token = field_text.strip()
    if token == "" or token.lower() == "nan":
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric value {token!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"line {lineno}: non-finite value {token!r}")
    return value


def _label_key(token: str, lineno: int):
    token = token.strip()
    try:
        number = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric label {token!r}") from None
    if not math.isfinite(number):
        raise ParseError(f"line {lineno}: invalid label {token!r}")
    return int(number) if number.is_integer() else number


def parse_raw(text: str) -> tuple[list, np.ndarray]:
    """Read archive text into raw labels and a ``[n, T]`` value matrix."""
    labels, rows = [], []
    width, width_line = None, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = _split_fields(line.rstrip("\r\n"))
        if len(fields) < 2:
            raise ParseError(f"line {lineno}: expected a label and at least one value")
        row = [_parse_value(f, lineno) for f in fields[1:]]
        if width is None:
            width, width_line = len(row), lineno
        elif len(row) != width:
            raise ParseError(
                f"line {lineno}: ragged row with {len(row)} values "
                f"(line {width_line} has {width})"
            )
        labels.append(_label_key(fields[0], lineno))
        rows.append(row)
    if not rows:
        raise ParseError("empty input: no series found")
    return labels, np.asarray(rows, dtype=np.float64)


def remap_labels(raw_labels, label_map: dict | None = None) -> list[int]:
    """Map raw labels to 0-based ints by order of first appearance.

    ``label_map`` is extended in place so a test split can reuse the
    mapping built from its training split.
    """
    if label_map is None:
        label_map = {}
    out = []
    for raw in raw_labels:
        if raw not in label_map:
            label_map[raw] = len(label_map)
        out.append(label_map[raw])
    return out


def parse_ucr_tsv(text: str, label_map: dict | None = None) -> list[TimeSeries]:
    raw_labels, values = parse_raw(text)
    labels = remap_labels(raw_labels, label_map)
    return [TimeSeries(values[i][None, :], labels[i]) for i in range(len(labels))]


def _format_value(v: float) -> str:
    return "NaN" if math.isnan(v) else repr(float(v))


def serialize_ucr_tsv(series) -> str:
    """Inverse of :func:`parse_ucr_tsv` for single-channel series."""
    lines = []
    for s in series:
        if s.values.shape[0] != 1:
            raise ValueError("the archive text format holds one channel per series")
        fields = [str(s.label)] + [_format_value(v) for v in s.values[0]]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# normalization and imputation


def fit_normalizer(train) -> Normalizer:
    if len(train) == 0:
        raise ValueError("cannot fit a normalizer on an empty split")
    values = np.concatenate([s.values.ravel() for s in train])
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise DegenerateRangeError("training split has no finite values")
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:
        raise DegenerateRangeError(f"all training values equal {lo}")
    return Normalizer(lo, hi)


def apply_normalizer(n: Normalizer, d: Dataset) -> Dataset:
    def _map(split):
        return tuple(TimeSeries(n(s.values), s.label) for s in split)

    return d.replace(train=_map(d.train), test=_map(d.test))


def impute_missing(d: Dataset) -> Dataset:
    """Zero-fill missing values (the centre of the normalized range)."""

    def _fill(split):
        return tuple(
            TimeSeries(np.where(np.isnan(s.values), 0.0, s.values), s.label)
            if np.isnan(s.values).any()
            else s
            for s in split
        )

    return d.replace(train=_fill(d.train), test=_fill(d.test))


def prepare(d: Dataset) -> Dataset:
    """Fit on train, normalize both splits, then zero-fill."""
    return impute_missing(apply_normalizer(fit_normalizer(d.train), d))


# ---------------------------------------------------------------------------
# on-disk datasets


@dataclass
class Manifest:
    """Dataset name -> (train file, test file).

    Read from an INI file with one section per dataset::

        [TwoPatterns]
        train = /data/UCR/TwoPatterns/TwoPatterns_TRAIN.tsv
        test = /data/UCR/TwoPatterns/TwoPatterns_TEST.tsv

    Relative paths resolve against the manifest's directory.
    """

    entries: dict[str, tuple[Path, Path]] = field(default_factory=dict)

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        entries = {}
        for name in parser.sections():
            sec = parser[name]
            if "train" not in sec or "test" not in sec:
                raise ValueError(f"manifest section [{name}] needs train and test keys")
            entries[name] = (
                (path.parent / sec["train"]).resolve(),
                (path.parent / sec["test"]).resolve(),
            )
        return cls(entries)


def archive_paths(root, name: str) -> tuple[Path, Path]:
    root = Path(root)
    base = root / name if (root / name).is_dir() else root
    for ext in (".tsv", ".txt", ""):
        train, test = base / f"{name}_TRAIN{ext}", base / f"{name}_TEST{ext}"
        if train.exists() and test.exists():
            return train, test
    raise FileNotFoundError(f"no {name}_TRAIN/{name}_TEST files under {root}")


def read_dataset(train_path, test_path, name: str = "") -> Dataset:
    """Parse a train/test pair sharing one label mapping (train first)."""
    label_map: dict = {}
    train = parse_ucr_tsv(Path(train_path).read_text(), label_map)
    test = parse_ucr_tsv(Path(test_path).read_text(), label_map)
    return Dataset(train, test, n_classes=len(label_map), name=name)


def load_dataset(name: str, root=None, manifest=None) -> Dataset:
    if manifest is not None:
        entries = Manifest.read(manifest).entries
        if name not in entries:
            raise KeyError(f"dataset {name!r} not in manifest {manifest}")
        train, test = entries[name]
    elif root is not None:
        train, test = archive_paths(root, name)
    else:
        raise ValueError("need either a data root or a manifest")
    return read_dataset(train, test, name=name)


def to_arrays(split) -> tuple[np.ndarray, np.ndarray]:
    """Stack a split into ``X [n, C, T]`` and ``y [n]``."""
    X = np.stack([s.values for s in split]).astype(np.float64)
    y = np.array([s.label for s in split], dtype=np.int64)
    return X, y


def sine_square(n: int = 32, length: int = 32, seed: int = 0, noise: float = 0.05) -> list[TimeSeries]:
    """Two-class toy: noisy sines (label 0) and square waves (label 1).

    Both classes share a two-cycle period; phase and noise vary per sample.
    Classes alternate so any prefix is balanced.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    out = []
    for i in range(n):
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = np.sin(4 * np.pi * t + phase)
        label = i % 2
        if label:
            wave = np.where(wave >= 0, 1.0, -1.0)
        wave = 0.9 * wave + rng.normal(0.0, noise, length)
        out.append(TimeSeries(wave[None, :], label))
    return out


def sine_square_dataset(n_train=32, n_test=32, length=32, seed=0) -> Dataset:
    return Dataset(
        sine_square(n_train, length, seed),
        sine_square(n_test, length, seed + 10_000),
        n_classes=2,
        name="SineSquare",
    )
