"""Streaming-session ingestion, QoE feature extraction, and dataset splitting.

A session is one subject-viewed adaptive-streaming playback: a per-segment
bitrate trace, stalling events, playback fps, the content's temporal/spatial
complexity scores (TI/SI), and the subjective MOS label on a 0..100 scale.
Each session maps to a fixed nine-feature row; TI and SI are tagged as
content-specific (SF), everything else as generic (GF).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

MOS_MIN = 0.0
MOS_MAX = 100.0

SESSION_COLUMNS = (
    "session_id",
    "content_id",
    "ti",
    "si",
    "fps",
    "segment_bitrates",
    "initial_stall_s",
    "intermediate_stalls",
    "mos",
)

LABEL_COLUMN = "mos"


class FeatureKind(enum.Enum):
    GENERIC = "GF"
    SPECIFIC = "SF"


class Projection(enum.Enum):
    GENERIC_ONLY = "generic"
    ALL = "all"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, named feature columns, each tagged generic or specific."""

    entries: tuple[tuple[str, FeatureKind], ...]

    def __post_init__(self):
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    @property
    def kinds(self) -> tuple[FeatureKind, ...]:
        return tuple(kind for _, kind in self.entries)

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.entries):
            if n == name:
                return i
        raise SchemaError(f"feature {name!r} not in schema {list(self.names)}")

    def kind_of(self, name: str) -> FeatureKind:
        return self.entries[self.index_of(name)][1]

    def generic_indices(self) -> list[int]:
        return [i for i, (_, k) in enumerate(self.entries) if k is FeatureKind.GENERIC]

    def generic_only(self) -> "FeatureSchema":
        return FeatureSchema(tuple(e for e in self.entries if e[1] is FeatureKind.GENERIC))

    def specific_names(self) -> tuple[str, ...]:
        return tuple(n for n, k in self.entries if k is FeatureKind.SPECIFIC)


# Fixed feature order produced by extract_features.
SPECIFIC_FEATURE_NAMES = ("TI", "SI")

DEFAULT_SCHEMA = FeatureSchema(
    (
        ("TI", FeatureKind.SPECIFIC),
        ("SI", FeatureKind.SPECIFIC),
        ("fps", FeatureKind.GENERIC),
        ("nstalls", FeatureKind.GENERIC),
        ("stallTimeIntermediateTotal", FeatureKind.GENERIC),
        ("stallTimeInitialTotal", FeatureKind.GENERIC),
        ("meanBitrate", FeatureKind.GENERIC),
        ("bitrateTrend", FeatureKind.GENERIC),
        ("lastbitrate", FeatureKind.GENERIC),
    )
)


def schema_from_names(names: Sequence[str]) -> FeatureSchema:
    """Rebuild a schema from column names; TI/SI are the known specific features."""
    return FeatureSchema(
        tuple(
            (n, FeatureKind.SPECIFIC if n in SPECIFIC_FEATURE_NAMES else FeatureKind.GENERIC)
            for n in names
        )
    )


@dataclass(frozen=True)
class SessionRecord:
    """One subject-viewed streaming session with its MOS label."""

    session_id: str
    content_id: str
    ti: float
    si: float
    fps: float
    segment_bitrates: tuple[float, ...]
    initial_stall_s: float
    intermediate_stalls: tuple[float, ...]
    mos: float

    def __post_init__(self):
        if self.ti < 0 or self.si < 0:
            raise ValidationError(f"session {self.session_id}: TI/SI must be >= 0")
        if self.fps <= 0:
            raise ValidationError(f"session {self.session_id}: fps must be > 0")
        if len(self.segment_bitrates) < 1:
            raise ValidationError(f"session {self.session_id}: needs at least one segment bitrate")
        if any(b <= 0 for b in self.segment_bitrates):
            raise ValidationError(f"session {self.session_id}: all bitrates must be > 0")
        if self.initial_stall_s < 0:
            raise ValidationError(f"session {self.session_id}: initial stall must be >= 0")
        if any(s <= 0 for s in self.intermediate_stalls):
            raise ValidationError(f"session {self.session_id}: intermediate stalls must be > 0")
        if not (MOS_MIN <= self.mos <= MOS_MAX):
            raise ValidationError(
                f"session {self.session_id}: mos={self.mos} outside [{MOS_MIN}, {MOS_MAX}]"
            )


@dataclass(frozen=True)
class FeatureVector:
    """One numeric row aligned to a schema, plus its MOS label."""

    values: tuple[float, ...]
    label: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValidationError("feature vector contains non-finite values")
        if not math.isfinite(self.label) or not (MOS_MIN <= self.label <= MOS_MAX):
            raise ValidationError(f"label {self.label} outside [{MOS_MIN}, {MOS_MAX}]")


@dataclass(frozen=True)
class Dataset:
    """Immutable feature table: schema, value matrix X, label vector y."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[1] != len(self.schema):
            raise SchemaError(
                f"row width {X.shape[1]} does not match schema width {len(self.schema)}"
            )
        if y.shape != (X.shape[0],):
            raise ValidationError(f"y shape {y.shape} does not match {X.shape[0]} rows")
        if X.size and not np.all(np.isfinite(X)):
            raise ValidationError("dataset contains non-finite feature values")
        if y.size and (not np.all(np.isfinite(y)) or y.min() < MOS_MIN or y.max() > MOS_MAX):
            raise ValidationError(f"labels must be finite and within [{MOS_MIN}, {MOS_MAX}]")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(tuple(float(v) for v in self.X[i]), float(self.y[i]))

    def with_provenance(self, provenance: str) -> "Dataset":
        return replace(self, provenance=provenance)

    def take(self, indices: np.ndarray, provenance: str | None = None) -> "Dataset":
        return Dataset(
            self.schema,
            self.X[indices],
            self.y[indices],
            self.provenance if provenance is None else provenance,
        )


def dataset_from_vectors(
    schema: FeatureSchema, vectors: Sequence[FeatureVector], provenance: str = ""
) -> Dataset:
    for v in vectors:
        if len(v.values) != len(schema):
            raise SchemaError(
                f"vector of length {len(v.values)} does not fit schema of width {len(schema)}"
            )
    X = np.array([v.values for v in vectors], dtype=np.float64).reshape(len(vectors), len(schema))
    y = np.array([v.label for v in vectors], dtype=np.float64)
    return Dataset(schema, X, y, provenance)


def _parse_float(cell: str, column: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"line {line}: non-numeric value {cell!r} in column {column!r}") from None


def _parse_float_list(cell: str, column: str, line: int) -> tuple[float, ...]:
    cell = cell.strip()
    if not cell:
        return ()
    return tuple(_parse_float(part, column, line) for part in cell.split(";"))


def load_sessions(path: str | Path) -> list[SessionRecord]:
    """Read session records from a CSV file.

    Header must be exactly ``session_id,content_id,ti,si,fps,segment_bitrates,
    initial_stall_s,intermediate_stalls,mos``. List-valued cells hold
    semicolon-separated numbers inside one (optionally quoted) cell.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {list(SESSION_COLUMNS)}") from None
        missing = [c for c in SESSION_COLUMNS if c not in header]
        extra = [c for c in header if c not in SESSION_COLUMNS]
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing columns {missing}")
            if extra:
                parts.append(f"unexpected columns {extra}")
            raise SchemaError(f"{path}: {'; '.join(parts)}")
        if tuple(header) != SESSION_COLUMNS:
            raise SchemaError(f"{path}: columns out of order, expected {list(SESSION_COLUMNS)}")

        sessions = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SESSION_COLUMNS):
                raise ParseError(f"line {line_no}: expected {len(SESSION_COLUMNS)} cells, got {len(row)}")
            rec = dict(zip(SESSION_COLUMNS, row))
            try:
                sessions.append(
                    SessionRecord(
                        session_id=rec["session_id"],
                        content_id=rec["content_id"],
                        ti=_parse_float(rec["ti"], "ti", line_no),
                        si=_parse_float(rec["si"], "si", line_no),
                        fps=_parse_float(rec["fps"], "fps", line_no),
                        segment_bitrates=_parse_float_list(
                            rec["segment_bitrates"], "segment_bitrates", line_no
                        ),
                        initial_stall_s=_parse_float(rec["initial_stall_s"], "initial_stall_s", line_no),
                        intermediate_stalls=_parse_float_list(
                            rec["intermediate_stalls"], "intermediate_stalls", line_no
                        ),
                        mos=_parse_float(rec["mos"], "mos", line_no),
                    )
                )
            except ValidationError as exc:
                raise ValidationError(f"line {line_no}: {exc}") from None
    return sessions


def save_sessions(sessions: Iterable[SessionRecord], path: str | Path) -> None:
    """Write session records in the format accepted by :func:`load_sessions`."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SESSION_COLUMNS)
        for s in sessions:
            writer.writerow(
                [
                    s.session_id,
                    s.content_id,
                    repr(float(s.ti)),
                    repr(float(s.si)),
                    repr(float(s.fps)),
                    ";".join(repr(float(b)) for b in s.segment_bitrates),
                    repr(float(s.initial_stall_s)),
                    ";".join(repr(float(t)) for t in s.intermediate_stalls),
                    repr(float(s.mos)),
                ]
            )


def _ols_slope(values: np.ndarray) -> float:
    # Least-squares slope of values against index 0..n-1; 0 for a single point.
    n = values.shape[0]
    if n < 2:
        return 0.0
    x = np.arange(n, dtype=np.float64)
    xc = x - x.mean()
    return float(xc @ (values - values.mean()) / (xc @ xc))


def extract_features(session: SessionRecord) -> FeatureVector:
    """Map one session to the fixed nine-feature row (see DEFAULT_SCHEMA order)."""
    bitrates = np.asarray(session.segment_bitrates, dtype=np.float64)
    values = (
        float(session.ti),
        float(session.si),
        float(session.fps),
        float(len(session.intermediate_stalls)),
        float(sum(session.intermediate_stalls)),
        float(session.initial_stall_s),
        float(bitrates.mean()),
        _ols_slope(bitrates),
        float(bitrates[-1]),
    )
    return FeatureVector(values, float(session.mos))


def build_feature_table(sessions: Sequence[SessionRecord], provenance: str = "") -> Dataset:
    """Extract features for every session, preserving row order."""
    return dataset_from_vectors(DEFAULT_SCHEMA, [extract_features(s) for s in sessions], provenance)


def save_feature_table(data: Dataset, path: str | Path) -> None:
    """Write a feature table CSV: feature names in schema order, then ``mos``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(data.schema.names) + [LABEL_COLUMN])
        for i in range(data.n_rows):
            writer.writerow([repr(float(v)) for v in data.X[i]] + [repr(float(data.y[i]))])


def load_feature_table(path: str | Path, schema: FeatureSchema | None = None) -> Dataset:
    """Read a feature table CSV written by :func:`save_feature_table`.

    When no schema is given, column kinds are rebuilt by name (TI/SI specific,
    the rest generic).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header[-1:] != [LABEL_COLUMN]:
            raise SchemaError(f"{path}: last column must be {LABEL_COLUMN!r}, got {header[-1:]}")
        names = header[:-1]
        if schema is None:
            schema = schema_from_names(names)
        elif list(schema.names) != names:
            raise SchemaError(
                f"{path}: header {names} does not match expected schema {list(schema.names)}"
            )
        rows = []
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names) + 1:
                raise ParseError(f"line {line_no}: expected {len(names) + 1} cells, got {len(row)}")
            rows.append([_parse_float(c, names[j], line_no) for j, c in enumerate(row[:-1])])
            labels.append(_parse_float(row[-1], LABEL_COLUMN, line_no))
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    return Dataset(schema, X, np.asarray(labels, dtype=np.float64), provenance=str(path))


def content_split(
    data: Dataset, ti_threshold: float = 85.0, si_threshold: float = 85.0
) -> tuple[Dataset, Dataset]:
    """Split by content complexity: rows with TI and SI both strictly below the
    thresholds form g0; everything else (high in either dimension) forms g1."""
    names = data.schema.names
    for required in ("TI", "SI"):
        if required not in names:
            raise SchemaError(f"content_split requires feature {required!r}, schema has {list(names)}")
    ti = data.X[:, data.schema.index_of("TI")]
    si = data.X[:, data.schema.index_of("SI")]
    low = (ti < ti_threshold) & (si < si_threshold)
    g0 = data.take(np.flatnonzero(low), provenance=f"{data.provenance}#content_g0")
    g1 = data.take(np.flatnonzero(~low), provenance=f"{data.provenance}#content_g1")
    return g0, g1


def random_split(data: Dataset, g0_size: int, seed: int) -> tuple[Dataset, Dataset]:
    """Uniform shuffle under the seed; the first g0_size rows form g0."""
    if not 0 < g0_size < data.n_rows:
        raise ValidationError(f"g0_size must be in (0, {data.n_rows}), got {g0_size}")
    perm = np.random.default_rng(seed).permutation(data.n_rows)
    g0 = data.take(perm[:g0_size], provenance=f"{data.provenance}#random_g0@{seed}")
    g1 = data.take(perm[g0_size:], provenance=f"{data.provenance}#random_g1@{seed}")
    return g0, g1


def train_test_split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; train size is round-half-up of fraction * n."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if data.n_rows < 2:
        raise ValidationError("need at least 2 rows to split into train and test")
    n_train = int(math.floor(train_fraction * data.n_rows + 0.5))
    if n_train == 0 or n_train == data.n_rows:
        raise ValidationError(
            f"degenerate split: {n_train} train rows out of {data.n_rows}"
        )
    perm = np.random.default_rng(seed).permutation(data.n_rows)
    train = data.take(perm[:n_train], provenance=f"{data.provenance}#train@{seed}")
    test = data.take(perm[n_train:], provenance=f"{data.provenance}#test@{seed}")
    return train, test


def project_features(data: Dataset, keep: Projection) -> Dataset:
    """Drop specific-tagged columns (GENERIC_ONLY) or return the dataset as-is (ALL)."""
    if keep is Projection.ALL:
        return data
    idx = data.schema.generic_indices()
    return Dataset(data.schema.generic_only(), data.X[:, idx], data.y, data.provenance)
