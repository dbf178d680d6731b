"""Measurement records: CSV ingestion, categorical encoding, context features,
temporal splitting and the log(1+y) target standardisation."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import IO, Iterable
from zoneinfo import ZoneInfo

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, ParseError, SchemaError

logger = logging.getLogger(__name__)

TECHS = ("LTE", "NR_NSA", "NR_SA")
CATEGORIES = ("radio", "e2e", "contextual", "deployment")
WEEK_SECONDS = 7 * 86400

TARGET_COLUMN = "dl_throughput_kbps"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # timestamp | tech | categorical | numeric | target
    category: str | None = None
    nonnegative: bool = False
    upper: float | None = None


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.kind in ("numeric", "categorical"))

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.feature_columns) + ("hour", "dow")

    @property
    def feature_category(self) -> tuple[str, ...]:
        return tuple(c.category for c in self.feature_columns) + ("contextual", "contextual")

    @property
    def categorical_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.kind in ("categorical", "tech")) + ("dow",)


DEFAULT_SCHEMA = Schema(
    columns=(
        ColumnSpec("timestamp", "timestamp"),
        ColumnSpec("tech", "tech"),
        ColumnSpec("carrier", "categorical", "deployment"),
        ColumnSpec("band", "categorical", "deployment"),
        ColumnSpec("rsrp", "numeric", "radio"),
        ColumnSpec("rsrq", "numeric", "radio"),
        ColumnSpec("sinr", "numeric", "radio"),
        ColumnSpec("timing_advance", "numeric", "radio"),
        ColumnSpec("latency_ms", "numeric", "e2e", nonnegative=True),
        ColumnSpec("jitter_ms", "numeric", "e2e", nonnegative=True),
        ColumnSpec("ttfb_ms", "numeric", "e2e", nonnegative=True),
        ColumnSpec("packet_loss", "numeric", "e2e", nonnegative=True, upper=1.0),
        ColumnSpec(TARGET_COLUMN, "target", nonnegative=True),
    )
)


class CategoryEncoder:
    """Ordinal encoder assigning codes in order of first appearance.

    Once frozen, values never seen during fitting map to ``unseen_code``,
    which is one past the largest known code.
    """

    def __init__(self, mapping: dict[str, int] | None = None, frozen: bool = False):
        self.mapping: dict[str, int] = dict(mapping or {})
        self.frozen = frozen
        codes = sorted(self.mapping.values())
        if codes != list(range(len(codes))):
            raise DataError("encoder codes must be 0..k-1 without gaps")

    @property
    def unseen_code(self) -> int:
        return len(self.mapping)

    def encode(self, value: str) -> int:
        code = self.mapping.get(value)
        if code is None:
            if self.frozen:
                return self.unseen_code
            code = len(self.mapping)
            self.mapping[value] = code
        return code

    def decode(self, code: int) -> str:
        for value, c in self.mapping.items():
            if c == code:
                return value
        raise DataError(f"code {code} has no category (unseen at fit time)")

    def freeze(self) -> "CategoryEncoder":
        return CategoryEncoder(self.mapping, frozen=True)

    def to_dict(self) -> dict[str, int]:
        return dict(self.mapping)

    def __eq__(self, other):
        return isinstance(other, CategoryEncoder) and self.mapping == other.mapping

    def __repr__(self):
        return f"CategoryEncoder({self.mapping!r}, frozen={self.frozen})"


@dataclass(frozen=True)
class Dataset:
    """Immutable column-major view of ingested records.

    ``features`` stores missing cells as NaN; ``missing_mask`` is derived from
    it. The target is kept in kbps; standardised targets come from a
    :class:`TargetTransform` fitted on the training partition.
    """

    features: np.ndarray
    throughput: np.ndarray
    timestamps: np.ndarray
    tech: np.ndarray
    feature_names: tuple[str, ...]
    feature_category: tuple[str, ...]
    encoders: dict[str, CategoryEncoder] = field(default_factory=dict)
    n_rejected: int = 0

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.features.shape[1] != len(self.feature_names):
            raise DataError("feature matrix width does not match feature_names")
        if len(self.feature_category) != len(self.feature_names):
            raise DataError("every feature needs exactly one category")
        bad = set(self.feature_category) - set(CATEGORIES)
        if bad:
            raise DataError(f"unknown feature categories {sorted(bad)}")
        for arr in (self.throughput, self.timestamps, self.tech):
            if len(arr) != n:
                raise DataError("column lengths differ")
        for arr in (self.features, self.throughput, self.timestamps, self.tech):
            arr.setflags(write=False)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_rows(self) -> int:
        return len(self)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.features)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            features=self.features[rows].copy(),
            throughput=self.throughput[rows].copy(),
            timestamps=self.timestamps[rows].copy(),
            tech=self.tech[rows].copy(),
            n_rejected=0,
        )

    def filter_tech(self, tech: str) -> "Dataset":
        return self.subset(np.flatnonzero(self.tech == tech))

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]


def derive_context(timestamp, tz: str = "UTC") -> tuple[int, int]:
    """Hour of day (0-23) and day of week (0 = Monday) in zone ``tz``.

    ``timestamp`` is epoch seconds or any string :func:`parse_timestamp` accepts.
    """
    if isinstance(timestamp, str):
        try:
            timestamp = parse_timestamp(timestamp)
        except (ValueError, OverflowError) as exc:
            raise ParseError(f"invalid timestamp {timestamp!r} ({exc})") from None
    if not math.isfinite(timestamp):
        raise ParseError(f"invalid timestamp {timestamp!r}")
    zone = timezone.utc if tz == "UTC" else ZoneInfo(tz)
    dt = datetime.fromtimestamp(timestamp, tz=zone)
    return dt.hour, dt.weekday()


def derive_context_array(timestamps: np.ndarray, tz: str = "UTC") -> tuple[np.ndarray, np.ndarray]:
    ts = np.asarray(timestamps, dtype=float)
    if tz == "UTC":
        secs = np.floor(ts)
        hour = (secs // 3600) % 24
        dow = (secs // 86400 + 3) % 7  # 1970-01-01 was a Thursday
        return hour.astype(np.int64), dow.astype(np.int64)
    pairs = [derive_context(t, tz) for t in ts]
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    hour, dow = zip(*pairs)
    return np.asarray(hour, np.int64), np.asarray(dow, np.int64)


def parse_timestamp(text: str) -> float:
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return float(int(text))
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def ingest_csv(
    source,
    schema: Schema = DEFAULT_SCHEMA,
    encoders: dict[str, CategoryEncoder] | None = None,
    tz: str = "UTC",
) -> Dataset:
    """Read measurement records into a :class:`Dataset`.

    Empty cells become NaN (missing), never imputed values. Rows with an empty
    target are dropped and counted in ``Dataset.n_rejected``. When
    ``encoders`` is given they are used frozen, so categories unseen at fit
    time map to each encoder's reserved code.
    """
    handle, owned = _open_text(source)
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise SchemaError("missing header row")
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in schema.names]
        if unknown:
            raise SchemaError(f"unknown column(s) {unknown}")
        absent = [n for n in schema.names if n not in header]
        if absent:
            raise SchemaError(f"missing column(s) {absent}")
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column names in header")
        index = {name: header.index(name) for name in schema.names}
        rows = list(reader)
    finally:
        if owned:
            handle.close()

    if encoders is None:
        enc = {name: CategoryEncoder() for name in schema.categorical_names}
    else:
        missing_enc = set(schema.categorical_names) - set(encoders)
        if missing_enc:
            raise SchemaError(f"encoders missing for {sorted(missing_enc)}")
        enc = {name: e.freeze() for name, e in encoders.items()}

    feature_cols = schema.feature_columns
    n_feat = len(schema.feature_names)
    feats: list[list[float]] = []
    ys: list[float] = []
    stamps: list[float] = []
    techs: list[str] = []
    rejected = 0

    for i, row in enumerate(rows):
        if len(row) != len(header):
            if not any(cell.strip() for cell in row):
                continue
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=i)
        cell = {name: row[j].strip() for name, j in index.items()}
        y_text = cell[TARGET_COLUMN]
        if y_text == "":
            rejected += 1
            continue
        y = _parse_number(y_text, TARGET_COLUMN, i)
        if y < 0:
            raise ParseError(f"negative throughput {y}", row=i)
        try:
            ts = parse_timestamp(cell["timestamp"])
        except (ValueError, OverflowError) as exc:
            raise ParseError(f"unparseable timestamp {cell['timestamp']!r} ({exc})", row=i) from None
        tech = cell["tech"]
        if tech not in TECHS:
            raise ParseError(f"tech {tech!r} not in {TECHS}", row=i)
        enc["tech"].encode(tech)

        values = [math.nan] * n_feat
        for k, spec in enumerate(feature_cols):
            text = cell[spec.name]
            if text == "":
                continue
            if spec.kind == "categorical":
                values[k] = float(enc[spec.name].encode(text))
                continue
            v = _parse_number(text, spec.name, i)
            if spec.nonnegative and v < 0:
                raise ParseError(f"{spec.name} must be >= 0, got {v}", row=i)
            if spec.upper is not None and v > spec.upper:
                raise ParseError(f"{spec.name} must be <= {spec.upper}, got {v}", row=i)
            values[k] = v
        hour, dow = derive_context(ts, tz)
        values[-2] = float(hour)
        values[-1] = float(enc["dow"].encode(str(dow)))
        feats.append(values)
        ys.append(y)
        stamps.append(ts)
        techs.append(tech)

    if rejected:
        logger.warning("rejected %d row(s) with missing %s", rejected, TARGET_COLUMN)

    features = np.asarray(feats, dtype=float).reshape(len(feats), n_feat)
    return Dataset(
        features=features,
        throughput=np.asarray(ys, dtype=float),
        timestamps=np.asarray(stamps, dtype=float),
        tech=np.asarray(techs, dtype=object),
        feature_names=schema.feature_names,
        feature_category=schema.feature_category,
        encoders={name: e.freeze() for name, e in enc.items()},
        n_rejected=rejected,
    )


def _parse_number(text: str, column: str, row: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"malformed number {text!r} in column {column!r}", row=row) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r} in column {column!r}", row=row)
    return v


def _format_number(v: float) -> str:
    if math.isnan(v):
        return ""
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def write_csv(dataset: Dataset, dest, schema: Schema = DEFAULT_SCHEMA) -> None:
    """Serialise a Dataset back to the ingestion CSV format.

    Non-missing numerics are written with shortest round-trip formatting, so
    re-ingesting reproduces them exactly.
    """
    own = isinstance(dest, (str, os.PathLike))
    handle = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(schema.names)
        names = dataset.feature_names
        for i in range(len(dataset)):
            out = []
            for spec in schema.columns:
                if spec.kind == "timestamp":
                    out.append(_format_number(float(dataset.timestamps[i])))
                elif spec.kind == "tech":
                    out.append(str(dataset.tech[i]))
                elif spec.kind == "target":
                    out.append(_format_number(float(dataset.throughput[i])))
                else:
                    v = float(dataset.features[i, names.index(spec.name)])
                    if spec.kind == "categorical" and not math.isnan(v):
                        out.append(dataset.encoders[spec.name].decode(int(v)))
                    else:
                        out.append(_format_number(v))
            writer.writerow(out)
    finally:
        if own:
            handle.close()


@dataclass(frozen=True)
class SplitBoundaries:
    val_start: float
    test_start: float

    def to_dict(self):
        return {"val_start": self.val_start, "test_start": self.test_start}


def split_boundaries(timestamps, val_weeks: int = 1, test_weeks: int = 2) -> SplitBoundaries:
    ts = np.asarray(timestamps, dtype=float)
    if val_weeks < 1 or test_weeks < 1:
        raise ConfigError("val_weeks and test_weeks must be >= 1")
    if ts.size == 0:
        raise ConfigError("cannot split an empty dataset")
    t_max, t_min = float(ts.max()), float(ts.min())
    held_out = (val_weeks + test_weeks) * WEEK_SECONDS
    if t_max - t_min <= held_out:
        raise ConfigError(
            f"data spans {(t_max - t_min) / WEEK_SECONDS:.2f} weeks; "
            f"need more than {val_weeks + test_weeks}"
        )
    return SplitBoundaries(val_start=t_max - held_out, test_start=t_max - test_weeks * WEEK_SECONDS)


def temporal_split(
    dataset: Dataset, val_weeks: int = 1, test_weeks: int = 2
) -> tuple[Dataset, Dataset, Dataset]:
    """Chronological train/val/test partition anchored at the latest timestamp.

    Boundaries are exact multiples of 7 * 86400 s back from ``max(timestamps)``.
    Rows keep their original relative order inside each partition.
    """
    return apply_split(dataset, split_boundaries(dataset.timestamps, val_weeks, test_weeks))


def apply_split(dataset: Dataset, b: SplitBoundaries) -> tuple[Dataset, Dataset, Dataset]:
    """Partition ``dataset`` at precomputed boundaries (e.g. shared across techs)."""
    ts = dataset.timestamps
    train = np.flatnonzero(ts < b.val_start)
    val = np.flatnonzero((ts >= b.val_start) & (ts < b.test_start))
    test = np.flatnonzero(ts >= b.test_start)
    return dataset.subset(train), dataset.subset(val), dataset.subset(test)


@dataclass(frozen=True)
class TargetTransform:
    """Standardisation of ln(1 + kbps) with training-partition statistics."""

    mu_train: float
    sigma_train: float

    def __post_init__(self):
        if not (self.sigma_train > 0 and math.isfinite(self.sigma_train)):
            raise ConfigError(f"sigma_train must be finite and > 0, got {self.sigma_train}")

    @classmethod
    def fit(cls, y_kbps) -> "TargetTransform":
        y = np.asarray(y_kbps, dtype=float)
        if y.size == 0:
            raise DataError("cannot fit target transform on zero rows")
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise DataError("throughput must be finite and >= 0")
        logs = np.log1p(y)
        sigma = float(np.std(logs))
        if sigma <= 0:
            raise DataError("training throughput has zero log-variance")
        return cls(float(np.mean(logs)), sigma)

    def forward(self, y):
        return transform_forward(y, self)

    def invert(self, z):
        return transform_invert(z, self)

    def to_dict(self):
        return {"mu_train": self.mu_train, "sigma_train": self.sigma_train}


def transform_forward(y, t: TargetTransform):
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise DataError("throughput must be >= 0")
    out = (np.log1p(arr) - t.mu_train) / t.sigma_train
    return float(out) if out.ndim == 0 else out


_MAX_LOG = math.log(np.finfo(float).max)


def transform_invert(z, t: TargetTransform):
    arr = np.asarray(z, dtype=float)
    expo = arr * t.sigma_train + t.mu_train
    over = expo > _MAX_LOG
    if np.any(over):
        warnings.warn("inverse transform overflow; saturating at float max", RuntimeWarning, stacklevel=2)
    with np.errstate(over="ignore"):
        out = np.expm1(np.minimum(expo, _MAX_LOG))
    out = np.where(over, np.finfo(float).max, np.maximum(out, 0.0))
    return float(out) if out.ndim == 0 else out


class LogTargetScaler(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :class:`TargetTransform` for pipelines."""

    def fit(self, y, _=None):
        self.transform_ = TargetTransform.fit(np.ravel(y))
        return self

    def transform(self, y):
        check_is_fitted(self)
        return transform_forward(np.ravel(y), self.transform_)

    def inverse_transform(self, z):
        check_is_fitted(self)
        return transform_invert(np.ravel(z), self.transform_)


def concat(datasets: Iterable[Dataset]) -> Dataset:
    parts = list(datasets)
    if not parts:
        raise DataError("nothing to concatenate")
    head = parts[0]
    return replace(
        head,
        features=np.concatenate([p.features for p in parts]),
        throughput=np.concatenate([p.throughput for p in parts]),
        timestamps=np.concatenate([p.timestamps for p in parts]),
        tech=np.concatenate([p.tech for p in parts]),
        n_rejected=0,
    )
