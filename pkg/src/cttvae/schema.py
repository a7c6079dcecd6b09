"""Schema inference, reversible mixed-type encoding, and imbalance-preserving splits.

A :class:`TableSchema` describes a delimited table: one :class:`ColumnSpec` per
column (categorical with a fixed vocabulary, or numerical with fitted mixture
modes) plus a designated target column whose values define the class labels.
Encoding turns a conforming table into a dense float matrix (one-hot blocks
for categoricals, per-mode standardized scalars plus a mode indicator for
numericals); decoding inverts it.
"""

from __future__ import annotations

import json
import hashlib
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from sklearn.mixture import BayesianGaussianMixture

NUMERICAL = "numerical"
CATEGORICAL = "categorical"

DEFAULT_CLIP = 4.0
MODE_WEIGHT_FLOOR = 0.01
SCHEMA_FORMAT_VERSION = 1


class SchemaError(ValueError):
    """A table or an encoded matrix violates the schema contract."""


@dataclass(frozen=True)
class Mode:
    """One Gaussian component of a numerical column's fitted transform."""

    mean: float
    std: float
    weight: float


@dataclass(frozen=True)
class ColumnSpec:
    """Per-column description: name, kind, and transform parameters.

    ``vocab`` is populated for categorical columns (order fixed at inference),
    ``modes`` for numericals after :func:`fit_transforms`. ``constant`` flags
    single-valued columns (kept, but reported); ``zero_variance`` flags
    numericals whose std was forced to 1 during fitting.
    """

    name: str
    kind: str
    vocab: tuple[str, ...] = ()
    modes: tuple[Mode, ...] = ()
    constant: bool = False
    zero_variance: bool = False

    @property
    def fitted(self) -> bool:
        return self.kind == CATEGORICAL or len(self.modes) > 0


@dataclass(frozen=True)
class TableSchema:
    """Ordered column specs plus the target column designation.

    ``class_vocab`` is the target column's vocabulary ordered by descending
    training count (index 0 = majority class). Instances are immutable;
    :func:`fit_transforms` returns a new schema rather than mutating.
    """

    columns: tuple[ColumnSpec, ...]
    target: str
    class_vocab: tuple[str, ...]
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if self.target not in names:
            raise SchemaError(f"target column {self.target!r} not in schema")
        if len(self.class_vocab) < 2:
            raise SchemaError("target column must have at least 2 classes")
        for col in self.columns:
            if col.kind not in (NUMERICAL, CATEGORICAL):
                raise SchemaError(f"unknown column kind {col.kind!r}")
            if col.kind == CATEGORICAL:
                if len(col.vocab) == 0:
                    raise SchemaError(f"empty vocabulary for column {col.name!r}")
                if len(set(col.vocab)) != len(col.vocab):
                    raise SchemaError(f"duplicate vocabulary entries in {col.name!r}")
            if col.modes:
                if any(m.std <= 0 for m in col.modes):
                    raise SchemaError(f"non-positive mode std in {col.name!r}")
                total = sum(m.weight for m in col.modes)
                if abs(total - 1.0) > 1e-9:
                    raise SchemaError(f"mode weights of {col.name!r} sum to {total}, not 1")

    def column(self, name: str) -> ColumnSpec:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        """All columns except the target."""
        return tuple(c for c in self.columns if c.name != self.target)

    @property
    def numerical_features(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.feature_columns if c.kind == NUMERICAL)

    @property
    def categorical_features(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.feature_columns if c.kind == CATEGORICAL)

    @property
    def num_classes(self) -> int:
        return len(self.class_vocab)


@dataclass(frozen=True)
class Span:
    """Location of one column's block inside the encoded feature axis."""

    name: str
    kind: str
    start: int
    width: int
    n_modes: int = 0  # numerical only; block = 1 scalar + n_modes indicators


@dataclass
class EncodedMatrix:
    """Row-major encoded table plus per-row integer class labels."""

    data: np.ndarray
    labels: np.ndarray
    layout: tuple[Span, ...]

    def __post_init__(self):
        if self.data.shape[0] != self.labels.shape[0]:
            raise SchemaError("data row count differs from label count")

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SplitPair:
    """A train/test partition preserving the full table's imbalance ratio."""

    train: pd.DataFrame
    test: pd.DataFrame
    ir_train: float
    ir_test: float
    ir_full: float


# ---------------------------------------------------------------------------
# Inference and cleaning
# ---------------------------------------------------------------------------

def load_csv(path) -> pd.DataFrame:
    """Read a comma-delimited UTF-8 table with a header row."""
    return pd.read_csv(path, encoding="utf-8")


def _ordered_vocab(values: pd.Series) -> tuple[str, ...]:
    # Descending count; ties keep first-appearance order.
    counts = Counter(values)
    seen: list[str] = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return tuple(sorted(seen, key=lambda v: -counts[v]))


def infer_schema(
    table: pd.DataFrame,
    target: str,
    overrides: dict[str, str] | None = None,
    drop_columns: tuple[str, ...] = (),
) -> TableSchema:
    """Infer column kinds and vocabularies from a raw table.

    Rows with missing values and exact duplicates are dropped before
    inference, as are ``drop_columns`` (identifier columns). Numeric dtype
    forces ``numerical`` unless overridden; the target column is always
    categorical. Constant columns are kept and flagged.
    """
    if table.shape[0] == 0:
        raise SchemaError("input table is empty")
    if target not in table.columns:
        raise SchemaError(f"target column {target!r} not found in table")
    overrides = dict(overrides or {})
    cleaned = clean_table(table, drop_columns=drop_columns)
    if cleaned.shape[0] == 0:
        raise SchemaError("table is empty after dropping missing rows and duplicates")

    specs = []
    class_vocab: tuple[str, ...] = ()
    for name in cleaned.columns:
        values = cleaned[name]
        kind = overrides.get(name)
        if name == target:
            kind = CATEGORICAL
        elif kind is None:
            kind = NUMERICAL if pd.api.types.is_numeric_dtype(values) else CATEGORICAL
        elif kind not in (NUMERICAL, CATEGORICAL):
            raise SchemaError(f"invalid kind override {kind!r} for column {name!r}")

        if kind == CATEGORICAL:
            as_str = values.astype(str)
            vocab = _ordered_vocab(as_str)
            specs.append(ColumnSpec(name, CATEGORICAL, vocab=vocab, constant=len(vocab) == 1))
            if name == target:
                if len(vocab) < 2:
                    raise SchemaError(f"target column {target!r} has a single value")
                class_vocab = vocab
        else:
            as_num = pd.to_numeric(values)
            specs.append(ColumnSpec(name, NUMERICAL, constant=as_num.nunique() == 1))
    return TableSchema(columns=tuple(specs), target=target, class_vocab=class_vocab)


def clean_table(table: pd.DataFrame, drop_columns: tuple[str, ...] = ()) -> pd.DataFrame:
    """Drop identifier columns, rows with missing values, and exact duplicates."""
    out = table.drop(columns=[c for c in drop_columns if c in table.columns])
    out = out.dropna().drop_duplicates().reset_index(drop=True)
    return out


def conform_table(table: pd.DataFrame, schema: TableSchema) -> pd.DataFrame:
    """Cast a table onto the schema's kinds and column order.

    Categorical cells become strings and numerical cells float64; columns not
    in the schema are dropped. Raises if a schema column is missing.
    """
    cols = {}
    for spec in schema.columns:
        if spec.name not in table.columns:
            raise SchemaError(f"column {spec.name!r} missing from table")
        if spec.kind == CATEGORICAL:
            cols[spec.name] = table[spec.name].astype(str)
        else:
            cols[spec.name] = pd.to_numeric(table[spec.name]).astype(np.float64)
    return pd.DataFrame(cols, columns=list(schema.column_names))


# ---------------------------------------------------------------------------
# Numerical transforms
# ---------------------------------------------------------------------------

def fit_transforms(table: pd.DataFrame, schema: TableSchema, max_modes: int = 10) -> TableSchema:
    """Fit per-column mixture transforms on the training table.

    Each numerical column gets a Gaussian-mixture fit with at most
    ``max_modes`` active modes (components below weight 0.01 are pruned and
    the remaining weights renormalized). ``max_modes=1`` degenerates to plain
    z-score normalization. Zero-variance columns get a single unit-std mode
    and are flagged. Returns a new schema; the input is left untouched.
    """
    if max_modes < 1:
        raise SchemaError("max_modes must be >= 1")
    df = conform_table(table, schema)
    new_specs = []
    for spec in schema.columns:
        if spec.kind == CATEGORICAL:
            new_specs.append(spec)
            continue
        x = df[spec.name].to_numpy(dtype=np.float64)
        std = float(x.std())
        if std == 0.0:
            modes = (Mode(mean=float(x[0]), std=1.0, weight=1.0),)
            new_specs.append(replace(spec, modes=modes, zero_variance=True))
            continue
        if max_modes == 1:
            modes = (Mode(mean=float(x.mean()), std=std, weight=1.0),)
            new_specs.append(replace(spec, modes=modes))
            continue
        gm = BayesianGaussianMixture(
            n_components=max_modes,
            weight_concentration_prior_type="dirichlet_process",
            weight_concentration_prior=1e-3,
            max_iter=200,
            n_init=1,
            random_state=0,
        )
        gm.fit(x.reshape(-1, 1))
        keep = gm.weights_ >= MODE_WEIGHT_FLOOR
        means = gm.means_[keep, 0]
        stds = np.sqrt(gm.covariances_[keep, 0, 0])
        weights = gm.weights_[keep]
        weights = weights / weights.sum()
        order = np.argsort(means, kind="stable")
        modes = tuple(
            Mode(mean=float(means[i]), std=float(stds[i]), weight=float(weights[i]))
            for i in order
        )
        new_specs.append(replace(spec, modes=modes))
    return replace(schema, columns=tuple(new_specs))


def _mode_log_responsibilities(x: np.ndarray, modes: tuple[Mode, ...]) -> np.ndarray:
    means = np.array([m.mean for m in modes])
    stds = np.array([m.std for m in modes])
    weights = np.array([m.weight for m in modes])
    z = (x[:, None] - means[None, :]) / stds[None, :]
    return np.log(weights)[None, :] - np.log(stds)[None, :] - 0.5 * z * z


# ---------------------------------------------------------------------------
# Encode / decode
# ---------------------------------------------------------------------------

def layout_of(schema: TableSchema) -> tuple[Span, ...]:
    """Per-column span map into the encoded feature axis."""
    spans = []
    start = 0
    for spec in schema.columns:
        if spec.kind == CATEGORICAL:
            width = len(spec.vocab)
            spans.append(Span(spec.name, CATEGORICAL, start, width))
        else:
            if not spec.modes:
                raise SchemaError(f"column {spec.name!r} has no fitted modes; call fit_transforms first")
            width = 1 + len(spec.modes)
            spans.append(Span(spec.name, NUMERICAL, start, width, n_modes=len(spec.modes)))
        start += width
    return tuple(spans)


def encode_rows(table: pd.DataFrame, schema: TableSchema) -> EncodedMatrix:
    """Encode a conforming table into a dense float64 matrix plus labels.

    Categoricals become one-hot blocks over the schema vocabulary; numericals
    become a standardized scalar (clipped to ±clip std units of the assigned
    mode) followed by a one-hot mode indicator. Unseen categorical values
    raise naming the column and value.
    """
    df = conform_table(table, schema)
    layout = layout_of(schema)
    n = df.shape[0]
    data = np.zeros((n, layout[-1].start + layout[-1].width), dtype=np.float64)

    for spec, span in zip(schema.columns, layout):
        if spec.kind == CATEGORICAL:
            index = {v: i for i, v in enumerate(spec.vocab)}
            codes = np.empty(n, dtype=np.int64)
            for r, v in enumerate(df[spec.name]):
                if v not in index:
                    raise SchemaError(f"unseen category {v!r} in column {spec.name!r}")
                codes[r] = index[v]
            data[np.arange(n), span.start + codes] = 1.0
        else:
            x = df[spec.name].to_numpy(dtype=np.float64)
            logresp = _mode_log_responsibilities(x, spec.modes)
            assigned = np.argmax(logresp, axis=1)
            means = np.array([m.mean for m in spec.modes])
            stds = np.array([m.std for m in spec.modes])
            scalar = (x - means[assigned]) / stds[assigned]
            data[:, span.start] = np.clip(scalar, -schema.clip, schema.clip)
            data[np.arange(n), span.start + 1 + assigned] = 1.0

    class_index = {v: i for i, v in enumerate(schema.class_vocab)}
    labels = np.empty(n, dtype=np.int64)
    for r, v in enumerate(df[schema.target]):
        if v not in class_index:
            raise SchemaError(f"unseen category {v!r} in column {schema.target!r}")
        labels[r] = class_index[v]
    return EncodedMatrix(data=data, labels=labels, layout=layout)


def decode_rows(matrix: EncodedMatrix | np.ndarray, schema: TableSchema) -> pd.DataFrame:
    """Invert :func:`encode_rows`; accepts soft blocks (argmax rule).

    Categorical blocks decode by argmax over the vocabulary; numericals as
    ``mean + scalar * std`` of the argmax mode, with the scalar clipped to the
    schema's bound. Output column order equals schema order.
    """
    data = matrix.data if isinstance(matrix, EncodedMatrix) else np.asarray(matrix, dtype=np.float64)
    if data.ndim != 2:
        raise SchemaError("encoded data must be a 2-D matrix")
    layout = layout_of(schema)
    expected = layout[-1].start + layout[-1].width
    if data.shape[1] != expected:
        raise SchemaError(f"encoded width {data.shape[1]} does not match schema layout width {expected}")

    cols = {}
    for spec, span in zip(schema.columns, layout):
        block = data[:, span.start : span.start + span.width]
        if spec.kind == CATEGORICAL:
            codes = np.argmax(block, axis=1)
            cols[spec.name] = np.array(spec.vocab, dtype=object)[codes]
        else:
            scalar = np.clip(block[:, 0], -schema.clip, schema.clip)
            assigned = np.argmax(block[:, 1:], axis=1)
            means = np.array([m.mean for m in spec.modes])
            stds = np.array([m.std for m in spec.modes])
            cols[spec.name] = means[assigned] + scalar * stds[assigned]
    return pd.DataFrame(cols, columns=list(schema.column_names))


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _imbalance_ratio(values: pd.Series, class_vocab: tuple[str, ...]) -> float:
    counts = values.value_counts()
    per_class = [int(counts.get(v, 0)) for v in class_vocab]
    if min(per_class) == 0:
        raise SchemaError("a class is absent from one side of the split")
    return max(per_class) / min(per_class)


def stratified_split(
    table: pd.DataFrame, schema: TableSchema, test_fraction: float, seed: int
) -> SplitPair:
    """Split per-class proportionally (rounded) so both halves keep the IR.

    Every class must have at least 2 rows so it can appear in both halves.
    Raises when a class is too small for the resulting split to preserve the
    full table's imbalance ratio within 2%.
    """
    if not 0.0 < test_fraction < 1.0:
        raise SchemaError("test_fraction must be in (0, 1)")
    df = conform_table(table, schema)
    rng = np.random.default_rng(seed)
    target = df[schema.target]

    test_parts: list[np.ndarray] = []
    train_parts: list[np.ndarray] = []
    for value in schema.class_vocab:
        idx = np.flatnonzero((target == value).to_numpy())
        n_c = idx.size
        if n_c < 2:
            raise SchemaError(f"class {value!r} has {n_c} row(s); need >= 2 to appear in both splits")
        n_test = int(round(n_c * test_fraction))
        n_test = min(max(n_test, 1), n_c - 1)
        perm = rng.permutation(idx)
        test_parts.append(perm[:n_test])
        train_parts.append(perm[n_test:])

    test_idx = rng.permutation(np.concatenate(test_parts))
    train_idx = rng.permutation(np.concatenate(train_parts))
    train = df.iloc[train_idx].reset_index(drop=True)
    test = df.iloc[test_idx].reset_index(drop=True)

    ir_full = _imbalance_ratio(target, schema.class_vocab)
    ir_train = _imbalance_ratio(train[schema.target], schema.class_vocab)
    ir_test = _imbalance_ratio(test[schema.target], schema.class_vocab)
    if abs(ir_train - ir_test) / ir_full > 0.02:
        raise SchemaError(
            f"split cannot preserve the imbalance ratio: train IR {ir_train:.3f}, "
            f"test IR {ir_test:.3f}, full IR {ir_full:.3f}; a class is too small"
        )
    return SplitPair(train=train, test=test, ir_train=ir_train, ir_test=ir_test, ir_full=ir_full)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def schema_to_json(schema: TableSchema) -> str:
    doc = {
        "version": SCHEMA_FORMAT_VERSION,
        "target": schema.target,
        "class_vocab": list(schema.class_vocab),
        "clip": schema.clip,
        "columns": [
            {
                "name": c.name,
                "kind": c.kind,
                "vocab": list(c.vocab),
                "modes": [{"mean": m.mean, "std": m.std, "weight": m.weight} for m in c.modes],
                "constant": c.constant,
                "zero_variance": c.zero_variance,
            }
            for c in schema.columns
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def schema_from_json(text: str) -> TableSchema:
    doc = json.loads(text)
    if doc.get("version") != SCHEMA_FORMAT_VERSION:
        raise SchemaError(f"unsupported schema format version {doc.get('version')!r}")
    columns = tuple(
        ColumnSpec(
            name=c["name"],
            kind=c["kind"],
            vocab=tuple(c["vocab"]),
            modes=tuple(Mode(**m) for m in c["modes"]),
            constant=c.get("constant", False),
            zero_variance=c.get("zero_variance", False),
        )
        for c in doc["columns"]
    )
    return TableSchema(
        columns=columns,
        target=doc["target"],
        class_vocab=tuple(doc["class_vocab"]),
        clip=doc["clip"],
    )


def schema_hash(schema: TableSchema) -> str:
    return hashlib.sha256(schema_to_json(schema).encode("utf-8")).hexdigest()


def save_schema(schema: TableSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(schema_to_json(schema))


def load_schema(path) -> TableSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return schema_from_json(fh.read())
