"""Dataset ingestion, synthetic task generators, and seeded transformations.

File formats (little-endian):
  features  magic "MDLP", u32 version=1, u64 n, u32 d, n*d float32 row-major
  labels    magic "MDLL", u32 version=1, u64 n, u32 K, n u32 labels,
            u8 flag (1 -> n u32 type ids follow, 0 -> none)
  CSV       features as headerless rows of d floats; labels one integer per
            line, optionally preceded by a "K=<int>" line. Paths ending in
            .csv select the CSV parser; anything else is treated as binary.

Features are stored as 32-bit floats and widened to 64-bit on load. All
generators round X through float32 so that write/read roundtrips are exact.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConsistencyError, FormatError, LabelRangeError, ShapeError
from .rng import SplitMix64, derive_seed

FEATURE_MAGIC = b"MDLP"
LABEL_MAGIC = b"MDLL"
FORMAT_VERSION = 1


@dataclass
class Dataset:
    X: np.ndarray  # n x d float64 (float32-exact values)
    y: np.ndarray  # n int64 labels in [0, K)
    K: int
    type_ids: np.ndarray | None = None  # n int64, word-type identity
    name: str = ""

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ShapeError("X must be 2-D")
        if len(self.y) != self.X.shape[0]:
            raise ConsistencyError(f"{len(self.y)} labels for {self.X.shape[0]} feature rows")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.K):
            raise LabelRangeError(f"labels must lie in [0, {self.K})")
        if self.type_ids is not None:
            self.type_ids = np.ascontiguousarray(self.type_ids, dtype=np.int64)
            if len(self.type_ids) != len(self.y):
                raise ConsistencyError("type_ids length differs from labels")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(
            self.X[indices],
            self.y[indices],
            self.K,
            None if self.type_ids is None else self.type_ids[indices],
            self.name if name is None else name,
        )


# ---------------------------------------------------------------------------
# serialization


def _read_exact(f, count: int, path: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: expected {count} more bytes, got {len(data)}")
    return data


def _write_atomic(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-mdl-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_features_binary(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (n,) = struct.unpack("<Q", _read_exact(f, 8, path))
        (d,) = struct.unpack("<I", _read_exact(f, 4, path))
        raw = _read_exact(f, 4 * n * d, path)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {n}x{d} matrix")
    X32 = np.frombuffer(raw, dtype="<f4").reshape(n, d)
    return X32.astype(np.float64)


def _read_labels_binary(path: str):
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != LABEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {LABEL_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (n,) = struct.unpack("<Q", _read_exact(f, 8, path))
        (K,) = struct.unpack("<I", _read_exact(f, 4, path))
        y = np.frombuffer(_read_exact(f, 4 * n, path), dtype="<u4").astype(np.int64)
        flag = _read_exact(f, 1, path)[0]
        if flag not in (0, 1):
            raise FormatError(f"{path}: bad type-id flag {flag}")
        type_ids = None
        if flag == 1:
            type_ids = np.frombuffer(_read_exact(f, 4 * n, path), dtype="<u4").astype(np.int64)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return y, K, type_ids


def _f32_repr(v: np.float32) -> str:
    # shortest decimal string that round-trips through float32
    return str(np.float32(v))


def _read_features_csv(path: str) -> np.ndarray:
    rows = []
    d = None
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if d is None:
                d = len(parts)
            elif len(parts) != d:
                raise FormatError(f"{path}:{lineno}: expected {d} columns, got {len(parts)}")
            try:
                rows.append([np.float32(p) for p in parts])
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
    X32 = np.array(rows, dtype=np.float32) if rows else np.zeros((0, 0), dtype=np.float32)
    return X32.astype(np.float64)


def _read_labels_csv(path: str):
    labels = []
    K = None
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("K="):
                if K is not None or labels:
                    raise FormatError(f"{path}:{lineno}: K= line must come first")
                K = int(line[2:])
                continue
            try:
                labels.append(int(line))
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
    y = np.array(labels, dtype=np.int64)
    if K is None:
        K = int(y.max()) + 1 if len(y) else 1
    return y, K, None


def read_dataset(features_path: str, labels_path: str, name: str = "") -> Dataset:
    """Load a dataset pair; widens feature floats 32->64 bit, nothing else."""
    if str(features_path).endswith(".csv"):
        X = _read_features_csv(features_path)
    else:
        X = _read_features_binary(features_path)
    if str(labels_path).endswith(".csv"):
        y, K, type_ids = _read_labels_csv(labels_path)
    else:
        y, K, type_ids = _read_labels_binary(labels_path)
    if len(y) != X.shape[0]:
        raise ConsistencyError(
            f"{features_path} has {X.shape[0]} rows but {labels_path} has {len(y)} labels"
        )
    if len(y) and y.max() >= K:
        raise LabelRangeError(f"{labels_path}: label {y.max()} >= K={K}")
    return Dataset(X, y, K, type_ids, name or os.path.basename(str(features_path)))


def write_dataset(dataset: Dataset, features_path: str, labels_path: str) -> None:
    """Inverse of read_dataset; writes are atomic (temp file + rename)."""
    if str(features_path).endswith(".csv"):
        X32 = dataset.X.astype(np.float32)
        lines = [",".join(_f32_repr(v) for v in row) for row in X32]
        _write_atomic(features_path, ("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))
    else:
        head = FEATURE_MAGIC + struct.pack("<IQI", FORMAT_VERSION, dataset.n, dataset.dim)
        body = dataset.X.astype("<f4").tobytes(order="C")
        _write_atomic(features_path, head + body)
    if str(labels_path).endswith(".csv"):
        lines = [f"K={dataset.K}"] + [str(int(v)) for v in dataset.y]
        _write_atomic(labels_path, ("\n".join(lines) + "\n").encode("ascii"))
    else:
        head = LABEL_MAGIC + struct.pack("<IQI", FORMAT_VERSION, dataset.n, dataset.K)
        body = dataset.y.astype("<u4").tobytes()
        if dataset.type_ids is not None:
            body += b"\x01" + dataset.type_ids.astype("<u4").tobytes()
        else:
            body += b"\x00"
        _write_atomic(labels_path, head + body)


# ---------------------------------------------------------------------------
# label transformations


def label_counts(y: np.ndarray, K: int) -> np.ndarray:
    return np.bincount(np.asarray(y, dtype=np.int64), minlength=K).astype(np.int64)


def empirical_entropy_bits(y: np.ndarray, K: int) -> float:
    counts = label_counts(y, K)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def make_control_labels(dataset: Dataset, seed: int) -> np.ndarray:
    """Random label per word type, sampled from the empirical label
    distribution; every token of a type receives its type's label.

    Types are visited in ascending type-id order on a single stream, so the
    result does not depend on token order.
    """
    if dataset.type_ids is None:
        raise ConsistencyError("control labels require type_ids")
    counts = label_counts(dataset.y, dataset.K)
    cum = np.cumsum(counts).astype(np.float64)
    total = float(cum[-1])
    rng = SplitMix64(seed)
    types = np.unique(dataset.type_ids)
    assignment = {}
    for t in types:
        u = rng.uniform() * total
        assignment[int(t)] = int(np.searchsorted(cum, u, side="left"))
    out = np.array([assignment[int(t)] for t in dataset.type_ids], dtype=np.int64)
    return out


def randomize_labels(dataset: Dataset, seed: int, name: str | None = None) -> Dataset:
    """No-signal counterpart: labels replaced by iid uniform draws."""
    rng = SplitMix64(seed)
    y = np.array([rng.randint_below(dataset.K) for _ in range(dataset.n)], dtype=np.int64)
    return replace(dataset, y=y, name=name or (dataset.name + "-random"))


def with_control_labels(dataset: Dataset, seed: int, name: str | None = None) -> Dataset:
    return replace(dataset, y=make_control_labels(dataset, seed), name=name or (dataset.name + "-control"))


# ---------------------------------------------------------------------------
# synthetic tasks


@dataclass
class GaussianTaskSpec:
    """Two balanced Gaussian classes with means +-mu * e1, identity
    covariance; only the first coordinate carries information, so the true
    mutual information has a one-dimensional closed form."""

    n: int
    d: int
    mu: float

    def __post_init__(self):
        if self.mu < 0 or self.d < 1 or self.n < 0:
            raise ValueError("need mu >= 0, d >= 1, n >= 0")


def gaussian_task_mi_bits(mu: float, nodes: int = 201) -> float:
    """I(x; y) = 1 - E[H_b(sigmoid(2 mu t))], t ~ N(mu, 1), via
    Gauss-Hermite quadrature on the signed projection."""
    if mu == 0.0:
        return 0.0
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    t = mu + x
    a = 2.0 * mu * t
    # binary entropy of sigmoid(a) in bits, stable for large |a|
    # H_b(sigma(a)) = (log(1+e^-|a|) + |a| e^-|a| / (1+e^-|a|)) / ln 2
    absa = np.abs(a)
    e = np.exp(-absa)
    hb = (np.log1p(e) + absa * e / (1.0 + e)) / math.log(2.0)
    expected = float((w * hb).sum() / w.sum())
    return 1.0 - expected


def gen_gaussian_task(spec: GaussianTaskSpec, seed: int) -> tuple[Dataset, float]:
    """Balanced two-class Gaussian dataset plus its true MI in bits."""
    rng = SplitMix64(derive_seed(seed, 0))
    X = rng.gaussian_matrix(spec.n, spec.d)
    y = np.arange(spec.n, dtype=np.int64) % 2
    X[:, 0] += np.where(y == 1, spec.mu, -spec.mu)
    X = X.astype(np.float32).astype(np.float64)
    ds = Dataset(X, y, 2, None, f"gaussian-mu{spec.mu}")
    return ds, gaussian_task_mi_bits(spec.mu)


@dataclass
class LinearTaskSpec:
    """Labels = argmax of a fixed random linear map over the first
    `informative` coordinates, then flipped to a uniform class with
    probability `label_noise`. Type ids, when requested, are the sign
    pattern of the first `type_dims` coordinates (a coarse quantization
    of x), so control labels are constant on orthant-shaped regions."""

    n: int
    d: int
    num_classes: int
    informative: int | None = None  # None -> all d coordinates
    label_noise: float = 0.0
    type_dims: int = 0

    def __post_init__(self):
        m = self.d if self.informative is None else self.informative
        if not (1 <= m <= self.d):
            raise ValueError("informative must lie in [1, d]")
        if not (0.0 <= self.label_noise <= 1.0):
            raise ValueError("label_noise must lie in [0, 1]")
        if not (0 <= self.type_dims <= min(self.d, 31)):
            raise ValueError("type_dims must lie in [0, min(d, 31)]")


def gen_linear_task(spec: LinearTaskSpec, seed: int) -> Dataset:
    m = spec.d if spec.informative is None else spec.informative
    rng_x = SplitMix64(derive_seed(seed, 0))
    X = rng_x.gaussian_matrix(spec.n, spec.d).astype(np.float32).astype(np.float64)
    rng_map = SplitMix64(derive_seed(seed, 1))
    M = rng_map.gaussian_matrix(m, spec.num_classes)
    y = np.argmax(X[:, :m] @ M, axis=1).astype(np.int64)
    if spec.label_noise > 0.0:
        rng_noise = SplitMix64(derive_seed(seed, 2))
        for i in range(spec.n):
            if rng_noise.uniform() <= spec.label_noise:
                y[i] = rng_noise.randint_below(spec.num_classes)
    type_ids = None
    if spec.type_dims > 0:
        bits = (X[:, : spec.type_dims] > 0.0).astype(np.int64)
        type_ids = bits @ (1 << np.arange(spec.type_dims, dtype=np.int64))
    return Dataset(X, y, spec.num_classes, type_ids, f"linear-{spec.d}d{spec.num_classes}k")


# ---------------------------------------------------------------------------
# feature maps and splits


def random_features(dataset: Dataset, hidden: int, seed: int) -> Dataset:
    """x -> ReLU(Q x) with Q random orthonormal; labels untouched.

    Q has orthonormal rows when hidden <= d; when hidden > d it has
    orthonormal columns instead (the rank of an orthonormal row set is
    capped at d).
    """
    d = dataset.dim
    rng = SplitMix64(seed)
    if hidden <= d:
        Q = _orthonormal_rows(rng, hidden, d)
    else:
        Q = _orthonormal_rows(rng, d, hidden).T
    Z = np.maximum(dataset.X @ Q.T, 0.0)
    Z = Z.astype(np.float32).astype(np.float64)
    return Dataset(Z, dataset.y.copy(), dataset.K,
                   None if dataset.type_ids is None else dataset.type_ids.copy(),
                   dataset.name + f"-rf{hidden}")


def _orthonormal_rows(rng: SplitMix64, rows: int, cols: int) -> np.ndarray:
    """Gram-Schmidt on seeded Gaussian rows, with one re-orthogonalization
    pass for float64 residuals well below 1e-8."""
    Q = np.empty((rows, cols))
    for i in range(rows):
        while True:
            v = rng.gaussian_array(cols)
            for _ in range(2):
                if i:
                    v = v - Q[:i].T @ (Q[:i] @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                Q[i] = v / norm
                break
    return Q


def shuffle_split(dataset: Dataset, fractions: tuple[float, float, float], seed: int):
    """Disjoint (train, dev, test) cover of a seeded Fisher-Yates shuffle.

    Boundaries are round-half-up of the cumulative fractions; a split with a
    positive fraction must be non-empty.
    """
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    n = dataset.n
    cuts = []
    acc = 0.0
    for f in fractions:
        acc += f
        cuts.append(int(math.floor(n * acc + 0.5)))
    cuts[-1] = n
    sizes = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1]]
    for f, s in zip(fractions, sizes):
        if f > 0 and s == 0:
            raise ValueError(f"n={n} too small for fractions {fractions}")
    perm = SplitMix64(seed).permutation(n)
    parts = []
    start = 0
    for s, suffix in zip(sizes, ("train", "dev", "test")):
        idx = perm[start : start + s]
        parts.append(dataset.subset(idx, name=f"{dataset.name}-{suffix}" if dataset.name else suffix))
        start += s
    return tuple(parts)
