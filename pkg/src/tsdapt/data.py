"""Synthetic sinusoid benchmark, window-mean embeddings and the embeddings file format."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidLength, ParseError

N_CLASSES = 10
SERIES_LENGTH = 200
WINDOW = 4
EMBEDDING_DIM = SERIES_LENGTH // WINDOW
MAX_NOISE = 1.9

FILE_MAGIC = "tsdapt-embeddings"
FILE_VERSION = "v1"

_SPLIT_CODES = {("target", "train"): 0, ("source", "adapt"): 1, ("source", "val"): 2}


@dataclass(frozen=True)
class SinusoidConfig:
    """One split of the sinusoid benchmark.

    ``domain="target"`` only has a ``train`` split; ``domain="source"`` has
    ``adapt`` (noise ``U(0, b/2)``) and ``val`` (noise ``U(0, b)``).
    """

    noise_b: float
    domain: str = "target"
    split: str = "train"
    samples_per_class: int = 100
    seed: int = 0
    classes: int = N_CLASSES
    length: int = SERIES_LENGTH

    def __post_init__(self):
        if not 0.0 <= self.noise_b <= MAX_NOISE + 1e-12:
            raise ValueError(f"noise_b must lie in [0, {MAX_NOISE}], got {self.noise_b}")
        if (self.domain, self.split) not in _SPLIT_CODES:
            raise ValueError(f"no {self.split!r} split in the {self.domain!r} domain")
        if self.classes != N_CLASSES or self.length != SERIES_LENGTH:
            raise ValueError("the benchmark is fixed to 10 classes of length 200")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")


@dataclass(frozen=True, eq=False)
class RawDataset:
    series: np.ndarray
    labels: np.ndarray
    domain: str
    split: str


@dataclass(frozen=True, eq=False)
class LabeledEmbeddings:
    """Embedding rows ``X`` (n x d) with integer class labels ``y``.

    ``n_classes`` is the declared label-space size K when known (e.g. from a
    file header); it may exceed the number of classes actually present.
    """

    X: np.ndarray
    y: np.ndarray
    n_classes: Optional[int] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        y = np.asarray(self.y).astype(np.int64, copy=False).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def classes(self):
        return np.unique(self.y)

    def of_class(self, c):
        return self.X[self.y == c]


def clean_signal(k, length=SERIES_LENGTH):
    """``sin(2 pi (k + 1) t / length)``: class ``k`` completes ``k + 1`` cycles."""
    t = np.arange(length)
    return np.sin(2.0 * np.pi * (k + 1) * t / length)


def generate_sinusoidal(cfg):
    """Generate one split; class-major row order, reproducible from ``cfg.seed``."""
    rng = np.random.default_rng([cfg.seed, _SPLIT_CODES[(cfg.domain, cfg.split)]])
    high = cfg.noise_b / 2.0 if cfg.split == "adapt" else cfg.noise_b
    sign = -1.0 if cfg.domain == "source" else 1.0
    n = cfg.samples_per_class
    series = np.empty((cfg.classes * n, cfg.length))
    labels = np.repeat(np.arange(cfg.classes), n)
    for k in range(cfg.classes):
        base = sign * clean_signal(k, cfg.length)
        noise = rng.uniform(0.0, high, size=(n, cfg.length)) if high > 0 else 0.0
        series[k * n : (k + 1) * n] = base + noise
    return RawDataset(series, labels, cfg.domain, cfg.split)


def extract_embedding(series):
    """Non-overlapping window means of width 4: 200 steps -> 50 features.

    Accepts one series or a stack of series (last axis is time).
    """
    series = np.asarray(series, dtype=np.float64)
    if series.shape[-1] != SERIES_LENGTH:
        raise InvalidLength(f"expected {SERIES_LENGTH} time steps, got {series.shape[-1]}")
    return series.reshape(*series.shape[:-1], EMBEDDING_DIM, WINDOW).mean(axis=-1)


def embed(raw):
    return LabeledEmbeddings(extract_embedding(raw.series), raw.labels, N_CLASSES)


@dataclass(frozen=True)
class SyntheticSplits:
    target_train: LabeledEmbeddings
    source_adapt: LabeledEmbeddings
    source_val: LabeledEmbeddings


def synthetic_splits(b, seed, n_target=100, n_adapt=50, n_val=50):
    """Embedded target-train, source-adapt and source-val splits for one (b, seed)."""

    def split(domain, name, n):
        return embed(generate_sinusoidal(SinusoidConfig(b, domain, name, n, seed)))

    return SyntheticSplits(
        split("target", "train", n_target),
        split("source", "adapt", n_adapt),
        split("source", "val", n_val),
    )


# ---------------------------------------------------------------------------
# file format
#
#   tsdapt-embeddings,v1,<d>,<K>
#   <label>,<v1>,...,<vd>


def write_embeddings_file(path, data, n_classes=None):
    """Write ``data`` with shortest round-trip float rendering (``repr``)."""
    X, y = data.X, data.y
    if n_classes is None:
        n_classes = data.n_classes
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 0
    if not np.all(np.isfinite(X)):
        raise ValueError("only finite embeddings can be written")
    lines = [f"{FILE_MAGIC},{FILE_VERSION},{X.shape[1]},{n_classes}"]
    for label, row in zip(y.tolist(), X.tolist()):
        lines.append(",".join([str(label)] + [repr(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_count(text, what, lineno, path):
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {text!r}", lineno, path) from None
    if value < 0 or text.strip() != text:
        raise ParseError(f"{what} must be a nonnegative integer, got {text!r}", lineno, path)
    return value


def read_embeddings_file(path):
    """Parse an embeddings file; every problem is reported as :class:`ParseError`."""
    path = str(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if not text:
        raise ParseError("empty file (missing header)", 1, path)
    if "\r" in text:
        lineno = text[: text.index("\r")].count("\n") + 1
        raise ParseError("CR line endings are not allowed", lineno, path)
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()

    head = lines[0].split(",")
    if len(head) != 4:
        raise ParseError(f"header must have 4 fields, got {len(head)}", 1, path)
    if head[0] != FILE_MAGIC:
        raise ParseError(f"bad magic {head[0]!r}", 1, path)
    if head[1] != FILE_VERSION:
        raise ParseError(f"unsupported version {head[1]!r}", 1, path)
    d = _parse_count(head[2], "dimension", 1, path)
    K = _parse_count(head[3], "class count", 1, path)

    n = len(lines) - 1
    X = np.empty((n, d))
    y = np.empty(n, dtype=np.int64)
    for r, line in enumerate(lines[1:]):
        lineno = r + 2
        cells = line.split(",")
        if len(cells) != d + 1:
            raise ParseError(f"expected {d + 1} fields, got {len(cells)}", lineno, path)
        label = _parse_count(cells[0], "label", lineno, path)
        if label >= K:
            raise ParseError(f"label {label} outside [0, {K})", lineno, path)
        y[r] = label
        for c, cell in enumerate(cells[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r} in column {c + 2}", lineno, path) from None
            if not np.isfinite(v):
                raise ParseError(f"non-finite value {cell!r} in column {c + 2}", lineno, path)
            X[r, c] = v
    return LabeledEmbeddings(X, y, K)
