"""Supervised classifiers over fixed-dimension descriptors.

Two models: k-nearest-neighbors over the raw training set, and a
one-vs-one soft-margin SVM trained by sequential minimal optimization
with either a linear kernel or the exponential chi-square kernel
K(x, y) = exp(-gamma * chi2(x, y)) used for histogram descriptors.
Every tie (distance, vote, margin) resolves deterministically.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, NumericError

__all__ = [
    "chi_square_distance",
    "chi_square_kernel",
    "KernelConfig",
    "LabeledDataset",
    "KnnModel",
    "knn_classify",
    "SvmModel",
    "svm_train",
    "svm_classify",
    "EvaluationReport",
    "evaluate",
    "save_svm_model",
    "load_svm_model",
]


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if (x < 0).any() or (y < 0).any():
        raise DataError("chi-square inputs must be non-negative")
    return x, y


def chi_square_distance(x, y) -> float:
    """chi2(x, y) = sum (x_i - y_i)^2 / (x_i + y_i), with 0/0 terms = 0."""
    x, y = _check_pair(x, y)
    s = x + y
    d = np.where(s > 0, (x - y) ** 2 / np.where(s > 0, s, 1.0), 0.0)
    return float(d.sum())


def chi_square_kernel(x, y, gamma: float = 1.0) -> float:
    """Exponential chi-square kernel exp(-gamma * chi2(x, y)) in (0, 1]."""
    if gamma <= 0:
        raise DataError(f"gamma must be positive, got {gamma}")
    return float(np.exp(-gamma * chi_square_distance(x, y)))


def _chi2_cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise chi-square distances between rows of a and b, (n, m)."""
    n, d = a.shape
    m = len(b)
    out = np.empty((n, m))
    block = max(1, int(2e7 // max(1, m * d)))  # cap the (block, m, d) temporary
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        diff2 = (a[lo:hi, None, :] - b[None, :, :]) ** 2
        s = a[lo:hi, None, :] + b[None, :, :]
        terms = np.where(s > 0, diff2 / np.where(s > 0, s, 1.0), 0.0)
        out[lo:hi] = terms.sum(axis=2)
    return out


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family and parameters for the SVM."""

    kind: str = "chi2"  # chi2 | linear
    gamma: Optional[float] = None  # None = 1 / dimension at train time

    def __post_init__(self):
        if self.kind not in ("chi2", "linear"):
            raise DataError(f"unknown kernel: {self.kind}")


def _kernel_matrix(cfg: KernelConfig, gamma: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if cfg.kind == "linear":
        return a @ b.T
    return np.exp(-gamma * _chi2_cross(a, b))


@dataclass
class LabeledDataset:
    """Fixed-dimension descriptors with parallel category labels."""

    vectors: np.ndarray
    labels: list[str]
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DataError("vectors must be a 2-D array")
        self.labels = [str(l) for l in self.labels]
        if len(self.labels) != len(self.vectors):
            raise DataError(f"{len(self.vectors)} vectors but {len(self.labels)} labels")
        if not self.categories:
            self.categories = tuple(sorted(set(self.labels)))
        else:
            self.categories = tuple(self.categories)
            unknown = set(self.labels) - set(self.categories)
            if unknown:
                raise DataError(f"labels outside the category set: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.vectors)


# ---------------------------------------------------------------------------
# kNN


@dataclass
class KnnModel:
    """The training data is the model."""

    dataset: LabeledDataset
    k: int = 7
    distance: str = "euclidean"  # euclidean | chi_square

    def __post_init__(self):
        if len(self.dataset) == 0:
            raise DataError("cannot build a kNN model from an empty dataset")
        if self.k < 1 or self.k > len(self.dataset):
            raise DataError(f"k={self.k} outside [1, {len(self.dataset)}]")
        if self.distance not in ("euclidean", "chi_square"):
            raise DataError(f"unknown distance: {self.distance}")


def knn_classify(model: KnnModel, x) -> tuple[str, dict[str, float]]:
    """Majority vote among the k nearest training descriptors.

    Distance ties resolve to the lower training index; a vote tie goes to
    the nearest neighbor whose class is among the tied leaders. Returns
    the label and the vote distribution over categories.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    data = model.dataset
    if x.shape[1] != data.vectors.shape[1]:
        raise DataError(f"query dimension {x.shape[1]} != model dimension {data.vectors.shape[1]}")
    if model.distance == "euclidean":
        d = np.sqrt(((data.vectors - x) ** 2).sum(axis=1))
    else:
        d = _chi2_cross(x, data.vectors).ravel()
    order = np.lexsort((np.arange(len(d)), d))[: model.k]
    votes: dict[str, float] = {c: 0.0 for c in data.categories}
    for i in order:
        votes[data.labels[i]] += 1.0
    top = max(votes.values())
    tied = {c for c, v in votes.items() if v == top}
    label = next(data.labels[i] for i in order if data.labels[i] in tied)
    total = sum(votes.values())
    return label, {c: v / total for c, v in votes.items()}


# ---------------------------------------------------------------------------
# SVM via SMO


@dataclass
class BinarySvm:
    """One trained class-pair machine: positive class first."""

    positive: str
    negative: str
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for each support vector
    bias: float
    support_indices: np.ndarray  # indices into the pair's training subset
    alphas: np.ndarray  # raw alpha for each support vector

    def decision(self, cfg: KernelConfig, gamma: float, x: np.ndarray) -> float:
        k_row = _kernel_matrix(cfg, gamma, x[None, :], self.support_vectors).ravel()
        return float(k_row @ self.dual_coef + self.bias)


class _SmoProblem:
    """SMO solver state for one binary soft-margin problem."""

    def __init__(self, kmat, y, c, tol):
        self.k = kmat
        self.y = y.astype(np.float64)
        self.c = float(c)
        self.tol = float(tol)
        self.eps = 1e-10 * max(1.0, self.c)  # alpha this close to a bound is at it
        n = len(y)
        self.alpha = np.zeros(n)
        self.b = 0.0
        self.objective_history: list[float] = []

    def decision_all(self) -> np.ndarray:
        return self.k @ (self.alpha * self.y) + self.b

    def kkt_violations(self) -> np.ndarray:
        """Per-point violation of the complementary-slackness conditions."""
        f = self.decision_all()
        r = self.y * (f - self.y)  # y*f - 1
        at_lower = self.alpha <= self.eps
        at_upper = self.alpha >= self.c - self.eps
        viol = np.where(at_lower, np.maximum(0.0, -r), 0.0)
        viol = np.where(~at_lower & ~at_upper, np.abs(r), viol)
        viol = np.where(at_upper & ~at_lower, np.maximum(0.0, r), viol)
        return viol

    def dual_objective(self) -> float:
        ay = self.alpha * self.y
        return float(self.alpha.sum() - 0.5 * ay @ self.k @ ay)

    def _step(self, i: int, j: int, errors: np.ndarray) -> bool:
        if i == j:
            return False
        a_i, a_j = self.alpha[i], self.alpha[j]
        y_i, y_j = self.y[i], self.y[j]
        if y_i != y_j:
            low = max(0.0, a_j - a_i)
            high = min(self.c, self.c + a_j - a_i)
        else:
            low = max(0.0, a_i + a_j - self.c)
            high = min(self.c, a_i + a_j)
        if low >= high:
            return False
        eta = self.k[i, i] + self.k[j, j] - 2.0 * self.k[i, j]
        if eta <= 0:
            return False
        a_j_new = a_j + y_j * (errors[i] - errors[j]) / eta
        a_j_new = min(high, max(low, a_j_new))
        if abs(a_j_new - a_j) < 1e-12:
            return False
        a_i_new = a_i + y_i * y_j * (a_j - a_j_new)

        d_i, d_j = a_i_new - a_i, a_j_new - a_j
        b1 = self.b - errors[i] - y_i * d_i * self.k[i, i] - y_j * d_j * self.k[i, j]
        b2 = self.b - errors[j] - y_i * d_i * self.k[i, j] - y_j * d_j * self.k[j, j]
        if self.eps < a_i_new < self.c - self.eps:
            self.b = b1
        elif self.eps < a_j_new < self.c - self.eps:
            self.b = b2
        else:
            self.b = (b1 + b2) / 2.0
        self.alpha[i] = a_i_new
        self.alpha[j] = a_j_new
        return True

    def solve(self, max_steps: int = 100000, track_objective: bool = False) -> None:
        """Take pair steps until no point violates its KKT condition by
        more than tol. The first index is the worst violator; the second
        maximizes |E_i - E_j| (falling back down that ranking when the
        top choice cannot make progress)."""
        if track_objective:
            self.objective_history.append(self.dual_objective())
        for _ in range(max_steps):
            viol = self.kkt_violations()
            if viol.max() <= self.tol:
                return
            errors = self.decision_all() - self.y
            progressed = False
            for i in np.argsort(-viol):
                if viol[i] <= self.tol:
                    break
                for j in np.argsort(-np.abs(errors[i] - errors)):
                    if self._step(int(i), int(j), errors):
                        progressed = True
                        break
                if progressed:
                    break
            if not progressed:
                return  # numerical floor: no pair can improve
            if track_objective:
                self.objective_history.append(self.dual_objective())
        raise NumericError("SMO did not converge within the step budget")


@dataclass
class SvmModel:
    """One-vs-one multiclass SVM over all unordered class pairs."""

    categories: tuple[str, ...]
    machines: list[BinarySvm]
    kernel: KernelConfig
    gamma: float
    c: float
    objective_histories: dict[tuple[str, str], list[float]] = field(default_factory=dict)
    kkt_max_violation: float = 0.0


def svm_train(
    data: LabeledDataset,
    kernel: KernelConfig = KernelConfig(),
    c: float = 1.0,
    tol: float = 1e-3,
    track_objective: bool = False,
) -> SvmModel:
    """Train one binary SMO problem per unordered class pair.

    gamma defaults to 1 / descriptor dimension when the kernel config
    leaves it unset. Raises on single-class data or non-positive C.
    """
    if c <= 0:
        raise DataError(f"C must be positive, got {c}")
    categories = data.categories
    if len(categories) < 2:
        raise DataError("svm needs at least 2 classes")
    gamma = kernel.gamma if kernel.gamma is not None else 1.0 / data.vectors.shape[1]
    labels = np.asarray(data.labels)

    machines = []
    histories = {}
    worst_kkt = 0.0
    for ai in range(len(categories)):
        for bi in range(ai + 1, len(categories)):
            pos, neg = categories[ai], categories[bi]
            mask = (labels == pos) | (labels == neg)
            subset = np.flatnonzero(mask)
            x = data.vectors[subset]
            y = np.where(labels[subset] == pos, 1.0, -1.0)
            kmat = _kernel_matrix(kernel, gamma, x, x)
            problem = _SmoProblem(kmat, y, c, tol)
            problem.solve(track_objective=track_objective)
            worst_kkt = max(worst_kkt, float(problem.kkt_violations().max()))
            sv = np.flatnonzero(problem.alpha > problem.eps)
            machines.append(
                BinarySvm(
                    positive=pos,
                    negative=neg,
                    support_vectors=x[sv].copy(),
                    dual_coef=(problem.alpha * problem.y)[sv],
                    bias=problem.b,
                    support_indices=sv,
                    alphas=np.clip(problem.alpha[sv], 0.0, c),
                )
            )
            if track_objective:
                histories[(pos, neg)] = problem.objective_history
    return SvmModel(
        categories=categories,
        machines=machines,
        kernel=kernel,
        gamma=gamma,
        c=c,
        objective_histories=histories,
        kkt_max_violation=worst_kkt,
    )


def svm_classify(model: SvmModel, x) -> tuple[str, dict[str, float]]:
    """One-vs-one voting: each machine votes with the sign of its decision
    value; the label is the class with most votes, ties resolving to the
    largest summed |decision| and then to category order."""
    if not model.machines:
        raise DataError("untrained svm model")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    dim = model.machines[0].support_vectors.shape[1]
    if len(x) != dim:
        raise DataError(f"query dimension {len(x)} != model dimension {dim}")
    votes = {cat: 0.0 for cat in model.categories}
    margins = {cat: 0.0 for cat in model.categories}
    for machine in model.machines:
        value = machine.decision(model.kernel, model.gamma, x)
        winner = machine.positive if value > 0 else machine.negative
        votes[winner] += 1.0
        margins[winner] += abs(value)
    top = max(votes.values())
    tied = [cat for cat in model.categories if votes[cat] == top]
    label = max(tied, key=lambda cat: (margins[cat], -model.categories.index(cat)))
    return label, votes


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvaluationReport:
    """Confusion matrix (rows = truth, columns = predicted) and the
    derived accuracy and per-class precision/recall."""

    categories: tuple[str, ...]
    confusion: np.ndarray

    def __post_init__(self):
        self.categories = tuple(self.categories)
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        nc = len(self.categories)
        if self.confusion.shape != (nc, nc):
            raise DataError(f"confusion must be {nc}x{nc}, got {self.confusion.shape}")

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.confusion)) / total if total else 0.0

    def precision(self, category: str) -> float:
        j = self.categories.index(category)
        col = self.confusion[:, j].sum()
        return float(self.confusion[j, j]) / col if col else 0.0

    def recall(self, category: str) -> float:
        i = self.categories.index(category)
        row = self.confusion[i].sum()
        return float(self.confusion[i, i]) / row if row else 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "categories": list(self.categories),
                "confusion": self.confusion.tolist(),
                "accuracy": self.accuracy,
                "precision": {c: self.precision(c) for c in self.categories},
                "recall": {c: self.recall(c) for c in self.categories},
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        payload = json.loads(text)
        return cls(categories=tuple(payload["categories"]), confusion=np.asarray(payload["confusion"]))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EvaluationReport)
            and self.categories == other.categories
            and np.array_equal(self.confusion, other.confusion)
        )


def evaluate(predictions: Sequence[str], truth: Sequence[str], categories: Sequence[str]) -> EvaluationReport:
    """Build the confusion matrix of predicted vs true labels."""
    if len(predictions) != len(truth):
        raise DataError(f"{len(predictions)} predictions but {len(truth)} truth labels")
    categories = tuple(categories)
    index = {c: i for i, c in enumerate(categories)}
    confusion = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for p, t in zip(predictions, truth):
        if t not in index:
            raise DataError(f"truth label {t!r} outside categories {categories}")
        if p not in index:
            raise DataError(f"predicted label {p!r} outside categories {categories}")
        confusion[index[t], index[p]] += 1
    return EvaluationReport(categories=categories, confusion=confusion)


# ---------------------------------------------------------------------------
# SVM model serialization


_MAGIC = b"B3SV"
_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _read_str(buf) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def save_svm_model(model: SvmModel, path) -> None:
    """Versioned binary container: kernel config, class list, then each
    pair machine's support vectors, dual coefficients, and bias."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(_pack_str(model.kernel.kind))
        fh.write(struct.pack("<ddd", model.gamma, model.c, 0.0))
        fh.write(struct.pack("<H", len(model.categories)))
        for cat in model.categories:
            fh.write(_pack_str(cat))
        fh.write(struct.pack("<H", len(model.machines)))
        for machine in model.machines:
            fh.write(_pack_str(machine.positive))
            fh.write(_pack_str(machine.negative))
            n, dim = machine.support_vectors.shape
            fh.write(struct.pack("<IId", n, dim, machine.bias))
            fh.write(machine.support_vectors.astype("<f8").tobytes())
            fh.write(machine.dual_coef.astype("<f8").tobytes())
            fh.write(machine.alphas.astype("<f8").tobytes())


def load_svm_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != _MAGIC:
        raise DataError(f"not an svm model file: {path}")
    (version,) = struct.unpack("<B", buf.read(1))
    if version != _VERSION:
        raise DataError(f"unsupported svm model version {version}")
    kind = _read_str(buf)
    gamma, c, _ = struct.unpack("<ddd", buf.read(24))
    (ncat,) = struct.unpack("<H", buf.read(2))
    categories = tuple(_read_str(buf) for _ in range(ncat))
    (nmach,) = struct.unpack("<H", buf.read(2))
    machines = []
    for _ in range(nmach):
        pos = _read_str(buf)
        neg = _read_str(buf)
        n, dim, bias = struct.unpack("<IId", buf.read(16))
        sv = np.frombuffer(buf.read(n * dim * 8), dtype="<f8").reshape(n, dim).copy()
        coef = np.frombuffer(buf.read(n * 8), dtype="<f8").copy()
        alphas = np.frombuffer(buf.read(n * 8), dtype="<f8").copy()
        machines.append(
            BinarySvm(
                positive=pos,
                negative=neg,
                support_vectors=sv,
                dual_coef=coef,
                bias=bias,
                support_indices=np.arange(n),
                alphas=alphas,
            )
        )
    return SvmModel(
        categories=categories,
        machines=machines,
        kernel=KernelConfig(kind=kind, gamma=gamma),
        gamma=gamma,
        c=c,
    )
