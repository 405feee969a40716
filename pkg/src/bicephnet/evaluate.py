"""Slice and subject metrics, majority voting, kNN, neighbourhood reports, PCA, paired t-test."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateInputError, ValidationError

DEFAULT_K_SET = (10, 20, 30, 40, 50)


@dataclass
class SubjectVerdict:
    subject_id: str
    true_class: int
    predicted_class: int
    votes: list
    tie: bool = False

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.true_class


def aggregate_subject(votes, n_classes: int = 2, subject_id=None, true_class=None) -> SubjectVerdict:
    """Majority vote of per-slice predicted classes.

    Binary: class 1 wins with at least ceil(m/2) votes, so an exact tie on
    even m goes to class 1 (the disease class in every binary task) and the
    verdict is flagged. Multiclass: plurality, ties to the lowest class index.
    """
    votes = np.asarray(votes, dtype=np.int64).reshape(-1)
    if votes.size == 0:
        raise ValidationError("cannot aggregate an empty vote list")
    if votes.min() < 0 or votes.max() >= n_classes:
        raise ValidationError(f"vote outside [0, {n_classes})")
    counts = np.bincount(votes, minlength=n_classes)
    m = votes.size
    if n_classes == 2:
        threshold = (m + 1) // 2
        pred = 1 if counts[1] >= threshold else 0
        tie = bool(counts[0] == counts[1])
    else:
        top = counts.max()
        pred = int(np.argmax(counts))
        tie = bool(np.sum(counts == top) > 1)
    return SubjectVerdict(subject_id, true_class, int(pred), counts.tolist(), tie)


def subject_verdicts(subject_ids, labels, predictions, n_classes: int) -> list:
    """Group slice predictions by subject (first-seen order) and vote."""
    subject_ids = np.asarray(subject_ids, dtype=object)
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    order = {}
    for i, sid in enumerate(subject_ids):
        order.setdefault(sid, []).append(i)
    out = []
    for sid, idx in order.items():
        truth = set(labels[idx].tolist())
        if len(truth) != 1:
            raise ValidationError(f"subject {sid} has slices with different labels {truth}")
        out.append(aggregate_subject(predictions[idx], n_classes, sid, truth.pop()))
    return out


def slice_accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValidationError("no predictions")
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels differ in length")
    return float(np.mean(predictions == labels))


def subject_accuracy(verdicts) -> float:
    if not verdicts:
        raise ValidationError("no subject verdicts")
    return sum(v.correct for v in verdicts) / len(verdicts)


def confusion_counts(true, pred, n_classes: int) -> list:
    """Rows are true classes, columns predicted."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[int(t), int(p)] += 1
    return cm.tolist()


def nearest_indices(reference, queries, K: int) -> np.ndarray:
    """Indices of the K nearest reference rows per query; equal distances keep reference order."""
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(reference) == 0:
        raise ValidationError("empty reference set")
    if not 1 <= K <= len(reference):
        raise ValidationError(f"K={K} must be in [1, {len(reference)}]")
    D = kernels.cross_distances(reference, queries)
    return np.argsort(D, axis=1, kind="stable")[:, :K]


def _majority(labels_row, n_classes):
    # argmax returns the lowest index among tied counts
    return int(np.argmax(np.bincount(labels_row, minlength=n_classes)))


def knn_predict(reference, reference_labels, query, K: int, n_classes: int | None = None):
    """Majority label of the K nearest reference points (Euclidean).

    Accepts one query vector (returns an int) or a 2-D batch (returns an array).
    """
    reference_labels = np.asarray(reference_labels, dtype=np.int64)
    if reference_labels.size == 0:
        raise ValidationError("empty reference set")
    n_classes = int(reference_labels.max()) + 1 if n_classes is None else n_classes
    single = np.asarray(query).ndim == 1
    idx = nearest_indices(reference, query, K)
    preds = np.array([_majority(reference_labels[row], n_classes) for row in idx], dtype=np.int64)
    return int(preds[0]) if single else preds


@dataclass
class NeighborhoodReport:
    subject_id: str
    true_class: str
    class_names: tuple
    counts: dict = field(default_factory=dict)  # K -> per-class slice counts

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "true_class": self.true_class,
            "classes": list(self.class_names),
            "counts": {str(k): dict(zip(self.class_names, v)) for k, v in self.counts.items()},
        }


def neighborhood_report(
    subject_id, true_class, embeddings, reference, reference_labels, class_names, k_set=DEFAULT_K_SET
) -> NeighborhoodReport:
    """For each K, count the subject's slices whose K-neighbourhood majority is each class."""
    reference = np.asarray(reference, dtype=np.float64)
    reference_labels = np.asarray(reference_labels, dtype=np.int64)
    if len(reference) == 0:
        raise ValidationError("empty reference set")
    k_set = tuple(int(k) for k in k_set)
    if max(k_set) > len(reference):
        raise ValidationError(f"K={max(k_set)} exceeds reference size {len(reference)}")
    n_classes = len(class_names)
    # one sort serves every K
    order = nearest_indices(reference, embeddings, max(k_set))
    report = NeighborhoodReport(str(subject_id), true_class, tuple(class_names))
    for K in k_set:
        maj = [_majority(reference_labels[row[:K]], n_classes) for row in order]
        report.counts[K] = np.bincount(maj, minlength=n_classes).tolist()
    return report


def render_neighborhood_table(reports) -> str:
    """Aligned text table: one row per subject, a column pair/triple per K."""
    if not reports:
        return ""
    names = reports[0].class_names
    ks = list(reports[0].counts)
    head1 = f"{'Subject ID':<12}{'True label':<12}" + "".join(f"{'K=' + str(k):<{6 * len(names)}}" for k in ks)
    head2 = " " * 24 + "".join("".join(f"{n:<6}" for n in names) for _ in ks)
    lines = [head1.rstrip(), head2.rstrip()]
    for r in reports:
        cells = "".join("".join(f"{c:<6}" for c in r.counts[k]) for k in ks)
        lines.append(f"{r.subject_id:<12}{r.true_class:<12}{cells}".rstrip())
    return "\n".join(lines) + "\n"


_EPS = np.finfo(np.float64).eps


def jacobi_eigh(A, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in non-increasing order and eigenvectors as columns,
    each vector signed so its largest-magnitude entry is positive.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValidationError("jacobi_eigh needs a symmetric square matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    negligible = tol * scale / max(n, 1)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))  # direct sum; total minus diagonal cancels
        if off <= tol * scale or scale == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                # entries below rounding of the diagonal or the stopping scale are zeroed outright
                if abs(apq) <= max(negligible, _EPS * min(abs(A[p, p]), abs(A[q, q]))):
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta**2 would overflow
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        warnings.warn("Jacobi eigensolver hit the sweep limit before converging", RuntimeWarning)
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    for j in range(n):
        if V[np.argmax(np.abs(V[:, j])), j] < 0:
            V[:, j] = -V[:, j]
    return w, V


@dataclass
class PCAResult:
    coords: np.ndarray
    explained_variance: list
    components: np.ndarray
    mean: np.ndarray
    degenerate: bool = False

    @property
    def explained_ratio(self) -> list:
        total = sum(self.explained_variance_all) if self.explained_variance_all else 0.0
        return [v / total if total > 0 else 0.0 for v in self.explained_variance]

    explained_variance_all: list = field(default_factory=list)


def pca_project(embeddings, out_dims: int = 2) -> PCAResult:
    """Project mean-centred rows onto the top eigenvectors of their covariance."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValidationError("PCA needs at least two rows")
    N, F = X.shape
    if not 1 <= out_dims <= F:
        raise ValidationError(f"out_dims must be in [1, {F}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (N - 1)
    w, V = jacobi_eigh(cov)
    w = np.maximum(w, 0.0)
    degenerate = bool(w[0] == 0.0)
    if degenerate:
        warnings.warn("all rows identical: zero-variance PCA", RuntimeWarning)
    comps = V[:, :out_dims]
    return PCAResult(
        coords=Xc @ comps,
        explained_variance=w[:out_dims].tolist(),
        components=comps,
        mean=mean,
        degenerate=degenerate,
        explained_variance_all=w.tolist(),
    )


def _betacf(a: float, b: float, x: float, tol: float = 1e-12, max_iter: int = 10000) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def paired_t_test(a, b):
    """Two-sided paired Student t-test. Returns ``(t, p)`` with n - 1 degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValidationError("need two equal-length samples of size >= 2")
    d = a - b
    n = len(d)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        # constant differences give |t| = inf (or 0/0); refuse instead
        raise DegenerateInputError("paired differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    df = n - 1
    p = betainc_regularized(df / 2.0, 0.5, df / (df + t * t))
    return t, p


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_embeddings_csv(path, subject_ids, slice_index, class_names, embeddings, prefix="e") -> None:
    embeddings = np.asarray(embeddings)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "slice_index", "class"] + [f"{prefix}_{j}" for j in range(embeddings.shape[1])])
        for sid, si, cls, row in zip(subject_ids, slice_index, class_names, embeddings):
            w.writerow([sid, int(si), cls] + [_fmt(v) for v in row])


def read_embeddings_csv(path):
    """Returns (subject_ids, slice_index, classes, matrix)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    sids = [r[0] for r in body]
    sidx = [int(r[1]) for r in body]
    cls = [r[2] for r in body]
    M = np.array([[float(v) for v in r[3:]] for r in body], dtype=np.float64)
    return sids, sidx, cls, M


def write_pca_export(csv_path, json_path, subject_ids, slice_index, class_names, result: PCAResult) -> None:
    write_embeddings_csv(csv_path, subject_ids, slice_index, class_names, result.coords, prefix="pc")
    Path(json_path).write_text(
        json.dumps(
            {
                "explained_variance": result.explained_variance,
                "explained_variance_ratio": result.explained_ratio,
                "degenerate": result.degenerate,
            },
            indent=2,
        )
        + "\n"
    )


def write_metrics_csv(path, records, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow([_fmt(r[c]) for c in columns])
