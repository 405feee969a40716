import math

import numpy as np
import pytest

from bicephnet import evaluate as ev
from bicephnet.errors import DegenerateInputError, ValidationError

# a classic before/after paired design, n = 10
BEFORE = [200.1, 190.9, 192.7, 213.0, 241.4, 196.9, 172.2, 185.5, 205.5, 193.7]
AFTER = [191.4, 186.4, 195.4, 202.7, 230.2, 190.2, 172.2, 179.4, 200.5, 185.5]


def student_t_oracle(a, b):
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    d = [mpmath.mpf(x) - mpmath.mpf(y) for x, y in zip(a, b)]
    n = len(d)
    mean = sum(d) / n
    sd = mpmath.sqrt(sum((x - mean) ** 2 for x in d) / (n - 1))
    t = mean / (sd / mpmath.sqrt(n))
    nu = n - 1
    c = mpmath.gamma((nu + 1) / mpmath.mpf(2)) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / mpmath.mpf(2)))
    pdf = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / mpmath.mpf(2))
    p = 2 * mpmath.quad(pdf, [abs(t), mpmath.inf])
    return float(t), float(p)


@pytest.mark.parametrize("m,threshold", [(86, 43), (112, 56), (7, 4)])
def test_binary_vote_threshold(m, threshold):
    for k in range(m + 1):
        v = ev.aggregate_subject([1] * k + [0] * (m - k))
        assert v.predicted_class == (1 if k >= threshold else 0)
        assert sum(v.votes) == m
        assert v.tie == (2 * k == m)


def test_vote_examples():
    assert ev.aggregate_subject([1] * 43 + [0] * 43).predicted_class == 1
    tie = ev.aggregate_subject([0] * 56 + [1] * 56)
    assert tie.predicted_class == 1 and tie.tie
    assert ev.aggregate_subject([0] * 9).predicted_class == 0
    assert ev.aggregate_subject([2] * 5, n_classes=3).predicted_class == 2
    with pytest.raises(ValidationError):
        ev.aggregate_subject([])
    with pytest.raises(ValidationError):
        ev.aggregate_subject([0, 2])


def test_multiclass_plurality_tie_goes_to_lowest_index():
    v = ev.aggregate_subject([1, 1, 2, 2, 0], n_classes=3)
    assert v.predicted_class == 1 and v.tie
    assert ev.aggregate_subject([0, 1, 1, 2, 2, 2], n_classes=3).predicted_class == 2


def test_accuracies():
    assert ev.slice_accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert ev.slice_accuracy([1, 0, 0, 1], [1, 1, 0, 0]) == 0.5
    with pytest.raises(ValidationError):
        ev.slice_accuracy([], [])
    with pytest.raises(ValidationError):
        ev.subject_accuracy([])


def test_subject_right_while_slices_wrong():
    # each subject has a minority of misclassified slices: subject accuracy 1, slice accuracy below 1
    sids = np.repeat(["a", "b", "c"], 10)
    labels = np.repeat([0, 1, 1], 10)
    preds = labels.copy()
    preds[[0, 1, 12, 13, 14, 25]] = 1 - preds[[0, 1, 12, 13, 14, 25]]
    verdicts = ev.subject_verdicts(sids, labels, preds, 2)
    assert ev.subject_accuracy(verdicts) == 1.0
    assert ev.slice_accuracy(preds, labels) == pytest.approx(0.8)


def test_subject_accuracy_invariant_to_slice_order():
    rng = np.random.default_rng(0)
    sids = np.repeat(np.arange(6), 9)
    labels = np.repeat(rng.integers(0, 2, 6), 9)
    preds = rng.integers(0, 2, 54)
    base = ev.subject_accuracy(ev.subject_verdicts(sids, labels, preds, 2))
    for _ in range(5):
        perm = rng.permutation(54)
        assert ev.subject_accuracy(ev.subject_verdicts(sids[perm], labels[perm], preds[perm], 2)) == base


def test_confusion_counts():
    assert ev.confusion_counts([0, 0, 1, 1], [0, 1, 1, 1], 2) == [[1, 1], [0, 2]]


def knn_oracle(ref, labels, q, K, C):
    d = [(math.dist(list(r), list(q)), i) for i, r in enumerate(ref)]
    d.sort()
    counts = [0] * C
    for _, i in d[:K]:
        counts[labels[i]] += 1
    return counts.index(max(counts))


@pytest.mark.parametrize("K", [1, 5, 11])
def test_knn_matches_exhaustive_sort(K):
    rng = np.random.default_rng(K)
    ref = rng.standard_normal((200, 8))
    labels = rng.integers(0, 3, 200)
    Q = rng.standard_normal((50, 8))
    got = ev.knn_predict(ref, labels, Q, K, 3)
    assert got.tolist() == [knn_oracle(ref, labels, q, K, 3) for q in Q]


def test_knn_tie_rules():
    ref = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert ev.knn_predict(ref, [1, 0], np.zeros(2), 1) == 1
    assert ev.knn_predict(ref, [0, 1], np.zeros(2), 1) == 0
    # K=2 label tie between classes 1 and 0 resolves to 0
    assert ev.knn_predict(ref, [1, 0], np.zeros(2), 2) == 0
    with pytest.raises(ValidationError):
        ev.knn_predict(np.empty((0, 2)), [], np.zeros(2), 1)
    with pytest.raises(ValidationError):
        ev.knn_predict(ref, [0, 1], np.zeros(2), 3)


def test_knn_reference_permutation_invariant():
    rng = np.random.default_rng(5)
    ref = rng.standard_normal((60, 4))
    labels = rng.integers(0, 2, 60)
    Q = rng.standard_normal((20, 4))
    perm = rng.permutation(60)
    # K odd and binary: no label ties; continuous data: no distance ties
    np.testing.assert_array_equal(ev.knn_predict(ref, labels, Q, 7), ev.knn_predict(ref[perm], labels[perm], Q, 7))


def test_neighborhood_report_all_one_class():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal((60, 3))
    r = ev.neighborhood_report("x", "AD", rng.standard_normal((16, 3)), ref, np.ones(60, int), ("CN", "AD"))
    assert list(r.counts) == [10, 20, 30, 40, 50]
    assert all(c == [0, 16] for c in r.counts.values())
    with pytest.raises(ValidationError):
        ev.neighborhood_report("x", "AD", ref[:2], ref[:5], np.ones(5, int), ("CN", "AD"), k_set=(10,))


def test_neighborhood_table_row_shape():
    # 112 slices: 72 sit in a CN cluster, 40 in an AD cluster
    rng = np.random.default_rng(1)
    ref = np.vstack([rng.normal(0, 0.1, (60, 2)), rng.normal(5, 0.1, (60, 2))])
    ref_labels = np.repeat([0, 1], 60)
    slices = np.vstack([rng.normal(0, 0.1, (72, 2)), rng.normal(5, 0.1, (40, 2))])
    r = ev.neighborhood_report("372", "AD", slices, ref, ref_labels, ("CN", "AD"))
    assert r.to_dict()["counts"]["10"] == {"CN": 72, "AD": 40}
    assert all(sum(c) == 112 for c in r.counts.values())
    table = ev.render_neighborhood_table([r]).splitlines()
    assert table[0].split()[:4] == ["Subject", "ID", "True", "label"]
    assert table[2].split()[:4] == ["372", "AD", "72", "40"]


def test_pca_line_in_3d():
    t = np.linspace(-1, 1, 30)[:, None]
    X = t * np.array([1.0, 2.0, -2.0]) + 4.0
    r = ev.pca_project(X, 2)
    assert r.explained_ratio[0] == pytest.approx(1.0, abs=1e-12)
    assert abs(r.explained_variance[1]) < 1e-10


def test_pca_orthonormal_sorted_and_centering_invariant():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 6)) @ rng.standard_normal((6, 6))
    r = ev.pca_project(X, 6)
    assert np.max(np.abs(r.components.T @ r.components - np.eye(6))) < 1e-8
    assert all(a >= b for a, b in zip(r.explained_variance, r.explained_variance[1:]))
    shifted = ev.pca_project(X + rng.standard_normal(6) * 10, 6)
    assert np.max(np.abs(shifted.coords - r.coords)) < 1e-10


def test_jacobi_matches_reference_eigendecomposition():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((5, 5))
    C = A @ A.T
    w, V = ev.jacobi_eigh(C)
    w_ref, V_ref = np.linalg.eigh(C)
    w_ref, V_ref = w_ref[::-1], V_ref[:, ::-1]
    np.testing.assert_allclose(w, w_ref, atol=1e-6)
    for j in range(5):
        s = np.sign(V[:, j] @ V_ref[:, j])
        np.testing.assert_allclose(V[:, j], s * V_ref[:, j], atol=1e-6)


@pytest.mark.filterwarnings("error::RuntimeWarning")
@pytest.mark.parametrize("seed", range(30))
def test_jacobi_diagonalizes_to_rounding(seed):
    # off-diagonal mass well below sqrt(eps)·|A| must still be rotated away
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    M = rng.standard_normal((n, n))
    M = M @ M.T * 10 ** rng.uniform(-6, 6)
    if seed % 3 == 0:
        M[:, : n // 2] = 0.0
        M[: n // 2, :] = 0.0
    w, V = ev.jacobi_eigh(M)
    assert np.max(np.abs(V.T @ M @ V - np.diag(w))) <= 1e-12 * np.abs(M).max()
    assert np.max(np.abs(V.T @ V - np.eye(n))) < 1e-12


def test_pca_degenerate_input_flags():
    with pytest.warns(RuntimeWarning):
        r = ev.pca_project(np.ones((5, 3)), 2)
    assert r.degenerate and not np.any(r.coords)
    with pytest.raises(ValidationError):
        ev.pca_project(np.ones((1, 3)), 1)


def test_t_test_trivial_cases():
    t, p = ev.paired_t_test([1, -1, 2, -2, 0], [0, 0, 0, 0, 0])
    assert t == 0.0 and p == pytest.approx(1.0)
    with pytest.raises(DegenerateInputError):
        ev.paired_t_test([2, 3, 4, 5], [1, 2, 3, 4])
    with pytest.raises(ValidationError):
        ev.paired_t_test([1, 2], [1])


def test_t_test_matches_quadrature():
    t, p = ev.paired_t_test(BEFORE, AFTER)
    t_ref, p_ref = student_t_oracle(BEFORE, AFTER)
    assert abs(t - t_ref) < 1e-6 and abs(p - p_ref) < 1e-6
    assert p < 0.05


def test_betainc_edges():
    assert ev.betainc_regularized(2.0, 3.0, 0.0) == 0.0
    assert ev.betainc_regularized(2.0, 3.0, 1.0) == 1.0
    # I_x(1, 1) = x
    assert ev.betainc_regularized(1.0, 1.0, 0.3) == pytest.approx(0.3, abs=1e-14)


def test_embeddings_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    E = rng.standard_normal((4, 3))
    path = tmp_path / "e.csv"
    ev.write_embeddings_csv(path, ["a", "a", "b", "b"], [0, 1, 0, 1], ["CN", "CN", "AD", "AD"], E)
    sids, sidx, cls, M = ev.read_embeddings_csv(path)
    assert sids == ["a", "a", "b", "b"] and sidx == [0, 1, 0, 1] and cls[2] == "AD"
    np.testing.assert_array_equal(M, E)
