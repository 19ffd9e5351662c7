import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pearson_loops

from dgatnet.data import SubjectRecord
from dgatnet.dfc import (GraphConfig, WindowConfig, edge_budget, extract_sequence, pearson_matrix,
                         static_fc, threshold_graph, window_starts)


def test_window_starts_benchmark_geometry():
    expected = [t for t in range(232) if t % 20 == 0 and t + 40 <= 232]
    assert window_starts(232, WindowConfig(40, 20)) == expected
    assert len(expected) == 10 and expected[-1] == 180


def test_window_starts_single_and_too_short():
    assert window_starts(40, WindowConfig(40, 20)) == [0]
    with pytest.raises(ValueError):
        window_starts(39, WindowConfig(40, 20))


@pytest.mark.parametrize("w,s", [(1, 1), (5, 0)])
def test_window_config_invariants(w, s):
    with pytest.raises(ValueError):
        WindowConfig(w, s)


@given(st.integers(2, 300), st.integers(2, 300), st.integers(1, 50))
def test_window_count_formula(L, w, s):
    if w > L:
        return
    assert len(window_starts(L, WindowConfig(w, s))) == (L - w) // s + 1


def test_pearson_trivial_cases():
    x = np.array([[1.0, 2.0, 3.0, 5.0], [2.0, 4.0, 2.0, 5.0], [3.0, 6.0, 1.0, 5.0]])
    F = pearson_matrix(x)
    assert F[0, 1] == pytest.approx(1.0)
    assert F[0, 2] == pytest.approx(-1.0)
    assert F[0, 3] == 0.0 and F[3, 1] == 0.0
    assert F[3, 3] == 1.0


def test_pearson_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 5))
    assert np.max(np.abs(pearson_matrix(x) - pearson_loops(x))) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.floats(-50.0, 50.0), st.integers(0, 4))
def test_pearson_affine_invariance(seed, a, b, col):
    x = np.random.default_rng(seed).standard_normal((40, 5))
    y = x.copy()
    y[:, col] = a * y[:, col] + b
    assert np.max(np.abs(pearson_matrix(x) - pearson_matrix(y))) <= 1e-10


def test_edge_budget():
    assert edge_budget(4, 0.3) == 2
    assert edge_budget(116, 0.3) == 2001
    assert edge_budget(5, 1.0) == 10
    assert edge_budget(32, 0.3) == math.ceil(0.3 * 496)


def test_threshold_hand_built():
    F = np.eye(4)
    vals = {(0, 1): 0.1, (0, 2): -0.9, (0, 3): 0.3, (1, 2): 0.5, (1, 3): -0.2, (2, 3): 0.4}
    for (i, j), v in vals.items():
        F[i, j] = F[j, i] = v
    # exhaustive ranking of all six pairs by strength
    ranked = sorted(vals, key=lambda p: (-abs(vals[p]), p))
    A = threshold_graph(F, GraphConfig(0.3))
    kept = {(i, j) for i, j in itertools.combinations(range(4), 2) if A[i, j]}
    assert kept == set(ranked[:2]) == {(0, 2), (1, 2)}
    assert (np.diag(A) == 1).all() and (A == A.T).all()


def test_threshold_complete_graph():
    F = pearson_matrix(np.random.default_rng(1).standard_normal((20, 6)))
    assert (threshold_graph(F, GraphConfig(1.0)) == 1).all()


def test_threshold_ties_are_lexicographic():
    F = np.full((5, 5), 0.5)
    np.fill_diagonal(F, 1.0)
    A = threshold_graph(F, GraphConfig(0.3))  # k = 3 of 10
    kept = [(i, j) for i, j in itertools.combinations(range(5), 2) if A[i, j]]
    assert kept == [(0, 1), (0, 2), (0, 3)]


def _check_sequence(seq, keep):
    n = seq.n_rois
    for F, A in seq.windows:
        assert np.array_equal(F, F.T) and (np.diag(F) == 1).all()
        assert np.abs(F).max() <= 1 + 1e-12
        assert np.array_equal(A, A.T) and set(np.unique(A)) <= {0, 1}
        assert (np.diag(A) == 1).all()
        assert A.sum() - n == 2 * math.ceil(round(keep * n * (n - 1) / 2, 9))


def test_extract_116_rois():
    rng = np.random.default_rng(2)
    subj = SubjectRecord("s", rng.standard_normal((232, 116)), 1)
    seq = extract_sequence(subj, WindowConfig(), GraphConfig())
    assert seq.T == 10 and seq.starts == list(range(0, 181, 20))
    for A in seq.A:
        assert int(A.sum()) == 116 + 2 * 2001
    _check_sequence(seq, 0.3)
    np.testing.assert_allclose(seq.F[3], pearson_matrix(subj.series[60:100]), atol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 12), st.sampled_from([0.1, 0.3, 0.5, 1.0]),
       st.sampled_from(["window", "subject"]))
def test_sequence_invariants(seed, n, keep, scope):
    subj = SubjectRecord("s", np.random.default_rng(seed).standard_normal((90, n)), 0)
    seq = extract_sequence(subj, WindowConfig(30, 15), GraphConfig(keep, scope))
    assert seq.T == (90 - 30) // 15 + 1
    if scope == "window":
        _check_sequence(seq, keep)
    else:
        # one subject-level threshold: same total budget, spread unevenly
        off = seq.A.sum() - seq.T * n
        assert off == 2 * seq.T * edge_budget(n, keep)


def test_full_length_window_equals_static():
    subj = SubjectRecord("s", np.random.default_rng(3).standard_normal((100, 7)), 0)
    seq = extract_sequence(subj, WindowConfig(100, 20), GraphConfig())
    st_seq = static_fc(subj, GraphConfig())
    assert seq.T == st_seq.T == 1
    np.testing.assert_array_equal(seq.F, st_seq.F)
    np.testing.assert_array_equal(seq.A, st_seq.A)
    np.testing.assert_allclose(seq.F[0], np.corrcoef(subj.series, rowvar=False), atol=1e-12)


def test_roi_permutation_equivariance():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((120, 9))
    perm = rng.permutation(9)
    a = extract_sequence(SubjectRecord("s", x, 0), WindowConfig(), GraphConfig())
    b = extract_sequence(SubjectRecord("s", x[:, perm], 0), WindowConfig(), GraphConfig())
    np.testing.assert_allclose(b.F, a.F[:, perm][:, :, perm], atol=1e-12)
    np.testing.assert_array_equal(b.A, a.A[:, perm][:, :, perm])


def test_sequence_json_shape():
    subj = SubjectRecord("s7", np.random.default_rng(5).standard_normal((60, 3)), 1)
    seq = extract_sequence(subj, WindowConfig(40, 20), GraphConfig())
    doc = json.loads(seq.to_json())
    assert doc["subject_id"] == "s7" and doc["T"] == 2
    assert len(doc["windows"]) == 2 and len(doc["windows"][0]["F"]) == 9
    assert doc["windows"][1]["A"] == seq.A[1].ravel().tolist()
