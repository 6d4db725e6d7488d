import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from msprop.prediction import (
    DEFAULT_PHI, FusionConfig, format_predictions, fuse, label_propagate, parse_predictions,
    row_l2_normalize,
)


def test_defaults():
    assert DEFAULT_PHI == {"BPO": 0.2, "MFO": 0.4, "CCO": 0.5}
    assert FusionConfig()["MFO"] == 0.4


def test_single_neighbour_inherits_normalised_row():
    Y = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    A_p = sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
    A_s = sp.csr_matrix((2, 2))
    out = label_propagate(A_p, A_s, Y, [True, False])
    assert np.allclose(out[1], Y[0] / np.sqrt(2))
    assert np.array_equal(out[0], Y[0])


def test_zero_labels_stay_zero():
    A = sp.csr_matrix(np.full((3, 3), 1 / 3))
    assert not label_propagate(A, A, np.zeros((3, 2)), [True, False, False]).any()


def test_line_graph_hand_computation():
    # nodes 0-1-2-3; 0 and 3 clamped; A_s carries only self-loops
    Y = np.array([[1.0, 0.0], [0, 0], [0, 0], [0.0, 1.0]])
    A_p = np.array([[0.5, 0.5, 0, 0], [0.25, 0.5, 0.25, 0], [0, 0.25, 0.5, 0.25], [0, 0, 0.5, 0.5]])
    A_s = np.eye(4)
    # layer 1: free rows start at zero
    # row1 = 0.25*Y0 = (0.25, 0) -> (1, 0); row2 = 0.25*Y3 = (0, 0.25) -> (0, 1)
    # layer 2: row1 = 0.25*Y0 + 1.5*(1,0) + 0.25*(0,1) = (1.75, 0.25) (A_p row plus the self-loop)
    #          row2 = 0.25*(1,0) + 1.5*(0,1) + 0.25*Y3 = (0.25, 1.75)
    r1 = np.array([1.75, 0.25]) / np.hypot(1.75, 0.25)
    expect = np.array([[1.0, 0.0], r1, r1[::-1], [0.0, 1.0]])
    out = label_propagate(sp.csr_matrix(A_p), sp.csr_matrix(A_s), Y, [True, False, False, True], layers=2)
    assert np.allclose(out, expect, atol=1e-15)


def dense_reference(A_p, A_s, Y, clamp, layers):
    cur = np.where(clamp[:, None], Y, 0.0)
    for _ in range(layers):
        nxt = A_p @ cur + A_s @ cur
        for i in range(len(nxt)):
            n = np.sqrt(sum(v * v for v in nxt[i]))
            nxt[i] = nxt[i] / n if n > 0 else 0.0
        nxt[clamp] = Y[clamp]
        cur = nxt
    return cur


def stochastic(g, n, density):
    A = (g.random((n, n)) < density) * g.random((n, n)) + np.eye(n)
    return A / A.sum(axis=1, keepdims=True)


@given(st.integers(1, 10), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
def test_matches_dense_reference_and_clamps(n, c, layers, seed):
    g = np.random.default_rng(seed)
    A_p, A_s = stochastic(g, n, 0.4), stochastic(g, n, 0.2)
    Y = (g.random((n, c)) < 0.5) * 1.0
    clamp = g.random(n) < 0.5
    out = label_propagate(sp.csr_matrix(A_p), sp.csr_matrix(A_s), Y, clamp, layers)
    assert np.allclose(out, dense_reference(A_p, A_s, Y, clamp, layers), atol=1e-12, rtol=0)
    assert np.array_equal(out[clamp], Y[clamp])
    free = ~clamp & (np.abs(out).sum(axis=1) > 0)
    assert np.all(np.abs(np.linalg.norm(out[free], axis=1) - 1) <= 1e-9)
    assert np.all(out >= 0)


def test_fuse_examples():
    a, b = np.array([[0.9, 0.2]]), np.array([[0.4, 0.8]])
    assert np.array_equal(fuse(a, b, 1.0), a)
    assert np.array_equal(fuse(a, b, 0.0), b)
    assert fuse(np.array([[0.9]]), np.array([[0.4]]), 0.4)[0, 0] == pytest.approx(0.6)
    with pytest.raises(ValueError):
        fuse(a, b.T, 0.5)


@given(st.floats(0.01, 1.0), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_fuse_is_monotone_in_model_output(phi, y, lab, step):
    lo = fuse(np.array([[y]]), np.array([[lab]]), phi)
    hi = fuse(np.array([[min(y + step, 1.0)]]), np.array([[lab]]), phi)
    assert hi[0, 0] >= lo[0, 0]
    assert 0.0 <= lo[0, 0] <= 1.0


def test_row_l2_normalize_leaves_zero_rows():
    out = row_l2_normalize(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert np.allclose(out, [[0.6, 0.8], [0, 0]])


def test_prediction_tsv_round_trip():
    ids, terms = ["a", "b"], ["GO:0000001", "GO:0000002"]
    scores = np.array([[0.5, 0.004], [1.0, 0.25]])
    text = format_predictions(ids, terms, scores, threshold=0.01)
    assert text.splitlines()[0] == "a\tGO:0000001\t0.500000"
    assert len(text.splitlines()) == 3
    back = parse_predictions(text, ids, terms)
    assert np.array_equal(back, np.where(scores >= 0.01, scores, 0))
    with pytest.raises(ValueError, match="line 1"):
        parse_predictions("a GO:1 0.5\n", ids, terms)
