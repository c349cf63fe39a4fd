"""Aggregation kernels against loop oracles, both backends."""

import numpy as np
import pytest

from glstm_lab.kernels import numpy_ref

import _oracles

try:
    from glstm_lab.kernels import _ckernels

    BACKENDS = [numpy_ref, _ckernels]
except ImportError:
    BACKENDS = [numpy_ref]


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def backend(request):
    return request.param


def test_seg_sum_frozen_case(backend):
    # hand-computed: segment 0 sums rows 0 and 2, segment 1 empty,
    # segment 2 takes row 1 twice
    p = np.array([[1.0, 2.0], [10.0, 20.0], [100.0, 200.0]])
    idx = np.array([0, 2, 1, 1], dtype=np.int64)
    ptr = np.array([0, 2, 2, 4], dtype=np.int64)
    out = backend.seg_sum(p, idx, ptr)
    assert np.array_equal(out, [[101.0, 202.0], [0.0, 0.0], [20.0, 40.0]])


def test_seg_sum_random_vs_loops(backend):
    rng = np.random.default_rng(11)
    for trial in range(30):
        n_src, n_dst, d = rng.integers(1, 12, size=3)
        src, ptr, w = _oracles.random_structure(rng, n_src, n_dst, weighted=trial % 2)
        payload = rng.standard_normal((n_src, d))
        got = backend.seg_sum(payload, src, ptr, w)
        want = _oracles.seg_sum_loops(payload, src, ptr, w)
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-13)


def test_seg_sum_no_edges(backend):
    out = backend.seg_sum(
        np.ones((3, 2)), np.zeros(0, dtype=np.int64), np.zeros(5, dtype=np.int64)
    )
    assert out.shape == (4, 2)
    assert (out == 0).all()


def test_seg_max_frozen_case(backend):
    p = np.array([[5.0], [5.0], [1.0]])
    idx = np.array([1, 2, 0, 1], dtype=np.int64)
    ptr = np.array([0, 2, 4], dtype=np.int64)
    out, arg = backend.seg_max(p, idx, ptr)
    assert np.array_equal(out, [[5.0], [5.0]])
    # segment 1 holds rows 0 and 1, both 5.0; the tie goes to row 0
    assert np.array_equal(arg, [[1], [0]])


def test_seg_max_random_vs_loops(backend):
    rng = np.random.default_rng(12)
    for _ in range(30):
        n_src, n_dst, d = rng.integers(1, 12, size=3)
        src, ptr, _ = _oracles.random_structure(rng, n_src, n_dst)
        values = rng.integers(-3, 4, size=(n_src, d)).astype(float)  # force ties
        got_v, got_a = backend.seg_max(values, src, ptr)
        want_v, want_a = _oracles.seg_max_loops(values, src, ptr)
        assert np.array_equal(got_v, want_v)
        assert np.array_equal(got_a, want_a)


def test_seg_max_empty_segment_sentinel(backend):
    out, arg = backend.seg_max(
        np.ones((2, 3)), np.zeros(0, dtype=np.int64), np.array([0, 0], dtype=np.int64)
    )
    assert (out == -np.inf).all() and (arg == -1).all()


def test_seg_max_backward_scatter(backend):
    arg = np.array([[1, -1], [0, 0]], dtype=np.int64)
    g = np.array([[10.0, 20.0], [1.0, 2.0]])
    got = backend.seg_max_backward(g, arg, 3)
    assert np.array_equal(got, [[1.0, 2.0], [10.0, 0.0], [0.0, 0.0]])


def test_seg_dot_vs_loops(backend):
    rng = np.random.default_rng(13)
    for trial in range(20):
        n_src, n_dst, d = rng.integers(1, 10, size=3)
        src, ptr, w = _oracles.random_structure(rng, n_src, n_dst, weighted=trial % 2)
        payload = rng.standard_normal((n_src, d))
        gseg = rng.standard_normal((n_dst, d))
        got = backend.seg_dot(payload, gseg, src, ptr, w)
        want = np.zeros(len(src))
        for s in range(n_dst):
            for e in range(ptr[s], ptr[s + 1]):
                we = 1.0 if w is None else w[e]
                want[e] = we * payload[src[e]] @ gseg[s]
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-13)


def test_scatter_rows(backend):
    rows = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    idx = np.array([2, 0, 2], dtype=np.int64)
    got = backend.scatter_rows(rows, idx, 3)
    assert np.array_equal(got, [[3.0, 4.0], [0.0, 0.0], [6.0, 8.0]])


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(14)
    for _ in range(10):
        n_src, n_dst, d = rng.integers(1, 15, size=3)
        src, ptr, w = _oracles.random_structure(rng, n_src, n_dst, weighted=True)
        payload = rng.standard_normal((n_src, d))
        a = numpy_ref.seg_sum(payload, src, ptr, w)
        b = _ckernels.seg_sum(payload, src, ptr, w)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
        va, aa = numpy_ref.seg_max(payload, src, ptr)
        vb, ab = _ckernels.seg_max(payload, src, ptr)
        assert np.array_equal(va, vb) and np.array_equal(aa, ab)


def test_dispatcher_exposes_backend():
    import glstm_lab.kernels as K

    assert K.backend_name() in ("compiled", "fallback")
    assert callable(K.seg_sum) and callable(K.seg_max)
