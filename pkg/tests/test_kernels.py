import numpy as np
import pytest

from funcview import kernels
from funcview.kernels import HAS_NUMBA, active_backend, get_kernels, requested_backend
from funcview.models import monomial_exponents

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba unavailable")


def test_backend_env_selection(monkeypatch):
    monkeypatch.setenv("FUNCVIEW_BACKEND", "numpy")
    assert requested_backend() == "numpy"
    assert active_backend() == "numpy"
    assert get_kernels() is kernels.numpy_backend

    monkeypatch.setenv("FUNCVIEW_BACKEND", "AUTO")  # case-insensitive
    assert requested_backend() == "auto"

    monkeypatch.delenv("FUNCVIEW_BACKEND", raising=False)
    assert requested_backend() == "auto"

    monkeypatch.setenv("FUNCVIEW_BACKEND", "gpu")
    with pytest.raises(ValueError, match="FUNCVIEW_BACKEND"):
        requested_backend()
    with pytest.raises(ValueError):
        get_kernels()


@needs_numba
def test_backend_env_numba(monkeypatch):
    monkeypatch.setenv("FUNCVIEW_BACKEND", "numba")
    assert active_backend() == "numba"
    assert get_kernels() is kernels.numba_backend


def _svd_polar(p):
    u, _, vt = np.linalg.svd(p, full_matrices=False)
    return u @ vt


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_retract2_matches_svd(backend):
    mod = get_kernels(backend)
    r = np.random.default_rng(5)
    for scale in (1.0, 1e-6, 1e6):
        for _ in range(30):
            p = r.normal(size=(7, 2)) * scale
            got, collapsed = mod.retract2(p.copy(), True)
            assert not collapsed
            np.testing.assert_allclose(got, _svd_polar(p), atol=1e-9)
            np.testing.assert_allclose(got.T @ got, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_retract2_paper_u_spans_same_subspace(backend):
    mod = get_kernels(backend)
    r = np.random.default_rng(6)
    p = r.normal(size=(5, 2))
    u, collapsed = mod.retract2(p.copy(), False)
    assert not collapsed
    np.testing.assert_allclose(u.T @ u, np.eye(2), atol=1e-12)
    polar, _ = mod.retract2(p.copy(), True)
    # Same column span: projectors agree.
    np.testing.assert_allclose(u @ u.T, polar @ polar.T, atol=1e-9)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_retract2_rank_recovery(backend):
    mod = get_kernels(backend)
    col = np.array([3.0, 4.0, 0.0, 0.0])[:, None]
    p = np.hstack([col, 2 * col])  # rank 1
    got, collapsed = mod.retract2(p.copy(), True)
    assert collapsed
    np.testing.assert_allclose(got.T @ got, np.eye(2), atol=1e-12)

    zero, collapsed = mod.retract2(np.zeros((4, 2)), True)
    assert collapsed
    np.testing.assert_allclose(zero.T @ zero, np.eye(2), atol=1e-12)


def _poly_epoch_inputs(seed=0, n=64, d=6, degree=3, responses=2):
    r = np.random.default_rng(seed)
    x = np.ascontiguousarray(r.normal(size=(n, d)))
    f = np.ascontiguousarray(r.normal(size=(responses, n)))
    q, _ = np.linalg.qr(r.normal(size=(d, 2)))
    m = (degree + 1) * (degree + 2) // 2
    theta = np.ascontiguousarray(r.normal(size=(responses, m)) * 0.1)
    ea, eb = monomial_exponents(degree)
    perm = np.ascontiguousarray(r.permutation(n))
    return x, f, perm, np.ascontiguousarray(q), theta, np.ascontiguousarray(ea), np.ascontiguousarray(eb)


@needs_numba
def test_epoch_poly_backends_agree():
    for seed in range(4):
        x, f, perm, q, theta, ea, eb = _poly_epoch_inputs(seed)
        args = dict(lr=1e-2, batch_size=13, guard_threshold=1e9, polar=True)
        p_np, th_np = q.copy(), theta.copy()
        out_np = kernels.numpy_backend.epoch_poly(x, f, perm, p_np, th_np, ea, eb, **args)
        p_nb, th_nb = q.copy(), theta.copy()
        out_nb = kernels.numba_backend.epoch_poly(x, f, perm, p_nb, th_nb, ea, eb, **args)
        assert out_np[1] == out_nb[1] == kernels.numpy_backend.OK
        assert out_np[0] == pytest.approx(out_nb[0], rel=1e-10)
        np.testing.assert_allclose(p_np, p_nb, atol=1e-12)
        np.testing.assert_allclose(th_np, th_nb, atol=1e-12)


@needs_numba
def test_epoch_softmax_backends_agree():
    r = np.random.default_rng(9)
    n, d, k, h = 50, 5, 3, 8
    x = np.ascontiguousarray(r.normal(size=(n, d)))
    labels = np.ascontiguousarray(r.integers(0, k, size=n))
    q, _ = np.linalg.qr(r.normal(size=(d, 2)))
    q = np.ascontiguousarray(q)
    w1 = np.ascontiguousarray(r.normal(size=(h, 2)) / np.sqrt(2))
    b1 = np.zeros(h)
    w2 = np.ascontiguousarray(r.normal(size=(k, h)) / np.sqrt(h))
    b2 = np.zeros(k)
    perm = np.ascontiguousarray(r.permutation(n))

    state_np = [q.copy(), w1.copy(), b1.copy(), w2.copy(), b2.copy()]
    state_nb = [a.copy() for a in state_np]
    out_np = kernels.numpy_backend.epoch_softmax(
        x, labels, perm, *state_np, h, 5e-2, 16, 1e9, True
    )
    out_nb = kernels.numba_backend.epoch_softmax(
        x, labels, perm, *state_nb, h, 5e-2, 16, 1e9, True
    )
    assert out_np[1] == out_nb[1] == kernels.numpy_backend.OK
    assert out_np[0] == pytest.approx(out_nb[0], rel=1e-10)
    for a, b in zip(state_np, state_nb):
        np.testing.assert_allclose(a, b, atol=1e-11)


@needs_numba
def test_guard_status_agrees_across_backends():
    x, f, perm, q, theta, ea, eb = _poly_epoch_inputs(seed=2)
    # Threshold below the initial loss: the very first batch check must trip.
    args = dict(lr=1e-2, batch_size=16, guard_threshold=1e-12, polar=True)
    out_np = kernels.numpy_backend.epoch_poly(
        x, f, perm, q.copy(), theta.copy(), ea, eb, **args
    )
    out_nb = kernels.numba_backend.epoch_poly(
        x, f, perm, q.copy(), theta.copy(), ea, eb, **args
    )
    assert out_np[1] == out_nb[1] == kernels.numpy_backend.GUARD
    assert out_np[2] == out_nb[2] == 0


@needs_numba
def test_nonfinite_status_agrees_across_backends():
    x, f, perm, q, theta, ea, eb = _poly_epoch_inputs(seed=3)
    # An absurd rate overflows the quartic predictions within a step or two.
    args = dict(lr=1e40, batch_size=16, guard_threshold=np.inf, polar=True)
    out_np = kernels.numpy_backend.epoch_poly(
        x, f, perm, q.copy(), theta.copy(), ea, eb, **args
    )
    out_nb = kernels.numba_backend.epoch_poly(
        x, f, perm, q.copy(), theta.copy(), ea, eb, **args
    )
    assert out_np[1] == out_nb[1] == kernels.numpy_backend.NONFINITE


@needs_numba
def test_numba_epoch_is_bit_reproducible():
    x, f, perm, q, theta, ea, eb = _poly_epoch_inputs(seed=1)
    args = dict(lr=1e-2, batch_size=8, guard_threshold=1e9, polar=True)
    p1, t1 = q.copy(), theta.copy()
    s1 = kernels.numba_backend.epoch_poly(x, f, perm, p1, t1, ea, eb, **args)
    p2, t2 = q.copy(), theta.copy()
    s2 = kernels.numba_backend.epoch_poly(x, f, perm, p2, t2, ea, eb, **args)
    assert s1[0] == s2[0]
    assert p1.tobytes() == p2.tobytes()
    assert t1.tobytes() == t2.tobytes()
