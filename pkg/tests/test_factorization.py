import numpy as np
import pytest

from kernelnmf import factorization as F
from kernelnmf import kernels as K
from kernelnmf.diagnostics import fd_check
from kernelnmf.kernels import KernelSpec
from kernelnmf.regularizers import RegularizerSet

from conftest import positive_instance

KERNELS = [KernelSpec.linear(), KernelSpec.polynomial(2, 0.44), KernelSpec.polynomial(3, 0.5),
           KernelSpec.gaussian(1.0)]


def test_hypercube_validation():
    with pytest.raises(ValueError):
        F.HyperCube(np.ones((2, 5)), 2, 3)
    with pytest.raises(ValueError):
        F.HyperCube(-np.ones((2, 6)), 2, 3)
    with pytest.raises(ValueError):
        F.HyperCube(np.full((2, 6), np.nan), 2, 3)
    cube = F.HyperCube(np.arange(12.0).reshape(2, 6), 2, 3)
    assert cube.shape == (2, 3) and cube.bands == 2 and cube.pixels == 6
    assert cube.coords(4) == (1, 1) and cube.pixel_index(1, 1) == 4
    image = cube.to_image()
    assert image.shape == (2, 3, 2)
    np.testing.assert_array_equal(image[1, 1], cube.X[:, 4])
    np.testing.assert_array_equal(F.HyperCube.from_image(image).X, cube.X)


def test_config_validation():
    with pytest.raises(ValueError):
        F.SolverConfig(rank=0)
    with pytest.raises(ValueError):
        F.SolverConfig(rank=2, iterations=0)
    with pytest.raises(F.UnsupportedConfigError):
        F.SolverConfig(rank=2, kernel=KernelSpec.polynomial(3, 1.0), scheme="mult")
    F.SolverConfig(rank=2, kernel=KernelSpec.polynomial(3, 1.0), scheme="add")


def test_cost_examples():
    rng = np.random.default_rng(0)
    E, A = rng.uniform(size=(4, 2)), rng.uniform(size=(2, 5))
    assert F.cost(E @ A, E, A, KernelSpec.linear()) == 0.0
    X = rng.uniform(size=(4, 5))
    assert F.cost(X, E, np.zeros((2, 5)), KernelSpec.gaussian(0.7)) == 2.5
    assert F.cost([[2.0]], [[1.0]], [[1.0]], KernelSpec.linear()) == 0.5


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
def test_cost_matches_pixel_loop(kernel, rng):
    X, E, A = positive_instance(rng)
    total = 0.0
    for t in range(X.shape[1]):
        r = K.evaluate(kernel, X[:, t], X[:, t])
        for n in range(E.shape[1]):
            r -= 2 * A[n, t] * K.evaluate(kernel, E[:, n], X[:, t])
            for m in range(E.shape[1]):
                r += A[n, t] * A[m, t] * K.evaluate(kernel, E[:, n], E[:, m])
        total += 0.5 * r
    assert F.cost(X, E, A, kernel) == pytest.approx(total, rel=1e-12)


def test_grad_a_examples(rng):
    E, A = rng.uniform(size=(3, 2)), rng.uniform(size=(2, 4))
    assert np.allclose(F.grad_a_matrix(E @ A, E, A, KernelSpec.linear()), 0, atol=1e-14)
    X = rng.uniform(size=(3, 4))
    for kernel in KERNELS:
        g = F.grad_a_matrix(X, E, np.zeros_like(A), kernel)
        np.testing.assert_allclose(g, -K.cross_gram(kernel, E, X), rtol=1e-15)
    assert F.grad_a([[2.0]], [[1.0]], [[3.0]], KernelSpec.linear(), 0, 0) == 1.0


def test_grad_e_examples(rng):
    X, E, A = positive_instance(rng)
    A[1] = 0.0
    for kernel in KERNELS:
        np.testing.assert_array_equal(F.grad_e_matrix(X, E, A, kernel)[:, 1], 0.0)
    E2, A2 = rng.uniform(size=(3, 2)), rng.uniform(size=(2, 4))
    assert np.allclose(F.grad_e_matrix(E2 @ A2, E2, A2, KernelSpec.linear()), 0, atol=1e-14)


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
def test_gradients_match_loops_and_difference_quotients(kernel, rng):
    X, E, A = positive_instance(rng)
    GA = F.grad_a_matrix(X, E, A, kernel)
    GE = F.grad_e_matrix(X, E, A, kernel)
    for n in range(E.shape[1]):
        np.testing.assert_allclose(GE[:, n], F.grad_e(X, E, A, kernel, n), rtol=1e-10, atol=1e-13)
        for t in range(X.shape[1]):
            assert GA[n, t] == pytest.approx(F.grad_a(X, E, A, kernel, n, t), rel=1e-10, abs=1e-13)
    assert fd_check(lambda v: F.cost(X, E, v, kernel), GA, A) < 1e-6
    assert fd_check(lambda v: F.cost(X, v, A, kernel), GE, E) < 1e-6


@pytest.mark.parametrize("kernel", [KernelSpec.linear(), KernelSpec.polynomial(2, 0.44), KernelSpec.gaussian(1.0)], ids=str)
def test_endmember_split_is_gradient(kernel, rng):
    X, E, A = positive_instance(rng)
    num, den = F.endmember_split(X, E, A, kernel)
    assert (num >= 0).all() and (den >= 0).all()
    np.testing.assert_allclose(den - num, F.grad_e_matrix(X, E, A, kernel), atol=1e-12)


def test_guarded_ratio():
    r = F.guarded_ratio(np.array([0.0, 2.0, 0.0]), np.array([0.0, 1.0, 5.0]), 1e-12)
    assert r[0] == 1.0 and r[1] == pytest.approx(2.0) and r[2] == 0.0


def test_additive_a_examples():
    E, A = np.array([[1.0]]), np.array([[0.5]])
    X = E @ A
    np.testing.assert_array_equal(F.additive_step_a(X, E, A, KernelSpec.linear(), 0.2), A)
    # grad = e(e a - x) = 1 when x = a - 1
    out = F.additive_step_a([[0.0]], [[1.0]], [[1.0]], KernelSpec.linear(), 0.2)
    assert out[0, 0] == pytest.approx(0.8)
    assert F.additive_step_a([[0.0]], [[1.0]], [[0.1]], KernelSpec.linear(), 2.0)[0, 0] == 0.0
    # a=0.5, grad=1, step 0.2
    assert F.additive_step_a([[-0.5 + 0.5]], [[1.0]], [[0.5]], KernelSpec.linear(), 0.2)[0, 0] == pytest.approx(0.4)
    out = F.additive_step_a([[1.5]], [[1.0]], [[0.5]], KernelSpec.linear(), 0.2, RegularizerSet(mu=2.0))
    assert out[0, 0] == pytest.approx(0.3)


def test_additive_e_examples():
    E, A = np.array([[0.4], [0.2]]), np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(F.additive_step_e(E @ A, E, A, KernelSpec.linear(), 0.5), E)
    # single pixel x=0, e=0.1, a=1: grad = 0.1; clamp needs a big step
    assert F.additive_step_e([[0.0]], [[0.1]], [[1.0]], KernelSpec.linear(), 2.0)[0, 0] == 0.0
    # grad = e - x with a=1: e=[1,1], x=[0.5,1.5] gives [0.5,-0.5]
    out = F.additive_step_e([[0.5], [1.5]], [[1.0], [1.0]], [[1.0]], KernelSpec.linear(), 1.0)
    np.testing.assert_allclose(out, [[0.5], [1.5]])
    semi = F.additive_step_e([[0.0]], [[0.1]], [[1.0]], KernelSpec.linear(), 2.0, semi_nmf=True)
    assert semi[0, 0] == pytest.approx(-0.1)


def test_multiplicative_a_examples(rng):
    E, A = rng.uniform(0.1, 1, (20, 3)), rng.uniform(0.1, 1, (3, 30))
    np.testing.assert_allclose(F.multiplicative_step_a(E @ A, E, A, KernelSpec.linear()), A, rtol=1e-12)
    E, A = E[:4, :2], A[:2, :5]
    A0 = A.copy()
    A0[0, 2] = 0.0
    assert F.multiplicative_step_a(rng.uniform(size=(4, 5)), E, A0, KernelSpec.linear())[0, 2] == 0.0
    assert F.multiplicative_step_a([[2.0]], [[1.0]], [[1.0]], KernelSpec.linear())[0, 0] == pytest.approx(2.0)


def test_multiplicative_e_examples(rng):
    E, A = rng.uniform(0.1, 1, (20, 3)), rng.uniform(0.1, 1, (3, 30))
    np.testing.assert_allclose(F.multiplicative_step_e(E @ A, E, A, KernelSpec.linear()), E, rtol=1e-12)
    E, A = E[:4, :2], A[:2, :5]
    A[1] = 0.0
    X = rng.uniform(size=(4, 5))
    for kernel in (KernelSpec.linear(), KernelSpec.polynomial(2, 0.44), KernelSpec.gaussian(1.0)):
        np.testing.assert_array_equal(F.multiplicative_step_e(X, E, A, kernel)[:, 1], E[:, 1])
    np.testing.assert_allclose(F.multiplicative_step_e([[4.0]], [[1.0]], [[1.0]], KernelSpec.linear()), [[4.0]])
    with pytest.raises(F.UnsupportedConfigError):
        F.multiplicative_step_e(X, E, A, KernelSpec.polynomial(3, 1.0))


def test_multiplicative_rejects_negative_kernel_values():
    with pytest.raises(F.SolverError):
        F.multiplicative_step_a([[1.0]], [[-1.0]], [[1.0]], KernelSpec.linear())


def test_normalize_examples():
    A, zero = F.normalize_columns([[0.2, 3.0, 0.0, 0.3], [0.2, 1.0, 0.0, 0.7]])
    np.testing.assert_allclose(A[:, 0], [0.5, 0.5])
    np.testing.assert_allclose(A[:, 1], [0.75, 0.25])
    np.testing.assert_array_equal(A[:, 2], [0.0, 0.0])
    np.testing.assert_array_equal(A[:, 3], [0.3, 0.7])
    assert zero.tolist() == [False, False, True, False]


def test_initialize_examples(rng):
    X = rng.uniform(size=(5, 8))
    cfg = F.SolverConfig(rank=3, seed=4)
    E1, A1 = F.initialize(cfg, X)
    E2, A2 = F.initialize(cfg, X)
    np.testing.assert_array_equal(E1, E2)
    np.testing.assert_array_equal(A1, A2)
    E, _ = F.initialize(F.SolverConfig(rank=3, init_jitter=0.0), X)
    assert all(any(np.array_equal(E[:, n], X[:, t]) for t in range(8)) for n in range(3))
    E, A = F.initialize(F.SolverConfig(rank=2, init="random", seed=42), np.ones((2, 2)))
    assert ((E > 0) & (E <= 1)).all() and ((A > 0) & (A <= 1)).all()
    with pytest.raises(ValueError):
        F.initialize(F.SolverConfig(rank=9), X)


def test_run_contracts(rng):
    X = rng.uniform(0.1, 1, (10, 20))
    res = F.run(F.SolverConfig(rank=3, iterations=1), X)
    assert len(res.cost_trace) == 2
    res = F.run(F.SolverConfig(rank=3, iterations=200, init="random", seed=1), X)
    assert np.all(np.diff(res.cost_trace) <= 1e-12)
    E0, A0 = rng.uniform(0.1, 1, (10, 3)), rng.uniform(0.1, 1, (3, 20))
    res = F.run(F.SolverConfig(rank=3, iterations=20), E0 @ A0, init=(E0, A0))
    assert np.all(np.abs(res.cost_trace) < 1e-20)


def test_run_uses_cube_shape_for_spatial_terms(rng):
    cube = F.HyperCube(rng.uniform(0.1, 1, (6, 12)), 3, 4)
    cfg = F.SolverConfig(rank=2, iterations=5, regularizers=RegularizerSet(omega_l=1.0, alpha_spatial=0.5))
    assert F.run(cfg, cube).A.shape == (2, 12)
    with pytest.raises(ValueError):
        F.run(cfg, cube.X)


def test_sum_to_one(rng):
    X = rng.uniform(0.1, 1, (6, 10))
    for every in (True, False):
        cfg = F.SolverConfig(rank=2, iterations=10, sum_to_one=True, normalize_every_iteration=every)
        np.testing.assert_allclose(F.run(cfg, X).A.sum(axis=0), 1.0, rtol=1e-12)


def test_diverged_run_carries_trace(rng):
    X = rng.uniform(0.1, 1, (4, 6))
    cfg = F.SolverConfig(rank=2, scheme="add", step_a=10.0, step_e=10.0, iterations=200)
    with np.errstate(all="ignore"), pytest.raises(F.DivergedError) as info:
        F.run(cfg, X)
    assert len(info.value.trace) >= 1


def test_additive_backtracking_never_increases_objective(rng):
    X = rng.uniform(0.1, 1, (6, 10))
    regs = RegularizerSet(mu=0.05, lam=0.01)
    for kernel in (KernelSpec.polynomial(3, 0.5), KernelSpec.gaussian(1.0)):
        cfg = F.SolverConfig(rank=2, kernel=kernel, scheme="add", step_a=0.5, step_e=0.5,
                             backtracking=True, regularizers=regs, iterations=1)
        E, A = F.initialize(cfg, X)
        for _ in range(15):
            before = F.objective(X, E, A, kernel, regs)
            E, A, _ = F.sweep(X, E, A, cfg)
            assert F.objective(X, E, A, kernel, regs) <= before + 1e-12


@pytest.mark.parametrize("scheme", ["mult", "add"])
def test_threads_match_sequential(scheme, rng):
    X = rng.uniform(0.1, 1, (8, 37))
    base = dict(rank=3, kernel=KernelSpec.gaussian(1.0), scheme=scheme, iterations=15,
                regularizers=RegularizerSet(mu=0.1, lam=0.1))
    seq = F.run(F.SolverConfig(**base), X)
    par = F.run(F.SolverConfig(threads=4, **base), X)
    np.testing.assert_allclose(par.E, seq.E, rtol=1e-10)
    np.testing.assert_allclose(par.A, seq.A, rtol=1e-10, atol=1e-14)
