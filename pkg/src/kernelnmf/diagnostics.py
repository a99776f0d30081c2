"""Finite-difference gradient checks and the Hessian-diagonal nonconvexity probe."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .factorization import cost
from .kernels import KernelSpec

NEGATIVE_TOL = -1e-8
SECOND_DIFF_STEP = 1e-4

NEGATIVE_FOUND = "NegativeFound"
NONE_FOUND = "NoneFound"


class NumericError(ArithmeticError):
    pass


def central_difference(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if step <= 0:
        raise ValueError("step must be > 0")
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x)
        x[idx] = orig - step
        fm = f(x)
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {idx}")
        g[idx] = (fp - fm) / (2 * step)
    return g


def fd_check(f, g, x, step: float = 1e-6, floor: float = 1e-12) -> float:
    """Max over coordinates of |fd - g| / max(floor, |fd|, |g|).

    ``g`` is either the claimed gradient at ``x`` or a callable returning it.
    ``floor`` guards coordinates whose true gradient is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    claimed = np.asarray(g(x) if callable(g) else g, dtype=np.float64)
    if claimed.shape != x.shape:
        raise ValueError(f"gradient shape {claimed.shape} does not match point shape {x.shape}")
    if not np.all(np.isfinite(claimed)):
        raise NumericError("claimed gradient has non-finite entries")
    fd = central_difference(f, x, step)
    scale = np.maximum(np.maximum(np.abs(fd), np.abs(claimed)), floor)
    return float(np.max(np.abs(fd - claimed) / scale)) if x.size else 0.0


def second_difference(f, x, idx, step: float = SECOND_DIFF_STEP) -> float:
    x = np.array(x, dtype=np.float64)
    orig = x[idx]
    f0 = f(x)
    x[idx] = orig + step
    fp = f(x)
    x[idx] = orig - step
    fm = f(x)
    return (fp - 2 * f0 + fm) / step**2


# -- Hessian diagonals of J with respect to one endmember ---------------------

def hessian_diag_poly(X, E, A, d: int, c: float, n: int, k: int) -> float:
    """k-th diagonal Hessian entry of J in e_n, polynomial kernel, closed form.

    d(d-1) sum_t a_nt ( -(x_t.e_n + c)^(d-2) x_kt^2 + sum_j a_jt (e_j.e_n + c)^(d-2) e_kj^2 ).
    """
    X, E, A = (np.asarray(m, dtype=np.float64) for m in (X, E, A))
    _check_index(E, n, k)
    if d < 2:
        raise ValueError("degree must be >= 2")
    e = E[:, n]
    x_part = -((X.T @ e + c) ** (d - 2)) * X[k] ** 2
    e_part = A.T @ ((E.T @ e + c) ** (d - 2) * E[k] ** 2)
    return float(d * (d - 1) * np.sum(A[n] * (x_part + e_part)))


def hessian_diag_gauss(X, E, A, sigma: float, n: int, k: int) -> float:
    """k-th diagonal Hessian entry of J in e_n, Gaussian kernel, closed form.

    (1/s^4) sum_t ( s^2 k(e_n,x_t) - s^2 sum_j a_jt k(e_n,e_j)
                    + sum_j a_jt k(e_n,e_j)(e_kn - e_kj)^2 - k(e_n,x_t)(e_kn - x_kt)^2 ).
    """
    X, E, A = (np.asarray(m, dtype=np.float64) for m in (X, E, A))
    _check_index(E, n, k)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if X.shape[1] == 0:
        return 0.0
    kernel = KernelSpec.gaussian(sigma)
    e = E[:, n]
    kx = K.cross_gram(kernel, e[:, None], X)[0]
    ke = K.cross_gram(kernel, e[:, None], E)[0]
    s2 = sigma**2
    terms = (
        s2 * kx
        - s2 * (A.T @ ke)
        + A.T @ (ke * (e[k] - E[k]) ** 2)
        - kx * (e[k] - X[k]) ** 2
    )
    return float(terms.sum() / s2**2)


def hessian_diag_linear(A, n: int) -> float:
    """Linear kernel: the diagonal entry is sum_t a_nt^2 for every band k."""
    return float(np.sum(np.asarray(A)[n] ** 2))


def hessian_diag(X, E, A, kernel: KernelSpec, n: int, k: int) -> float:
    if kernel.kind == K.POLYNOMIAL:
        return hessian_diag_poly(X, E, A, kernel.degree, kernel.c, n, k)
    if kernel.kind == K.GAUSSIAN:
        return hessian_diag_gauss(X, E, A, kernel.sigma, n, k)
    _check_index(np.asarray(E), n, k)
    return hessian_diag_linear(A, n)


def hessian_diag_fd(X, E, A, kernel: KernelSpec, n: int, k: int, step: float = SECOND_DIFF_STEP) -> float:
    """Second central difference of J along e_kn."""
    return second_difference(lambda Ev: cost(X, Ev, A, kernel), E, (k, n), step)


def _check_index(E, n, k):
    L, N = E.shape
    if not (0 <= n < N and 0 <= k < L):
        raise IndexError(f"(n, k) = ({n}, {k}) out of range for E of shape {E.shape}")


# -- nonconvexity probe --------------------------------------------------------

@dataclass
class ProbeReport:
    kernel: KernelSpec
    verdict: str
    samples: int
    h_kk: float | None = None
    h_kk_fd: float | None = None
    witness: dict | None = None
    # closed form vs second difference, over every sample where both were computed
    fd_max_rel_discrepancy: float = 0.0
    rejected: int = 0
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {
            "kernel": self.kernel.as_dict(),
            "verdict": self.verdict,
            "samples": self.samples,
            "h_kk": self.h_kk,
            "h_kk_fd": self.h_kk_fd,
            "fd_max_rel_discrepancy": self.fd_max_rel_discrepancy,
            "rejected": self.rejected,
            "notes": list(self.notes),
        }
        if self.witness is not None:
            d["witness"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.witness.items()}
        return d


def _targeted_instance(rng, kernel):
    """Small e_nk against large x_kt with little competing mass from other endmembers."""
    L, N, T = 3, 2, 2
    X = rng.uniform(0.5, 1.0, (L, T))
    E = rng.uniform(0.0, 0.1, (L, N))
    A = rng.uniform(0.0, 1.0, (N, T))
    if kernel.kind == K.GAUSSIAN:
        # push e_n away from the data and pile abundance on the other endmembers
        E[:, 0] = 0.0
        E[:, 1] = X.mean(axis=1)
        A[1] *= 2.0
    return X, E, A, 0, 0


def _random_instance(rng):
    L, N, T = rng.integers(1, 6, size=3)
    X = rng.uniform(0.0, 1.0, (L, T))
    E = rng.uniform(0.0, 1.0, (L, N))
    A = rng.uniform(0.0, 1.0, (N, T))
    return X, E, A, int(rng.integers(N)), int(rng.integers(L))


def probe_nonconvexity(kernel: KernelSpec, search_budget: int = 10_000, seed: int = 0) -> ProbeReport:
    """Search small nonnegative instances for a negative Hessian diagonal entry of J in e_n.

    A witness needs both the closed-form entry and the second finite
    difference of J below ``NEGATIVE_TOL``; the closed forms leave out some
    product-rule terms, so the second difference is the arbiter.  The linear
    kernel is convex in each endmember and serves as a negative control: its
    entries are ``sum_t a_nt^2 >= 0``.
    """
    if search_budget < 1:
        raise ValueError("search budget must be >= 1")
    rng = np.random.default_rng(seed)
    report = ProbeReport(kernel=kernel, verdict=NONE_FOUND, samples=0)
    if kernel.kind == K.LINEAR:
        report.notes.append("linear kernel: each endmember subproblem is a convex quadratic")
    for i in range(search_budget):
        X, E, A, n, k = _targeted_instance(rng, kernel) if i == 0 else _random_instance(rng)
        report.samples = i + 1
        h = hessian_diag(X, E, A, kernel, n, k)
        if not np.isfinite(h):
            raise NumericError("non-finite Hessian entry")
        if h >= NEGATIVE_TOL:
            continue
        h_fd = hessian_diag_fd(X, E, A, kernel, n, k)
        rel = abs(h - h_fd) / max(abs(h), abs(h_fd), 1e-12)
        report.fd_max_rel_discrepancy = max(report.fd_max_rel_discrepancy, rel)
        if h_fd >= NEGATIVE_TOL:
            # closed form negative but J is locally convex along e_kn here
            report.rejected += 1
            continue
        report.verdict = NEGATIVE_FOUND
        report.h_kk, report.h_kk_fd = h, h_fd
        report.witness = {"X": X, "E": E, "A": A, "n": n, "k": k}
        break
    if report.rejected:
        report.notes.append(
            f"{report.rejected} candidates had a negative closed-form entry but a "
            "nonnegative second difference and were rejected"
        )
    return report


# -- gradient suites -------------------------------------------------------------

def _length_scale(kernel: KernelSpec) -> float:
    # sharp Gaussians vary on the scale of sigma; step and instance spread follow it
    return min(1.0, kernel.sigma) if kernel.kind == K.GAUSSIAN else 1.0


def gradient_suite(kernels, seed: int = 0, inject_bug: bool = False, size=(5, 4, 6)) -> dict:
    """FD errors of every analytic gradient on a seeded strictly positive instance.

    Covers dJ/dA and dJ/dE for each kernel, the feature-space smoothness term
    for each kernel, and the kernel-independent penalties.  With
    ``inject_bug`` the dJ/dE gradients are deliberately perturbed so the
    checker itself can be tested.  Returns ``{name: max relative error}``.
    """
    from . import factorization as F
    from . import regularizers as R

    rng = np.random.default_rng(seed)
    L, N, T = size
    X0 = rng.uniform(0.1, 1.0, (L, T))
    E0 = rng.uniform(0.1, 1.0, (L, N))
    A = rng.uniform(0.1, 1.0, (N, T))
    errors = {}
    for kernel in kernels:
        scale = _length_scale(kernel)
        h = 1e-6 * scale
        X, E = X0 * scale, E0 * scale
        ge = F.grad_e_matrix(X, E, A, kernel)
        if inject_bug:
            ge = ge * 1.01 + 1e-3
        errors[f"grad_a[{kernel}]"] = fd_check(lambda a: cost(X, E, a, kernel), F.grad_a_matrix(X, E, A, kernel), A, h)
        errors[f"grad_e[{kernel}]"] = fd_check(lambda e: cost(X, e, A, kernel), ge, E, h)
        errors[f"l2_feature[{kernel}]"] = fd_check(
            lambda e: R.l2_feature_terms(e, 0.7, kernel).penalty, R.l2_feature_terms(E, 0.7, kernel).grad, E, h,
            floor=1e-8,
        )
    E = E0
    errors["l2_input"] = fd_check(lambda e: R.l2_input_terms(e, 0.7).penalty, R.l2_input_terms(E, 0.7).grad, E)
    errors["weighted_average"] = fd_check(
        lambda e: R.weighted_average_terms(e, 3.0, 0.5).penalty, R.weighted_average_terms(E, 3.0, 0.5).grad, E
    )
    errors["sparsity"] = fd_check(lambda a: R.sparsity_terms(a, 0.4).penalty, R.sparsity_terms(A, 0.4).grad, A)
    errors["fluctuation"] = fluctuation_check(rng)
    M = rng.uniform(0.1, 1.0, (4, 5))
    w = (1.0, 1.0, 1.0, 1.0)
    errors["spatial_G"] = fd_check(lambda m: R.spatial_penalty(m, 0.5, *w), R.spatial_G(M, 0.5, *w), M)
    return errors


def fluctuation_check(rng, L: int = 12, gamma: float = 0.3) -> float:
    """FD error of the fluctuation subgradient on interior bands.

    The point has distinct, well separated neighbouring values so the
    penalty is differentiable there; the end bands are held fixed.
    """
    from . import regularizers as R

    e = rng.permutation(L) / L + 0.05
    interior = slice(1, L - 1)

    def f(x):
        full = e.copy()
        full[interior] = x
        return R.fluctuation_penalty(full, gamma)

    g = R.fluctuation_subgradient(e, gamma)[interior]
    # piecewise linear, so a large step is exact; monotone bands have a zero
    # derivative, hence the floor at the gamma scale
    return fd_check(f, g, e[interior], step=1e-4, floor=1e-3 * gamma)
