"""Kernel NMF with endmembers kept in the input space.

The data pixels ``x_t`` are approximated in feature space by
``Phi(x_t) ~ sum_n a_nt Phi(e_n)`` and the cost

    J = 1/2 sum_t || Phi(x_t) - sum_n a_nt Phi(e_n) ||^2

is minimised by alternating an abundance sweep and an endmember sweep, with
either projected gradient steps (``"add"``) or split-gradient multiplicative
steps (``"mult"``).  Shapes: ``X`` is (L, T), ``E`` is (L, N), ``A`` is (N, T).
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from . import regularizers as R
from .kernels import KernelSpec
from .regularizers import RegularizerSet

ADDITIVE = "add"
MULTIPLICATIVE = "mult"
INIT_RANDOM = "random"
INIT_DATA = "data"


class UnsupportedConfigError(ValueError):
    """A solver configuration the update rules do not cover."""


class SolverError(RuntimeError):
    """An update could not be carried out (e.g. negative kernel values)."""


class DivergedError(SolverError):
    """The cost became non-finite; ``trace`` holds the costs recorded so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = np.asarray(trace)


@dataclass
class HyperCube:
    """Nonnegative (L, T) data matrix of an a x b image.

    Pixel ``t`` (0-based) is image position ``(t // b, t % b)``.
    """

    X: np.ndarray
    a: int
    b: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"data must be a 2-D (bands x pixels) matrix, got shape {self.X.shape}")
        if self.a * self.b != self.X.shape[1]:
            raise ValueError(f"{self.X.shape[1]} pixels do not fit a {self.a}x{self.b} image")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("data contains non-finite values")
        if np.any(self.X < 0):
            raise ValueError("data must be nonnegative")

    @classmethod
    def from_image(cls, image) -> "HyperCube":
        """Fold an (a, b, L) image into a cube."""
        image = np.asarray(image, dtype=np.float64)
        a, b, L = image.shape
        return cls(image.reshape(a * b, L).T.copy(), a, b)

    def to_image(self) -> np.ndarray:
        return self.X.T.reshape(self.a, self.b, self.bands)

    @property
    def bands(self) -> int:
        return self.X.shape[0]

    @property
    def pixels(self) -> int:
        return self.X.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.a, self.b

    def pixel_index(self, i: int, j: int) -> int:
        return i * self.b + j

    def coords(self, t: int) -> tuple[int, int]:
        return divmod(t, self.b)


@dataclass
class SolverConfig:
    rank: int
    kernel: KernelSpec = field(default_factory=KernelSpec)
    scheme: str = MULTIPLICATIVE
    iterations: int = 200
    step_a: float = 1e-3
    step_e: float = 1e-3
    backtracking: bool = False
    sum_to_one: bool = False
    normalize_every_iteration: bool = True
    semi_nmf: bool = False
    regularizers: RegularizerSet = field(default_factory=RegularizerSet)
    init: str = INIT_DATA
    seed: int = 0
    init_jitter: float = 1e-3
    epsilon_guard: float = 1e-12
    threads: int = 1

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.scheme not in (ADDITIVE, MULTIPLICATIVE):
            raise ValueError(f"scheme must be {ADDITIVE!r} or {MULTIPLICATIVE!r}, got {self.scheme!r}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_a <= 0 or self.step_e <= 0:
            raise ValueError("stepsizes must be > 0")
        if self.epsilon_guard <= 0:
            raise ValueError("epsilon_guard must be > 0")
        if self.init not in (INIT_RANDOM, INIT_DATA):
            raise ValueError(f"init must be {INIT_RANDOM!r} or {INIT_DATA!r}, got {self.init!r}")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.scheme == MULTIPLICATIVE:
            check_multiplicative(self.kernel)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.as_dict()
        return d


@dataclass
class RunResult:
    E: np.ndarray
    A: np.ndarray
    cost_trace: np.ndarray
    re: float
    re_phi: float
    wall_time: float
    config: dict
    zero_columns: int = 0


def check_multiplicative(kernel: KernelSpec):
    if kernel.kind == K.POLYNOMIAL and kernel.degree != 2:
        raise UnsupportedConfigError(
            f"the multiplicative endmember rule is only derived for the quadratic "
            f"polynomial kernel (degree 2), got degree {kernel.degree}; use the additive scheme"
        )


# -- cost and gradients ------------------------------------------------------

def _check(X, E, A):
    X = np.asarray(X, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if X.ndim != 2 or E.ndim != 2 or A.ndim != 2:
        raise ValueError("X, E and A must be 2-D")
    if E.shape[0] != X.shape[0] or A.shape != (E.shape[1], X.shape[1]):
        raise ValueError(f"inconsistent shapes X{X.shape}, E{E.shape}, A{A.shape}")
    return X, E, A


def pixel_residuals(X, E, A, kernel: KernelSpec) -> np.ndarray:
    """Squared feature-space residual ||Phi(x_t) - sum_n a_nt Phi(e_n)||^2 per pixel."""
    X, E, A = _check(X, E, A)
    if kernel.kind == K.LINEAR:
        # Phi is the identity; the explicit form avoids cancellation near zero
        D = X - E @ A
        return np.einsum("lt,lt->t", D, D)
    KX = K.cross_gram(kernel, E, X)
    KE = K.gram(kernel, E)
    r = K.self_values(kernel, X) - 2 * np.einsum("nt,nt->t", A, KX) + np.einsum("nt,nt->t", A, KE @ A)
    return np.maximum(r, 0.0)


def cost(X, E, A, kernel: KernelSpec) -> float:
    """J, including the constant kappa(x_t, x_t) terms so that J >= 0."""
    return 0.5 * float(pixel_residuals(X, E, A, kernel).sum())


def objective(X, E, A, kernel: KernelSpec, regs: RegularizerSet, shape=None) -> float:
    """J plus every active penalty."""
    total = cost(X, E, A, kernel)
    if regs.on_endmembers:
        total += R.endmember_terms(E, regs, kernel).penalty
    if regs.on_abundances:
        total += R.abundance_terms(A, regs, shape).penalty
    return total


def grad_a_matrix(X, E, A, kernel: KernelSpec) -> np.ndarray:
    """dJ/da_nt for every (n, t)."""
    X, E, A = _check(X, E, A)
    return K.gram(kernel, E) @ A - K.cross_gram(kernel, E, X)


def grad_a(X, E, A, kernel: KernelSpec, n: int, t: int) -> float:
    X, E, A = _check(X, E, A)
    N, T = A.shape
    if not (0 <= n < N and 0 <= t < T):
        raise IndexError(f"(n, t) = ({n}, {t}) out of range for {N} endmembers and {T} pixels")
    return float(
        -K.evaluate(kernel, E[:, n], X[:, t])
        + sum(A[m, t] * K.evaluate(kernel, E[:, n], E[:, m]) for m in range(N))
    )


def _pixel_parts(X, E, A, kernel):
    """Pixel-dependent (numerator, denominator) parts of the endmember gradient split."""
    if kernel.kind == K.LINEAR:
        return X @ A.T, None
    if kernel.kind == K.POLYNOMIAL:
        d = kernel.degree
        P = d * (E.T @ X + kernel.c) ** (d - 1)
        return X @ (A * P).T, None
    s2 = kernel.sigma**2
    AK = A * K.cross_gram(kernel, E, X)
    return (X @ AK.T) / s2, (E * AK.sum(axis=1)) / s2


def _endmember_parts(E, W, kernel):
    """Parts of the split that depend on E and W = A A^T only."""
    if kernel.kind == K.LINEAR:
        return None, E @ W
    if kernel.kind == K.POLYNOMIAL:
        d = kernel.degree
        return None, E @ (W * (d * (E.T @ E + kernel.c) ** (d - 1)))
    s2 = kernel.sigma**2
    WK = W * K.gram(kernel, E)
    return (E * WK.sum(axis=1)) / s2, (E @ WK) / s2


def _add(*terms):
    out = None
    for t in terms:
        if t is not None:
            out = t if out is None else out + t
    return out


def _column_chunks(T, threads):
    if threads <= 1 or T < 2:
        return [slice(0, T)]
    edges = np.linspace(0, T, min(threads, T) + 1).astype(int)
    return [slice(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]


def _map(fn, chunks, threads):
    if len(chunks) == 1:
        return [fn(chunks[0])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def endmember_split(X, E, A, kernel: KernelSpec, threads: int = 1):
    """Nonnegative (numerator, denominator) with ``denominator - numerator == dJ/dE``.

    For nonnegative data and factors both parts are entrywise >= 0.  The
    pixel sums are split into ``threads`` blocks; with one thread the result
    is the sequential reference.
    """
    X, E, A = _check(X, E, A)
    chunks = _column_chunks(X.shape[1], threads)
    parts = _map(lambda s: _pixel_parts(X[:, s], E, A[:, s], kernel), chunks, threads)
    num_x = _add(*(p[0] for p in parts))
    den_x = _add(*(p[1] for p in parts))
    num_e, den_e = _endmember_parts(E, A @ A.T, kernel)
    zero = np.zeros_like(E)
    num = _add(num_x, num_e)
    den = _add(den_x, den_e)
    return (zero if num is None else num), (zero if den is None else den)


def grad_e_matrix(X, E, A, kernel: KernelSpec) -> np.ndarray:
    """dJ/de_n for every n, as an (L, N) matrix."""
    num, den = endmember_split(X, E, A, kernel)
    return den - num


def grad_e(X, E, A, kernel: KernelSpec, n: int) -> np.ndarray:
    """dJ/de_n assembled term by term from the kernel gradient."""
    X, E, A = _check(X, E, A)
    N, T = A.shape
    if not 0 <= n < N:
        raise IndexError(f"endmember {n} out of range for {N} endmembers")
    g = np.zeros(E.shape[0])
    for t in range(T):
        inner = -K.gradient(kernel, E[:, n], X[:, t])
        for m in range(N):
            inner += A[m, t] * K.gradient(kernel, E[:, n], E[:, m])
        g += A[n, t] * inner
    return g


# -- update rules ------------------------------------------------------------

def guarded_ratio(num, den, eps: float) -> np.ndarray:
    """num / (den + eps), defined as 1 where both are below eps."""
    ratio = num / (den + eps)
    dead = (num < eps) & (den < eps)
    if np.any(dead):
        ratio = np.where(dead, 1.0, ratio)
    return ratio


def normalize_columns(A):
    """Scale every column of A to unit sum.

    Returns ``(A_normalized, zero_mask)``; all-zero columns are left
    untouched and flagged in ``zero_mask``.
    """
    A = np.asarray(A, dtype=np.float64)
    s = A.sum(axis=0)
    zero = s <= 0
    return A / np.where(zero, 1.0, s), zero


def additive_step_a(X, E, A, kernel: KernelSpec, step, regs: RegularizerSet | None = None,
                    shape=None, threads: int = 1) -> np.ndarray:
    """One projected gradient sweep over all abundances.

    ``step`` is a scalar or an (N, T) array of per-entry stepsizes.
    """
    X, E, A = _check(X, E, A)
    regs = regs or RegularizerSet()
    KE = K.gram(kernel, E)
    extra = R.abundance_terms(A, regs, shape).grad if regs.on_abundances else None
    step = np.broadcast_to(np.asarray(step, dtype=np.float64), A.shape)

    def sweep(s):
        g = KE @ A[:, s] - K.cross_gram(kernel, E, X[:, s])
        if extra is not None:
            g = g + extra[:, s]
        return np.maximum(A[:, s] - step[:, s] * g, 0.0)

    chunks = _column_chunks(A.shape[1], threads)
    return np.concatenate(_map(sweep, chunks, threads), axis=1)


def additive_step_e(X, E, A, kernel: KernelSpec, step, regs: RegularizerSet | None = None,
                    semi_nmf: bool = False, threads: int = 1) -> np.ndarray:
    """One projected gradient step on every endmember (step is scalar or per-endmember)."""
    X, E, A = _check(X, E, A)
    regs = regs or RegularizerSet()
    num, den = endmember_split(X, E, A, kernel, threads)
    g = den - num
    if regs.on_endmembers:
        g = g + R.endmember_terms(E, regs, kernel).grad
    step = np.asarray(step, dtype=np.float64)
    E_new = E - (step[None, :] if step.ndim == 1 else step) * g
    return E_new if semi_nmf else np.maximum(E_new, 0.0)


def multiplicative_step_a(X, E, A, kernel: KernelSpec, regs: RegularizerSet | None = None,
                          shape=None, eps: float = 1e-12, threads: int = 1) -> np.ndarray:
    """a_nt <- a_nt kappa(e_n, x_t) / (sum_m a_mt kappa(e_n, e_m) + penalty terms)."""
    X, E, A = _check(X, E, A)
    regs = regs or RegularizerSet()
    KE = K.gram(kernel, E)
    terms = R.abundance_terms(A, regs, shape) if regs.on_abundances else None

    def sweep(s):
        num = K.cross_gram(kernel, E, X[:, s])
        if np.any(num < 0):
            raise SolverError("negative kernel values; the multiplicative rule needs nonnegative data and factors")
        den = KE @ A[:, s]
        if terms is not None:
            num = num + terms.numer[:, s]
            den = den + terms.denom[:, s]
        return A[:, s] * guarded_ratio(num, den, eps)

    chunks = _column_chunks(A.shape[1], threads)
    return np.concatenate(_map(sweep, chunks, threads), axis=1)


def multiplicative_step_e(X, E, A, kernel: KernelSpec, regs: RegularizerSet | None = None,
                          eps: float = 1e-12, threads: int = 1) -> np.ndarray:
    """e_n <- e_n * numerator / denominator, componentwise, from the gradient split."""
    check_multiplicative(kernel)
    X, E, A = _check(X, E, A)
    regs = regs or RegularizerSet()
    num, den = endmember_split(X, E, A, kernel, threads)
    if regs.on_endmembers:
        terms = R.endmember_terms(E, regs, kernel)
        num = num + terms.numer
        den = den + terms.denom
    if np.any(num < 0) or np.any(den < 0):
        raise SolverError("negative split terms; the multiplicative rule needs nonnegative data and factors")
    return E * guarded_ratio(num, den, eps)


def _backtrack(X, E, A, config, shape, propose):
    """Halve the stepsize until the objective does not increase (at most 20 times)."""
    kernel, regs = config.kernel, config.regularizers
    before = objective(X, E, A, kernel, regs, shape)
    scale = 1.0
    for _ in range(21):
        E_new, A_new = propose(scale)
        after = objective(X, E_new, A_new, kernel, regs, shape)
        if after <= before:
            return E_new, A_new
        scale *= 0.5
    return E, A


# -- driver ------------------------------------------------------------------

def _uniform(rng, shape, low):
    """Uniform draws on (low, 1]."""
    return low + (1.0 - low) * (1.0 - rng.random(shape))


def initialize(config: SolverConfig, X):
    """Strictly positive starting factors, deterministic in ``config.seed``."""
    X = np.asarray(X, dtype=np.float64)
    L, T = X.shape
    N = config.rank
    rng = np.random.default_rng(config.seed)
    low = config.epsilon_guard
    if config.init == INIT_RANDOM:
        return _uniform(rng, (L, N), low), _uniform(rng, (N, T), low)
    if N > T:
        raise ValueError(f"cannot draw {N} distinct data columns from {T} pixels")
    idx = rng.choice(T, size=N, replace=False)
    E = X[:, idx] + config.init_jitter * _uniform(rng, (L, N), low)
    A, _ = normalize_columns(_uniform(rng, (N, T), low))
    return E, A


def sweep(X, E, A, config: SolverConfig, shape=None):
    """One full iteration: abundance sweep, optional normalization, endmember sweep.

    Returns ``(E, A, zero_columns)``.
    """
    kernel, regs, eps, threads = config.kernel, config.regularizers, config.epsilon_guard, config.threads
    normalize = config.sum_to_one and config.normalize_every_iteration
    zero = 0

    if config.scheme == MULTIPLICATIVE:
        A = multiplicative_step_a(X, E, A, kernel, regs, shape, eps, threads)
    else:
        def prop_a(scale):
            return E, additive_step_a(X, E, A, kernel, scale * config.step_a, regs, shape, threads)
        A = _backtrack(X, E, A, config, shape, prop_a)[1] if config.backtracking else prop_a(1.0)[1]
    if normalize:
        A, mask = normalize_columns(A)
        zero = int(mask.sum())

    if config.scheme == MULTIPLICATIVE:
        E = multiplicative_step_e(X, E, A, kernel, regs, eps, threads)
    else:
        def prop_e(scale):
            return additive_step_e(X, E, A, kernel, scale * config.step_e, regs, config.semi_nmf, threads), A
        E = _backtrack(X, E, A, config, shape, prop_e)[0] if config.backtracking else prop_e(1.0)[0]
    return E, A, zero


def run(config: SolverConfig, X, shape=None, init=None) -> RunResult:
    """Factorize X from ``initialize(config, X)`` or from explicit ``init=(E, A)``.

    ``X`` may be a :class:`HyperCube`, whose image shape is then used for
    spatial regularization.
    """
    from .metrics import feature_reconstruction_error, reconstruction_error

    if isinstance(X, HyperCube):
        shape = shape or X.shape
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    if config.regularizers.spatial and shape is None:
        raise ValueError("spatial regularization needs the image shape (a, b)")
    start = time.perf_counter()
    if init is None:
        E, A = initialize(config, X)
    else:
        E, A = (np.array(m, dtype=np.float64) for m in init)
        _check(X, E, A)

    trace = [cost(X, E, A, config.kernel)]
    zero = 0
    for _ in range(config.iterations):
        E, A, zero = sweep(X, E, A, config, shape)
        J = cost(X, E, A, config.kernel)
        if not np.isfinite(J):
            raise DivergedError(f"cost became non-finite after {len(trace)} iterations", trace)
        trace.append(J)
    if config.sum_to_one and not config.normalize_every_iteration:
        A, mask = normalize_columns(A)
        zero = int(mask.sum())

    return RunResult(
        E=E,
        A=A,
        cost_trace=np.asarray(trace),
        re=reconstruction_error(X, E, A),
        re_phi=feature_reconstruction_error(X, E, A, config.kernel),
        wall_time=time.perf_counter() - start,
        config=config.as_dict(),
        zero_columns=zero,
    )
