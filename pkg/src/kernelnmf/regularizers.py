"""Penalties on endmembers and abundances.

Every term is returned as a :class:`Terms` tuple.  ``grad`` is the gradient
(or subgradient) of ``penalty``; ``numer`` and ``denom`` are its split into
nonnegative parts with ``grad == denom - numer``.  The multiplicative solver
adds ``denom`` to the denominator of its ratio and ``numer`` to the
numerator, which keeps both sides nonnegative.

Abundance maps follow the image fold: pixel ``t`` (0-based) sits at row
``t // b`` and column ``t % b`` of an ``a x b`` grid.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import kernels as K


@dataclass(frozen=True)
class RegularizerSet:
    """Regularization weights.  All zero means plain kernel NMF."""

    lam: float = 0.0  # 2-norm smoothness of endmembers, input space
    lam_h: float = 0.0  # 2-norm smoothness of endmembers, feature space
    gamma: float = 0.0  # fluctuation between neighbouring bands
    rho: float = 0.0  # weighted-average smoothness of endmembers
    alpha: float = 0.0  # forgetting factor of the weighted average
    mu: float = 0.0  # l1 sparsity of abundances
    omega_l: float = 0.0
    omega_r: float = 0.0
    omega_u: float = 0.0
    omega_d: float = 0.0
    alpha_spatial: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"regularizer {name} must be finite and >= 0, got {value}")
        if self.alpha >= 1 or self.alpha_spatial >= 1:
            raise ValueError("forgetting factors alpha and alpha_spatial must be < 1")

    @property
    def spatial(self) -> bool:
        return any((self.omega_l, self.omega_r, self.omega_u, self.omega_d))

    @property
    def on_endmembers(self) -> bool:
        return any((self.lam, self.lam_h, self.gamma, self.rho))

    @property
    def on_abundances(self) -> bool:
        return self.mu > 0 or self.spatial


class Terms(NamedTuple):
    penalty: float
    grad: np.ndarray
    numer: np.ndarray
    denom: np.ndarray


def _split(grad: np.ndarray, penalty: float) -> Terms:
    return Terms(penalty, grad, np.maximum(-grad, 0.0), np.maximum(grad, 0.0))


@dataclass(frozen=True)
class SmoothingOperator:
    """Exponentially weighted running-average matrix T and Q = (I - T)^T (I - T) / s."""

    T: np.ndarray
    Q: np.ndarray

    @property
    def transposed(self) -> "SmoothingOperator":
        """Operator for the reversed direction (average taken from the other end)."""
        T = self.T.T.copy()
        D = np.eye(len(T)) - T
        return SmoothingOperator(T, D.T @ D / len(T))


def smoothing_matrix(alpha: float, s: int) -> SmoothingOperator:
    """Lower-triangular ``T[p, q] = alpha**(p - q) * (1 - alpha)`` and its Q."""
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must satisfy 0 <= alpha < 1, got {alpha}")
    if s < 1:
        raise ValueError(f"size must be >= 1, got {s}")
    p = np.arange(s)
    lag = p[:, None] - p[None, :]
    T = np.where(lag >= 0, alpha ** np.maximum(lag, 0) * (1 - alpha), 0.0)
    D = np.eye(s) - T
    return SmoothingOperator(T, D.T @ D / s)


def fold(A: np.ndarray, n: int, shape: tuple[int, int]) -> np.ndarray:
    """Abundance map of endmember ``n`` as an ``a x b`` image."""
    a, b = shape
    row = np.asarray(A)[n]
    if row.size != a * b:
        raise ValueError(f"{row.size} pixels cannot fold into {a}x{b}")
    return row.reshape(a, b)


def unfold(M: np.ndarray) -> np.ndarray:
    return np.asarray(M).reshape(-1)


# -- endmember terms ---------------------------------------------------------

def l2_input_terms(E, lam: float) -> Terms:
    """(lam/2) sum_n |e_n|^2."""
    E = np.asarray(E, dtype=np.float64)
    return _split(lam * E, 0.5 * lam * float(np.sum(E * E)))


def l2_feature_terms(E, lam_h: float, kernel: K.KernelSpec) -> Terms:
    """(lam_h/2) sum_n kappa(e_n, e_n), the feature-space norm of each endmember.

    The gradient uses the first-slot kernel gradient at ``(e_n, e_n)``, so it
    vanishes identically for the Gaussian kernel.
    """
    E = np.asarray(E, dtype=np.float64)
    grad = np.zeros_like(E)
    penalty = 0.0
    if lam_h:
        for n in range(E.shape[1]):
            grad[:, n] = lam_h * K.self_gradient(kernel, E[:, n])
            penalty += 0.5 * lam_h * K.evaluate(kernel, E[:, n], E[:, n])
    return _split(grad, penalty)


def fluctuation_penalty(E, gamma: float) -> float:
    """(gamma/2) sum over neighbouring bands of |e_ln - e_(l-1)n|."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    return 0.5 * gamma * float(np.abs(np.diff(E, axis=0)).sum())


def fluctuation_subgradient(e, gamma: float) -> np.ndarray:
    """Subgradient of :func:`fluctuation_penalty` on interior bands.

    -gamma at a strict local minimum, +gamma at a strict local maximum, 0
    elsewhere.  Ties and the two end bands get 0.
    """
    e = np.asarray(e, dtype=np.float64)
    out = np.zeros_like(e)
    if e.shape[0] < 3:
        return out
    mid, left, right = e[1:-1], e[:-2], e[2:]
    local_min = (mid < left) & (mid < right)
    local_max = (mid > left) & (mid > right)
    out[1:-1] = gamma * (local_max.astype(float) - local_min.astype(float))
    return out


def fluctuation_terms(E, gamma: float) -> Terms:
    E = np.asarray(E, dtype=np.float64)
    grad = fluctuation_subgradient(E, gamma) if gamma else np.zeros_like(E)
    return _split(grad, fluctuation_penalty(E, gamma))


def weighted_average_terms(E, rho: float, alpha: float) -> Terms:
    """(rho / 2L) sum_n |(I - T) e_n|^2 with gradient rho Q e_n.

    Q has negative off-diagonal entries, so ``rho Q e_n`` is split through
    the positive and negative parts of Q rather than by sign of the product.
    """
    E = np.asarray(E, dtype=np.float64)
    L = E.shape[0]
    op = smoothing_matrix(alpha, L)
    D = E - op.T @ E
    penalty = rho / (2 * L) * float(np.sum(D * D))
    Qp, Qn = np.maximum(op.Q, 0.0), np.maximum(-op.Q, 0.0)
    return Terms(penalty, rho * (op.Q @ E), rho * (Qn @ E), rho * (Qp @ E))


def endmember_terms(E, regs: RegularizerSet, kernel: K.KernelSpec) -> Terms:
    """Sum of every active endmember penalty."""
    E = np.asarray(E, dtype=np.float64)
    parts = []
    if regs.lam:
        parts.append(l2_input_terms(E, regs.lam))
    if regs.lam_h:
        parts.append(l2_feature_terms(E, regs.lam_h, kernel))
    if regs.gamma:
        parts.append(fluctuation_terms(E, regs.gamma))
    if regs.rho:
        parts.append(weighted_average_terms(E, regs.rho, regs.alpha))
    return _sum_terms(parts, E.shape)


# -- abundance terms ---------------------------------------------------------

def sparsity_terms(A, mu: float) -> Terms:
    """mu * sum of all abundances (the l1 norm, since A >= 0)."""
    A = np.asarray(A, dtype=np.float64)
    full = np.full_like(A, mu)
    return Terms(mu * float(A.sum()), full, np.zeros_like(A), full)


def _directional(alpha, a, b):
    right = smoothing_matrix(alpha, b)
    down = smoothing_matrix(alpha, a)
    return right, right.transposed, down, down.transposed


def spatial_penalty(M, alpha, omega_l, omega_r, omega_u, omega_d) -> float:
    """Weighted-average roughness of one abundance map in the four directions.

    Each row of ``M`` is compared with its running average from the left and
    from the right, each column with its running average from above and from
    below.  Row terms are scaled by ``1/b``, column terms by ``1/a``.
    """
    M = np.asarray(M, dtype=np.float64)
    a, b = M.shape
    right, left, down, up = _directional(alpha, a, b)
    # (I - T) applied to every row of M is M - M T^T
    total = 0.0
    for w, op in ((omega_l, right), (omega_r, left)):
        if w:
            R = M - M @ op.T.T
            total += w / b * float(np.sum(R * R))
    for w, op in ((omega_u, down), (omega_d, up)):
        if w:
            C = M - op.T @ M
            total += w / a * float(np.sum(C * C))
    return 0.5 * total


def spatial_G(M, alpha, omega_l, omega_r, omega_u, omega_d) -> np.ndarray:
    """Gradient of :func:`spatial_penalty` with respect to every entry of ``M``.

    Same ``a x b`` shape as ``M``: ``w_l M Q_r + w_r M Q_l + (w_u M^T Q_d + w_d M^T Q_u)^T``.
    """
    M = np.asarray(M, dtype=np.float64)
    pos, neg = _spatial_split(M, alpha, omega_l, omega_r, omega_u, omega_d)
    return pos - neg


def _spatial_split(M, alpha, omega_l, omega_r, omega_u, omega_d):
    a, b = M.shape
    right, left, down, up = _directional(alpha, a, b)
    pos = np.zeros_like(M)
    neg = np.zeros_like(M)
    for w, op in ((omega_l, right), (omega_r, left)):
        if w:
            pos += w * (M @ np.maximum(op.Q, 0.0))
            neg += w * (M @ np.maximum(-op.Q, 0.0))
    for w, op in ((omega_u, down), (omega_d, up)):
        if w:
            pos += w * (M.T @ np.maximum(op.Q, 0.0)).T
            neg += w * (M.T @ np.maximum(-op.Q, 0.0)).T
    return pos, neg


def spatial_terms(A, regs: RegularizerSet, shape: tuple[int, int]) -> Terms:
    """Spatial penalty summed over all abundance maps, as (N, T) arrays."""
    A = np.asarray(A, dtype=np.float64)
    w = (regs.omega_l, regs.omega_r, regs.omega_u, regs.omega_d)
    numer = np.zeros_like(A)
    denom = np.zeros_like(A)
    penalty = 0.0
    for n in range(A.shape[0]):
        M = fold(A, n, shape)
        pos, neg = _spatial_split(M, regs.alpha_spatial, *w)
        denom[n] = unfold(pos)
        numer[n] = unfold(neg)
        penalty += spatial_penalty(M, regs.alpha_spatial, *w)
    return Terms(penalty, denom - numer, numer, denom)


def abundance_terms(A, regs: RegularizerSet, shape: tuple[int, int] | None) -> Terms:
    """Sum of every active abundance penalty."""
    A = np.asarray(A, dtype=np.float64)
    parts = []
    if regs.mu:
        parts.append(sparsity_terms(A, regs.mu))
    if regs.spatial:
        if shape is None:
            raise ValueError("spatial regularization needs the image shape (a, b)")
        parts.append(spatial_terms(A, regs, shape))
    return _sum_terms(parts, A.shape)


def _sum_terms(parts, shape) -> Terms:
    if not parts:
        z = np.zeros(shape)
        return Terms(0.0, z, z.copy(), z.copy())
    return Terms(
        sum(p.penalty for p in parts),
        sum(p.grad for p in parts),
        sum(p.numer for p in parts),
        sum(p.denom for p in parts),
    )
