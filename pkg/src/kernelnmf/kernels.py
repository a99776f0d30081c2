"""Kernel functions, Gram matrices and gradients with respect to the first argument.

Three kernels are supported: linear ``z.e``, polynomial ``(z.e + c)**d`` and
Gaussian ``exp(-|e - z|**2 / (2 sigma**2))``.  All gradients are taken with
respect to the *first* argument ``e`` (the endmember), which is what every
update rule of the solver needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

LINEAR = "linear"
POLYNOMIAL = "poly"
GAUSSIAN = "gauss"
KINDS = (LINEAR, POLYNOMIAL, GAUSSIAN)


@dataclass(frozen=True)
class KernelSpec:
    """Tagged kernel choice.

    ``degree`` and ``c`` are only read for the polynomial kernel, ``sigma``
    only for the Gaussian kernel.
    """

    kind: str = LINEAR
    degree: int = 2
    c: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel {self.kind!r}, expected one of {KINDS}")
        if self.kind == POLYNOMIAL:
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError(f"polynomial degree must be a positive integer, got {self.degree}")
            if not (np.isfinite(self.c) and self.c >= 0):
                raise ValueError(f"polynomial offset c must be >= 0, got {self.c}")
        if self.kind == GAUSSIAN and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"Gaussian bandwidth sigma must be > 0, got {self.sigma}")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(LINEAR)

    @classmethod
    def polynomial(cls, degree: int = 2, c: float = 0.0) -> "KernelSpec":
        return cls(POLYNOMIAL, degree=int(degree), c=float(c))

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "KernelSpec":
        return cls(GAUSSIAN, sigma=float(sigma))

    def as_dict(self) -> dict:
        if self.kind == POLYNOMIAL:
            return {"kind": self.kind, "degree": self.degree, "c": self.c}
        if self.kind == GAUSSIAN:
            return {"kind": self.kind, "sigma": self.sigma}
        return {"kind": self.kind}

    def __str__(self):
        if self.kind == POLYNOMIAL:
            return f"poly(d={self.degree}, c={self.c:g})"
        if self.kind == GAUSSIAN:
            return f"gauss(sigma={self.sigma:g})"
        return "linear"


def _pair(e, z):
    e = np.asarray(e, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if e.ndim != 1 or z.ndim != 1 or e.shape != z.shape or e.size == 0:
        raise ValueError(f"kernel arguments must be equal-length vectors, got {e.shape} and {z.shape}")
    return e, z


def evaluate(kernel: KernelSpec, e, z) -> float:
    """kappa(e, z) for two vectors of equal length."""
    e, z = _pair(e, z)
    if kernel.kind == LINEAR:
        return float(z @ e)
    if kernel.kind == POLYNOMIAL:
        return float((z @ e + kernel.c) ** kernel.degree)
    diff = e - z
    return float(np.exp(-(diff @ diff) / (2.0 * kernel.sigma**2)))


def gradient(kernel: KernelSpec, e, z) -> np.ndarray:
    """Gradient of kappa(e, z) with respect to e."""
    e, z = _pair(e, z)
    if kernel.kind == LINEAR:
        return z.copy()
    if kernel.kind == POLYNOMIAL:
        d = kernel.degree
        return d * (z @ e + kernel.c) ** (d - 1) * z
    return -evaluate(kernel, e, z) / kernel.sigma**2 * (e - z)


def self_gradient(kernel: KernelSpec, e) -> np.ndarray:
    """Gradient of kappa(e, z) in its first slot, evaluated at z = e.

    Zero for the Gaussian kernel, whatever ``e`` is.
    """
    e, _ = _pair(e, e)
    if kernel.kind == GAUSSIAN:
        return np.zeros_like(e)
    return gradient(kernel, e, e)


def cross_gram(kernel: KernelSpec, E, X) -> np.ndarray:
    """Matrix of kappa(e_n, x_t), shape (N, T), for columns of E (L x N) and X (L x T)."""
    E = np.asarray(E, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if E.ndim != 2 or X.ndim != 2 or E.shape[0] != X.shape[0]:
        raise ValueError(f"band mismatch between {E.shape} and {X.shape}")
    if kernel.kind == GAUSSIAN:
        # cdist takes differences first, so kappa(e, e) is exactly 1
        sq = cdist(E.T, X.T, "sqeuclidean") if E.shape[1] and X.shape[1] else np.zeros((E.shape[1], X.shape[1]))
        return np.exp(-sq / (2.0 * kernel.sigma**2))
    inner = E.T @ X
    if kernel.kind == POLYNOMIAL:
        return (inner + kernel.c) ** kernel.degree
    return inner


def gram(kernel: KernelSpec, E) -> np.ndarray:
    """Symmetric (N, N) matrix of kappa(e_n, e_m)."""
    K = cross_gram(kernel, E, E)
    return 0.5 * (K + K.T)


def self_values(kernel: KernelSpec, X) -> np.ndarray:
    """kappa(x_t, x_t) for every column of X."""
    X = np.asarray(X, dtype=np.float64)
    if kernel.kind == GAUSSIAN:
        return np.ones(X.shape[1])
    sq = np.einsum("lt,lt->t", X, X)
    if kernel.kind == POLYNOMIAL:
        return (sq + kernel.c) ** kernel.degree
    return sq
