"""Reconstruction errors in input and feature space, and endmember matching."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec


@dataclass
class EvalReport:
    re: float
    re_phi: float
    per_pixel_residuals: np.ndarray
    sam_per_endmember: np.ndarray | None = None
    matching: tuple[int, ...] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_sam(self) -> float | None:
        return None if self.sam_per_endmember is None else float(np.mean(self.sam_per_endmember))

    def as_dict(self) -> dict:
        d = {"re": self.re, "re_phi": self.re_phi}
        if self.sam_per_endmember is not None:
            d["sam_degrees"] = [float(v) for v in self.sam_per_endmember]
            d["mean_sam_degrees"] = self.mean_sam
            d["matching"] = [int(i) for i in self.matching]
        d.update(self.extra)
        return d


def reconstruction_error(X, E, A) -> float:
    """RE = sqrt( sum_t |x_t - E a_t|^2 / (T L) )."""
    X = np.asarray(X, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if E.shape[0] != X.shape[0] or A.shape != (E.shape[1], X.shape[1]):
        raise ValueError(f"inconsistent shapes X{X.shape}, E{E.shape}, A{A.shape}")
    L, T = X.shape
    D = X - E @ A
    return float(np.sqrt(np.sum(D * D) / (T * L)))


def feature_reconstruction_error(X, E, A, kernel: KernelSpec) -> float:
    """RE in feature space, evaluated through the kernel; sqrt(2 J / (T L))."""
    from .factorization import pixel_residuals

    L, T = np.shape(X)
    return float(np.sqrt(pixel_residuals(X, E, A, kernel).sum() / (T * L)))


def spectral_angle(u, v) -> float:
    """Angle between two spectra in degrees."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("spectral angle is undefined for a zero-norm spectrum")
    return float(np.degrees(np.arccos(np.clip(u @ v / (nu * nv), -1.0, 1.0))))


def spectral_angle_match(E_est, E_true):
    """Pair estimated with true endmembers, minimising the total spectral angle.

    Exhaustive over all N! assignments (N <= 8).  Returns ``(matching,
    angles)`` where ``matching[k]`` is the estimated column assigned to true
    endmember ``k`` and ``angles[k]`` the angle of that pair in degrees.
    """
    E_est = np.asarray(E_est, dtype=np.float64)
    E_true = np.asarray(E_true, dtype=np.float64)
    if E_est.shape != E_true.shape:
        raise ValueError(f"shape mismatch {E_est.shape} vs {E_true.shape}")
    N = E_true.shape[1]
    if N > 8:
        raise ValueError(f"exhaustive matching supports at most 8 endmembers, got {N}")
    angles = np.array([[spectral_angle(E_est[:, i], E_true[:, k]) for i in range(N)] for k in range(N)])
    best = min(itertools.permutations(range(N)), key=lambda p: sum(angles[k, p[k]] for k in range(N)))
    return tuple(best), np.array([angles[k, best[k]] for k in range(N)])


def evaluate(X, E, A, kernel: KernelSpec, E_true=None) -> EvalReport:
    from .factorization import pixel_residuals

    report = EvalReport(
        re=reconstruction_error(X, E, A),
        re_phi=feature_reconstruction_error(X, E, A, kernel),
        per_pixel_residuals=pixel_residuals(X, E, A, kernel),
    )
    if E_true is not None:
        report.matching, report.sam_per_endmember = spectral_angle_match(E, E_true)
    return report
