"""Cube files, factor matrices, abundance maps, run reports and synthetic scenes.

Binary cube layout (little-endian)::

    b"HSI1" | L, T, a, b as uint32 | L*T float64, band-major

Pixel ``t`` of the payload is image position ``(t // b, t % b)``.  The CSV
variant has a first line ``L,T,a,b`` followed by ``L`` rows of ``T`` values.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .factorization import HyperCube, RunResult
from .metrics import EvalReport

MAGIC = b"HSI1"
HEADER = struct.Struct("<4s4I")


class CubeFormatError(ValueError):
    pass


# -- cubes ---------------------------------------------------------------------

def write_cube(path, cube: HyperCube):
    """Write a binary cube, or CSV when ``path`` ends in ``.csv``."""
    path = Path(path)
    L, T = cube.X.shape
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            fh.write(f"{L},{T},{cube.a},{cube.b}\n")
            np.savetxt(fh, cube.X, fmt="%.17g", delimiter=",")
        return
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, L, T, cube.a, cube.b))
        fh.write(np.ascontiguousarray(cube.X, dtype="<f8").tobytes())


def read_cube(path) -> HyperCube:
    """Read a cube written by :func:`write_cube`; the format is sniffed from the magic."""
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        return _parse_binary(raw)
    try:
        text = raw.decode("utf-8")
        if "\x00" in text:
            raise UnicodeDecodeError("utf-8", raw, 0, 1, "NUL byte")
    except UnicodeDecodeError:
        raise CubeFormatError(f"bad magic {raw[:4]!r} at byte offset 0, expected {MAGIC!r}") from None
    return _parse_csv(text)


def _parse_binary(raw: bytes) -> HyperCube:
    if len(raw) < HEADER.size:
        raise CubeFormatError(f"truncated header: {len(raw)} bytes, need {HEADER.size}")
    _, L, T, a, b = HEADER.unpack_from(raw)
    if a * b != T:
        raise CubeFormatError(f"header at byte offset 4: T={T} but a*b={a * b}")
    need = 8 * L * T
    have = len(raw) - HEADER.size
    if have < need:
        raise CubeFormatError(
            f"truncated payload: {have} bytes from offset {HEADER.size}, need {need} (L={L}, T={T})"
        )
    if have > need:
        raise CubeFormatError(f"{have - need} trailing bytes after payload at offset {HEADER.size + need}")
    X = np.frombuffer(raw, dtype="<f8", count=L * T, offset=HEADER.size).reshape(L, T).astype(np.float64)
    bad = np.argwhere(~np.isfinite(X) | (X < 0))
    if bad.size:
        l, t = bad[0]
        offset = HEADER.size + 8 * (l * T + t)
        raise CubeFormatError(f"invalid value {X[l, t]!r} at byte offset {offset} (band {l}, pixel {t})")
    return HyperCube(X, a, b)


def _parse_csv(text: str) -> HyperCube:
    lines = text.strip().splitlines()
    if not lines:
        raise CubeFormatError("empty cube file")
    try:
        L, T, a, b = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise CubeFormatError(f"line 1: expected header 'L,T,a,b', got {lines[0]!r}") from None
    if a * b != T:
        raise CubeFormatError(f"line 1: T={T} but a*b={a * b}")
    if len(lines) - 1 != L:
        raise CubeFormatError(f"expected {L} band rows after the header, got {len(lines) - 1}")
    X = np.empty((L, T))
    for l, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != T:
            raise CubeFormatError(f"row {l + 1}: expected {T} values, got {len(fields)}")
        for t, f in enumerate(fields):
            try:
                v = float(f)
            except ValueError:
                raise CubeFormatError(f"row {l + 1}, column {t + 1}: not a number {f!r}") from None
            if not np.isfinite(v) or v < 0:
                raise CubeFormatError(f"row {l + 1}, column {t + 1}: invalid value {v!r}")
            X[l, t] = v
    return HyperCube(X, a, b)


# -- matrices, maps, reports -----------------------------------------------------

def write_matrix(path, M, header: str | None = None):
    np.savetxt(path, np.atleast_2d(M), fmt="%.17g", delimiter=",",
               header=header or "", comments="")


def read_matrix(path) -> np.ndarray:
    """Read a CSV matrix; a first line that is not numeric is taken as a header."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        skip = 0
    except ValueError:
        skip = 1
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2))


def write_endmembers(path, E):
    """One column per endmember, one row per band."""
    write_matrix(path, E, header=",".join(f"e{n + 1}" for n in range(np.shape(E)[1])))


def write_pgm(path, M):
    """8-bit binary PGM, values scaled linearly from the map's min..max to 0..255."""
    M = np.asarray(M, dtype=np.float64)
    lo, hi = float(M.min()), float(M.max())
    if hi > lo:
        pix = np.round((M - lo) / (hi - lo) * 255.0)
    else:
        pix = np.full(M.shape, 255.0 if hi > 0 else 0.0)
    rows, cols = M.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pix.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows, depth = int(parts[1]), int(parts[2]), int(parts[3])
    if depth != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: rows * cols], dtype=np.uint8).reshape(rows, cols)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def report_dict(result: RunResult, evaluation: EvalReport | None = None) -> dict:
    d = {
        "config": result.config,
        "iterations": len(result.cost_trace) - 1,
        "cost_trace": [float(v) for v in result.cost_trace],
        "final_cost": float(result.cost_trace[-1]),
        "re": result.re,
        "re_phi": result.re_phi,
        "zero_columns": result.zero_columns,
    }
    if evaluation is not None:
        d["evaluation"] = evaluation.as_dict()
    return d


def write_report(out_dir, result: RunResult, evaluation: EvalReport | None = None,
                 shape: tuple[int, int] | None = None) -> dict:
    """Write report.json, endmembers.csv, abundances.csv and per-endmember maps.

    Maps (``abundance_map_<n>.csv`` and ``.pgm``, 1-based n) are written when
    the image shape is known.  Returns the paths written, keyed by role.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "endmembers": out / "endmembers.csv",
             "abundances": out / "abundances.csv"}
    with open(paths["report"], "w", encoding="utf-8") as fh:
        json.dump(report_dict(result, evaluation), fh, indent=2, default=_jsonable)
        fh.write("\n")
    write_endmembers(paths["endmembers"], result.E)
    write_matrix(paths["abundances"], result.A)
    if shape is not None:
        for n, row in enumerate(result.A):
            M = row.reshape(shape)
            paths[f"map{n + 1}_csv"] = out / f"abundance_map_{n + 1}.csv"
            paths[f"map{n + 1}_pgm"] = out / f"abundance_map_{n + 1}.pgm"
            write_matrix(paths[f"map{n + 1}_csv"], M)
            write_pgm(paths[f"map{n + 1}_pgm"], M)
    return paths


# -- synthetic scenes --------------------------------------------------------------

@dataclass
class SceneSpec:
    bands: int = 50
    height: int = 20  # a, image rows
    width: int = 20  # b, image columns
    rank: int = 3
    endmembers: np.ndarray | None = None  # user matrix (L x N); Gaussian bumps when None
    concentration: float = 1.0
    blur_passes: int = 0
    mixing: str = "linear"
    beta: float = 0.0
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.bands, self.height, self.width, self.rank) < 1:
            raise ValueError("bands, height, width and rank must be >= 1")
        if self.concentration <= 0:
            raise ValueError("Dirichlet concentration must be > 0")
        if self.beta < 0:
            raise ValueError("bilinear strength beta must be >= 0")
        if self.mixing not in ("linear", "bilinear"):
            raise ValueError(f"mixing must be 'linear' or 'bilinear', got {self.mixing!r}")
        if self.blur_passes < 0:
            raise ValueError("blur_passes must be >= 0")
        if self.endmembers is not None:
            E = np.asarray(self.endmembers, dtype=np.float64)
            if E.shape != (self.bands, self.rank) or np.any(E < 0):
                raise ValueError(f"user endmembers must be nonnegative with shape ({self.bands}, {self.rank})")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["endmembers"] = "user" if self.endmembers is not None else "gaussian_bumps"
        return d


def gaussian_bump_endmembers(rng, bands: int, rank: int) -> np.ndarray:
    """Spectra built from 2-4 positive Gaussian peaks each, scaled into [0, 1]."""
    grid = np.linspace(0.0, 1.0, bands)
    E = np.empty((bands, rank))
    for n in range(rank):
        k = rng.integers(2, 5)
        centres = rng.uniform(0.0, 1.0, k)
        widths = rng.uniform(0.05, 0.25, k)
        heights = rng.uniform(0.3, 1.0, k)
        spec = (heights[:, None] * np.exp(-0.5 * ((grid - centres[:, None]) / widths[:, None]) ** 2)).sum(0)
        E[:, n] = 0.05 + 0.95 * spec / spec.max()
    return E


def synth_scene(spec: SceneSpec):
    """Return ``(cube, E_true, A_true)`` drawn deterministically from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    L, a, b, N = spec.bands, spec.height, spec.width, spec.rank
    if spec.endmembers is None:
        E = gaussian_bump_endmembers(rng, L, N)
    else:
        E = np.array(spec.endmembers, dtype=np.float64)
    A = rng.dirichlet(np.full(N, spec.concentration), size=a * b).T
    if spec.blur_passes:
        maps = A.reshape(N, a, b)
        for _ in range(spec.blur_passes):
            maps = ndimage.uniform_filter(maps, size=(1, 3, 3), mode="nearest")
        A = maps.reshape(N, a * b)
        A = A / A.sum(axis=0)
    X = E @ A
    if spec.mixing == "bilinear" and spec.beta:
        for n in range(N):
            for m in range(n + 1, N):
                X = X + spec.beta * (E[:, n] * E[:, m])[:, None] * (A[n] * A[m])[None, :]
    if spec.snr_db is not None:
        power = float(np.mean(X**2))
        noise_std = np.sqrt(power / 10 ** (spec.snr_db / 10))
        X = np.maximum(X + rng.normal(0.0, noise_std, X.shape), 0.0)
    return HyperCube(X, a, b), E, A
