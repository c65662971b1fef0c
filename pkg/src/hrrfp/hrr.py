"""Circular-convolution algebra for holographic reduced representations.

Vectors live on the last axis, so every function here also accepts stacked
batches of shape (..., D). Transforms run in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPECTRAL_FLOOR = 1e-6


class SingularVectorError(ValueError):
    """Raised when a vector has a (near-)zero Fourier coefficient."""

    def __init__(self, bin_index: int, magnitude: float, floor: float):
        self.bin_index = bin_index
        self.magnitude = magnitude
        super().__init__(
            f"spectral bin {bin_index} has magnitude {magnitude:.3e} < floor {floor:.1e}; "
            "vector is not invertible"
        )


def _check(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise ValueError(f"{name} must have at least one element on its last axis")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def circular_convolve(a, b) -> np.ndarray:
    """Bind ``a`` and ``b``: c_j = sum_k a_k b_{(j-k) mod D}."""
    a = _check(a, "a")
    b = _check(b, "b")
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} != {b.shape[-1]}")
    d = a.shape[-1]
    return np.fft.irfft(np.fft.rfft(a, axis=-1) * np.fft.rfft(b, axis=-1), n=d, axis=-1)


def exact_inverse(b, floor: float = SPECTRAL_FLOOR) -> np.ndarray:
    """Return b† with b ⊛ b† = δ₀, i.e. the inverse of the spectrum of ``b``."""
    b = _check(b, "b")
    spec = np.fft.rfft(b, axis=-1)
    mag = np.abs(spec)
    if np.any(mag < floor):
        flat = np.argmin(mag.reshape(-1, mag.shape[-1]).min(axis=0))
        raise SingularVectorError(int(flat), float(mag.min()), floor)
    return np.fft.irfft(1.0 / spec, n=b.shape[-1], axis=-1)


def unbind(s, b, floor: float = SPECTRAL_FLOOR) -> np.ndarray:
    """Recover the item bound to ``b`` inside the bundle ``s``."""
    return circular_convolve(s, exact_inverse(b, floor))


def involution(b) -> np.ndarray:
    """Approximate inverse: b*_j = b_{-j mod D}."""
    b = _check(b, "b")
    return np.roll(b[..., ::-1], 1, axis=-1)


def delta(d: int, shift: int = 0) -> np.ndarray:
    out = np.zeros(d)
    out[shift % d] = 1.0
    return out


def cosine(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.sum(a * b, axis=-1)
    return num / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))


def unitary_projection(v) -> np.ndarray:
    """Rescale every Fourier coefficient to magnitude 1, keeping phases."""
    v = _check(v, "v")
    spec = np.fft.rfft(v, axis=-1)
    mag = np.abs(spec)
    if np.any(mag == 0.0):
        raise SingularVectorError(int(np.argmin(mag.reshape(-1, mag.shape[-1]).min(axis=0))), 0.0, 0.0)
    return np.fft.irfft(spec / mag, n=v.shape[-1], axis=-1)


@dataclass(frozen=True)
class PositionBasis:
    """M position vectors of dimension D, regenerable from (D, M, seed, unitary)."""

    vectors: np.ndarray
    seed: int
    unitary: bool

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"basis must be a nonempty (M, D) array, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def M(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, m: int) -> np.ndarray:
        """1-based access: ``basis[1]`` is the first position vector."""
        if not 1 <= m <= self.M:
            raise IndexError(f"position {m} outside 1..{self.M}")
        return self.vectors[m - 1]

    def spectra(self) -> np.ndarray:
        return np.fft.rfft(self.vectors, axis=-1)


def generate_position_basis(D: int, M: int, seed: int, unitary: bool = True) -> PositionBasis:
    if D < 1 or M < 1:
        raise ValueError(f"D and M must be positive, got D={D}, M={M}")
    if D < M:
        raise ValueError(f"D must be >= M, got D={D}, M={M}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    rng = np.random.default_rng(seed)
    vecs = rng.normal(0.0, 1.0 / np.sqrt(D), size=(M, D))
    if unitary:
        vecs = unitary_projection(vecs)
    return PositionBasis(vecs, int(seed), bool(unitary))


def containment_score(q, p, s) -> float:
    """Cosine between q ⊛ p and the composite ``s``."""
    s = _check(s, "s")
    ns = np.linalg.norm(s)
    if ns == 0.0:
        raise ValueError("composite vector s has zero norm")
    bound = circular_convolve(q, p)
    nb = np.linalg.norm(bound)
    if nb == 0.0:
        raise ValueError("q ⊛ p has zero norm")
    return float(bound @ s / (nb * ns))
