"""Dense kernels for the small real blocks: exponentials, spectra, SPD solves."""

from __future__ import annotations

from functools import cached_property

import numpy as np

from l2game import kernels
from l2game.errors import NotPositiveDefinite, ValidationError

SYMMETRY_RTOL = 1e-13


class BlockMatrix:
    """One real square block ``A_i`` with lazily computed spectral data.

    Parameters
    ----------
    entries : array_like, shape (d, d)
        Row-major block entries; must be finite.
    """

    __slots__ = ("entries", "__dict__")

    def __init__(self, entries):
        a = np.array(entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationError(f"block must be a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("block entries must be finite")
        a.setflags(write=False)
        self.entries = a

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalues(self.entries)

    @cached_property
    def spectral_abscissa(self) -> float:
        """Largest real part of the eigenvalues."""
        return float(np.max(self.eigenvalues.real))

    @cached_property
    def min_real_part(self) -> float:
        return float(np.min(self.eigenvalues.real))

    @property
    def decay_rate(self) -> float:
        """Slowest decay rate ``-spectral_abscissa``."""
        return -self.spectral_abscissa

    def __repr__(self):
        return f"BlockMatrix({self.entries.tolist()!r})"

    def __eq__(self, other):
        return isinstance(other, BlockMatrix) and np.array_equal(self.entries, other.entries)

    __hash__ = None


def _as_array(a) -> np.ndarray:
    if isinstance(a, BlockMatrix):
        return a.entries
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("matrix entries must be finite")
    return arr


def eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a small real matrix (closed form up to 2x2, LAPACK above)."""
    a = _as_array(a)
    d = a.shape[0]
    if d == 1:
        return np.array([complex(a[0, 0])])
    if d == 2:
        half_tr = 0.5 * (a[0, 0] + a[1, 1])
        half_gap = 0.5 * (a[0, 0] - a[1, 1])
        disc = half_gap * half_gap + a[0, 1] * a[1, 0]
        if disc >= 0.0:
            r = np.sqrt(disc)
            # avoid cancellation in the smaller root
            big = half_tr + np.copysign(r, half_tr) if half_tr != 0.0 else r
            det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            small = det / big if big != 0.0 else -big
            return np.array([complex(big), complex(small)])
        r = np.sqrt(-disc)
        return np.array([complex(half_tr, r), complex(half_tr, -r)])
    return np.linalg.eigvals(a)


def spectral_abscissa(a) -> float:
    """Maximum real part of the eigenvalues of ``a``."""
    if isinstance(a, BlockMatrix):
        return a.spectral_abscissa
    return float(np.max(eigenvalues(a).real))


def expm(a, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``e^{tA}`` of a small block (any sign of ``t``)."""
    a = _as_array(a)
    t = float(t)
    if not np.isfinite(t):
        raise ValidationError("time must be finite")
    return kernels.expm_stack(a[None], np.array([t]))[0]


class SPDMatrix:
    """Symmetric positive definite matrix together with its lower Cholesky factor."""

    __slots__ = ("entries", "factor")

    def __init__(self, entries: np.ndarray, factor: np.ndarray):
        self.entries = entries
        self.factor = factor

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def solve(self, b) -> np.ndarray:
        return spd_solve(self, b)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def inverse_norm(self) -> float:
        """Spectral norm of the inverse, ``||L^{-1}||^2``."""
        linv = np.linalg.inv(self.factor)
        return float(np.linalg.norm(linv, 2) ** 2)


def symmetrize(w, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Return ``(W + W^T)/2`` after checking the asymmetry is rounding-sized."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {w.shape}")
    scale = np.max(np.abs(w)) if w.size else 0.0
    asym = np.max(np.abs(w - w.T)) if w.size else 0.0
    if asym > rtol * scale:
        raise ValidationError(f"matrix is not symmetric (relative asymmetry {asym / scale:.3e})")
    return 0.5 * (w + w.T)


def spd_factor(w) -> SPDMatrix:
    """Cholesky-factor a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is not strictly positive.
    """
    ws = symmetrize(w)
    lower, (_, piv) = kernels.cholesky_stack(ws[None])
    if piv >= 0:
        raise NotPositiveDefinite(f"non-positive pivot at index {piv}", block=0, pivot=piv)
    ws.setflags(write=False)
    return SPDMatrix(ws, lower[0])


def spd_solve(w: SPDMatrix, b) -> np.ndarray:
    """Solve ``W y = b`` using the cached factor."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (w.dim,):
        raise ValidationError(f"right-hand side has shape {b.shape}, expected ({w.dim},)")
    return kernels.cho_solve_stack(w.factor[None], b[None])[0]
