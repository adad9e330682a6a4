"""Dense complex matrix primitives for small systems.

Matrices are plain ``numpy`` arrays. The ``as_*`` helpers check the
invariants of a matrix kind (Hermitian, density matrix, projection) and
return a cleaned copy; everything else is a pure function.
"""
from __future__ import annotations

import numpy as np

RANK_TOL = 1e-8
HERMITIAN_TOL = 1e-12
DENSITY_TOL = 1e-10
PROJECTION_TOL = 1e-10

__all__ = [
    "InvariantError",
    "NotPSDError",
    "as_matrix",
    "as_hermitian",
    "as_density",
    "as_projection",
    "hermitian_eigen",
    "polar_decompose",
    "det_pos",
    "support_projection",
    "moment_trace",
    "spectrum",
    "spectra_unitarily_equivalent",
    "project_to_density",
    "random_unitary",
    "random_density",
    "pure_state",
]


class InvariantError(ValueError):
    """A matrix does not satisfy the invariants of its declared kind."""


class NotPSDError(InvariantError):
    pass


def as_matrix(x, square: bool = True) -> np.ndarray:
    a = np.array(x, dtype=complex)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvariantError("matrix has non-finite entries")
    return a


def as_hermitian(x) -> np.ndarray:
    """Return ``(X + X*)/2`` after checking ``X`` was Hermitian to begin with."""
    a = as_matrix(x)
    dev = np.max(np.abs(a - a.conj().T))
    if dev > HERMITIAN_TOL * (1.0 + np.max(np.abs(a))):
        raise InvariantError(f"matrix is not Hermitian (deviation {dev:.3e})")
    return (a + a.conj().T) / 2


def as_density(x, tol: float = DENSITY_TOL) -> np.ndarray:
    h = as_hermitian(x)
    w = np.linalg.eigvalsh(h)
    if w[0] < -tol:
        raise NotPSDError(f"density matrix has eigenvalue {w[0]:.3e}")
    tr = np.trace(h).real
    if abs(tr - 1.0) > tol:
        raise InvariantError(f"density matrix has trace {tr!r}")
    return h


def as_projection(x, tol: float = PROJECTION_TOL) -> np.ndarray:
    p = as_hermitian(x)
    dev = np.max(np.abs(p @ p - p))
    if dev > tol:
        raise InvariantError(f"matrix is not idempotent (deviation {dev:.3e})")
    tr = np.trace(p).real
    if abs(tr - round(tr)) > 1e-8:
        raise InvariantError(f"projection has non-integer trace {tr!r}")
    return p


def hermitian_eigen(x) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in ascending order and the matching orthonormal eigenvectors (columns)."""
    return np.linalg.eigh(as_hermitian(x))


def polar_decompose(a, complete: bool = False, rank_tol: float = RANK_TOL):
    """Polar decomposition ``A = V P`` with ``P = sqrt(A* A)``.

    By default ``V`` is the partial isometry with ``V* V`` equal to the support
    projection of ``P``. With ``complete=True`` ``V`` is extended to a unitary:
    the kernel of ``P`` is sent onto the orthogonal complement of the range of
    ``V``, both bases built by a fixed Gram-Schmidt pass over the standard basis.
    """
    a = as_matrix(a)
    n = a.shape[0]
    w, s, zh = np.linalg.svd(a)
    smax = s[0] if s.size else 0.0
    r = int(np.sum(s > rank_tol * smax)) if smax > 0 else 0
    p = (zh.conj().T * s) @ zh
    p = (p + p.conj().T) / 2
    v = w[:, :r] @ zh[:r]
    if complete and r < n:
        kernel = _complement(zh[:r].conj().T, n)
        target = _complement(w[:, :r], n)
        v = v + target @ kernel.conj().T
    return v, p


def _complement(basis: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of the complement of span(basis columns), by Gram-Schmidt on e_1..e_n."""
    cols = [basis[:, j] for j in range(basis.shape[1])]
    out = []
    for j in range(n):
        v = np.zeros(n, dtype=complex)
        v[j] = 1.0
        for _ in range(2):
            for c in cols + out:
                v = v - np.vdot(c, v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            out.append(v / norm)
        if len(cols) + len(out) == n:
            break
    if not out:
        return np.zeros((n, 0), dtype=complex)
    return np.stack(out, axis=1)


def _psd_eigvals(x, rank_tol: float) -> np.ndarray:
    w = np.linalg.eigvalsh(as_hermitian(x))
    scale = np.max(np.abs(w))
    if scale > 0 and w[0] < -rank_tol * scale:
        raise NotPSDError(f"matrix has negative eigenvalue {w[0]:.3e}")
    return w


def det_pos(x, rank_tol: float = RANK_TOL) -> float:
    """Product of the strictly positive eigenvalues of a psd matrix (1 for the zero matrix)."""
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    w = _psd_eigvals(x, rank_tol)
    wmax = w[-1]
    if wmax <= 0:
        return 1.0
    return float(np.prod(w[w > rank_tol * wmax]))


def support_projection(x, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Projection onto the eigenvectors whose eigenvalue exceeds ``rank_tol`` times the largest."""
    w, v = np.linalg.eigh(as_hermitian(x))
    wmax = w[-1]
    if wmax <= 0:
        return np.zeros_like(v)
    keep = v[:, w > rank_tol * wmax]
    p = keep @ keep.conj().T
    return (p + p.conj().T) / 2


def spectrum(rho) -> np.ndarray:
    return np.linalg.eigvalsh(as_hermitian(rho))


def moment_trace(rho, m: int) -> float:
    """``tr(rho**m)`` from the eigenvalues of ``rho``."""
    if m < 1:
        raise ValueError(f"moment order must be >= 1, got {m}")
    w = np.clip(spectrum(rho), 0.0, None)
    return float(np.sum(w**m))


def spectra_unitarily_equivalent(theta, rho, tol: float = 1e-9) -> bool:
    a = as_hermitian(theta)
    b = as_hermitian(rho)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.max(np.abs(np.linalg.eigvalsh(a) - np.linalg.eigvalsh(b))) <= tol)


def project_to_density(x, neg_tol: float = DENSITY_TOL) -> tuple[np.ndarray, float]:
    """Hermitize, clip tiny negative eigenvalues and renormalize.

    Returns the cleaned state and the drift (max-norm change). Eigenvalues
    below ``-neg_tol`` times the trace raise ``NotPSDError``.
    """
    a = np.asarray(x, dtype=complex)
    h = (a + a.conj().T) / 2
    tr = np.trace(h).real
    if not tr > 0:
        raise InvariantError(f"cannot normalize a matrix with trace {tr!r}")
    w = np.linalg.eigvalsh(h)
    if w[0] < -neg_tol * tr:
        raise NotPSDError(f"state has eigenvalue {w[0] / tr:.3e} after normalization")
    if w[0] < 0:
        w, v = np.linalg.eigh(h)
        w = np.clip(w, 0.0, None)
        h = (v * w) @ v.conj().T
        h = (h + h.conj().T) / 2
        tr = np.sum(w)
    out = h / tr
    return out, float(np.max(np.abs(out - a / np.trace(a).real)))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Gaussian matrix with phase fix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = d if rank is None else rank
    g = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
    rho = g @ g.conj().T
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


def pure_state(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=complex).ravel()
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())
