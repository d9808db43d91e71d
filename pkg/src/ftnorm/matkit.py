"""Dense complex-matrix kernel shared by every other module.

Operator norms, Hermitian eigendecomposition, PSD tests, Kronecker
products and seeded Haar-unitary sampling.  All functions are pure:
inputs are never mutated, returned arrays are marked read-only, and
nothing here touches global state, so values can be shared freely
between concurrent tasks.

The eigensolver is a cyclic complex Jacobi iteration rather than a QR
method: it is reproducible across platforms and plenty accurate for the
matrix sizes this package works at (dimension a few dozen).  The
operator norm is delegated to LAPACK's SVD.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InputError

#: Alias used in signatures: a 2-D complex128 ndarray.
CMatrix = np.ndarray

# Desk-scale guarantees: Kronecker factors and results are size-capped.
MAX_FACTOR_DIM = 256
MAX_KRON_DIM = 4096

_JACOBI_OFF_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 60


class HermEigResult(NamedTuple):
    """Eigenvalues in ascending order and a unitary matrix of column eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_cmatrix(x, name: str = "matrix") -> CMatrix:
    """Coerce ``x`` to an immutable 2-D complex matrix.

    Raises :class:`InputError` if the result is not two-dimensional or
    contains NaN/Inf entries.
    """
    try:
        arr = np.array(x, dtype=np.complex128)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: cannot interpret as a complex matrix: {exc}",
                         code="E_COMPLEX") from None
    if arr.ndim != 2:
        raise InputError(f"{name}: expected a 2-D matrix, got ndim={arr.ndim}", code="E_DIM")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise InputError(f"{name}: entries must be finite (no NaN/Inf)", code="E_FINITE")
    arr.setflags(write=False)
    return arr


def dag(x: CMatrix) -> CMatrix:
    """Conjugate transpose."""
    return x.conj().T


def op_norm(x) -> float:
    """Largest singular value of ``x``."""
    arr = as_cmatrix(x, "op_norm input")
    if arr.size == 0:
        return 0.0
    return float(np.linalg.svd(arr, compute_uv=False)[0])


def require_hermitian(x, name: str = "matrix", rtol: float = 1e-10) -> CMatrix:
    """Validate that ``x`` is Hermitian up to ``rtol * max(1, ||x||)``."""
    arr = as_cmatrix(x, name)
    if arr.shape[0] != arr.shape[1]:
        raise InputError(f"{name}: Hermitian input must be square, got {arr.shape}",
                         code="E_DIM")
    defect = op_norm(arr - dag(arr))
    if defect > rtol * max(1.0, op_norm(arr)):
        raise InputError(f"{name}: not Hermitian (defect {defect:.3e})", code="E_HERM")
    return arr


def herm_eig(x) -> HermEigResult:
    """Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi sweeps.

    Returns eigenvalues ascending and a unitary eigenvector matrix ``V``
    with ``V diag(lam) V* = x`` to 1e-10 relative.  Non-Hermitian input
    raises :class:`InputError`.
    """
    arr = require_hermitian(x, "herm_eig input")
    a = np.array((arr + dag(arr)) / 2, dtype=np.complex128)
    d = a.shape[0]
    v = np.eye(d, dtype=np.complex128)
    scale = float(np.linalg.norm(a))
    if scale == 0.0 or d == 1:
        lam = np.real(np.diag(a)).copy()
        lam.setflags(write=False)
        v.setflags(write=False)
        return HermEigResult(lam, v)
    cutoff = _JACOBI_OFF_TOL * max(1.0, scale)
    skip = 1e-18 * max(1.0, scale)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= cutoff:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                b = a[p, q]
                babs = abs(b)
                if babs <= skip:
                    continue
                ph = b / babs
                tau = (a[q, q].real - a[p, p].real) / (2.0 * babs)
                if tau == 0.0:
                    t = 1.0
                else:
                    t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                w = np.array([[c, s * ph], [-s * np.conj(ph), c]])
                a[:, [p, q]] = a[:, [p, q]] @ w
                a[[p, q], :] = w.conj().T @ a[[p, q], :]
                v[:, [p, q]] = v[:, [p, q]] @ w
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
    lam = np.real(np.diag(a))
    order = np.argsort(lam, kind="stable")
    lam = lam[order].copy()
    v = np.ascontiguousarray(v[:, order])
    lam.setflags(write=False)
    v.setflags(write=False)
    return HermEigResult(lam, v)


def psd_check(x, tol: float) -> bool:
    """True iff the Hermitian matrix ``x`` has min eigenvalue >= -tol * max(1, ||x||)."""
    lam = herm_eig(x).eigenvalues
    scale = max(1.0, float(np.max(np.abs(lam))) if lam.size else 0.0)
    return bool(lam.size == 0 or lam[0] >= -tol * scale)


def kron(x, y) -> CMatrix:
    """Kronecker product; satisfies ``op_norm(kron(x, y)) == op_norm(x) * op_norm(y)``."""
    a = as_cmatrix(x, "kron left factor")
    b = as_cmatrix(y, "kron right factor")
    if max(a.shape) > MAX_FACTOR_DIM or max(b.shape) > MAX_FACTOR_DIM:
        raise InputError(f"kron factors capped at {MAX_FACTOR_DIM} per dimension",
                         code="E_DIM")
    if max(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]) > MAX_KRON_DIM:
        raise InputError(f"kron result capped at {MAX_KRON_DIM}", code="E_DIM")
    out = np.kron(a, b)
    out.setflags(write=False)
    return out


def haar_unitary(d: int, seed: int) -> CMatrix:
    """A Haar-distributed ``d x d`` unitary, deterministic for fixed ``(d, seed)``.

    Uses the standard exact construction: QR-factor a complex Gaussian
    matrix and normalize the phases of R's diagonal to positive reals,
    which removes the distributional bias of a raw QR factor.
    """
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise InputError(f"haar_unitary: dimension must be a positive integer, got {d!r}",
                         code="E_DIM")
    rng = np.random.default_rng(int(seed))
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diag(r).copy()
    diag[diag == 0] = 1.0
    u = q * (diag / np.abs(diag))[np.newaxis, :]
    u.setflags(write=False)
    return u


def derive_seed(seed: int, *stream: int) -> int:
    """A stable sub-seed for ``(seed, *stream)``, independent of call order.

    Restarts and samples each derive their own seed this way so that
    concurrent execution order cannot change any result.
    """
    parts = [int(seed)] + [int(s) for s in stream]
    if any(p < 0 for p in parts):
        raise InputError("derive_seed components must be non-negative", code="E_SEED")
    return int(np.random.SeedSequence(parts).generate_state(1, dtype=np.uint64)[0])
