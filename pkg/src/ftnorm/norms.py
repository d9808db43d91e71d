"""Tensor-norm engines for operator tuples.

Two mutually certifying engines:

* ``dec_norm`` (upper): the factorization/decomposable norm via the SDP in
  :mod:`ftnorm.sdp`, together with an explicit factorization certificate
  ``x_i = a_i b_i`` recovered from square roots of the optimal 2x2-block
  positivity certificates (with an eps-regularized inverse,
  ``eps = 1e-8 * lambda_opt``).
* ``unitary_sup`` (lower): the best value of ``||sum u_i (x) x_i||`` over
  tuples of d x d unitaries, for a schedule of dimensions, found by Haar
  restarts followed by Riemannian gradient ascent on the product of
  unitary groups (Cayley retraction, backtracking line search).  The
  largest-singular-value objective is smoothed near degeneracies by a
  soft-max of the top two singular values.

For a tuple in M_k the supremum at dimension d = k already equals the
decomposable norm (the commutant of M_k in standard form is another copy
of M_k), which is what makes the sandwich ``lower <= dec <= upper`` an
equality test rather than a mere bracket.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matkit, sdp
from .errors import CertificateError, InputError, SolverError
from .matkit import dag
from .tuples import OperatorTuple, operator_tuple, tuple_scale

_SMOOTHING = 1e-6
_GRAD_TOL = 1e-9
_ARMIJO = 0.1

# seed-derivation stream tags, so different consumers of the same user seed
# draw independent randomness
_STREAM_USUP = 1


@dataclass(frozen=True)
class FactorizationCertificate:
    """Matrices with ``x_i = a_i b_i`` witnessing an upper bound.

    ``value = ||sum a_i a_i*||^(1/2) * ||sum b_i* b_i||^(1/2)`` and
    ``residual = max_i ||a_i b_i - x_i||``.  For Haagerup elements the
    same container holds the reparameterized left/right families and the
    residual of ``sum a_l (x) b_l`` against the element.
    """

    a: tuple
    b: tuple
    value: float
    residual: float
    regularizations: int = 0


@dataclass(frozen=True)
class UnitaryWitness:
    """A tuple of unitaries and a unit vector achieving a lower bound."""

    d: int
    unitaries: tuple
    vector: np.ndarray
    value: float


@dataclass(frozen=True)
class TraceRecord:
    dimension: int
    restart: int
    best_value: float


@dataclass(frozen=True)
class NormEstimate:
    lower: float
    upper: float
    gap: float
    upper_cert: FactorizationCertificate
    lower_cert: UnitaryWitness
    trace: tuple


@dataclass(frozen=True)
class EstimateConfig:
    gap_tol: float = 1e-9
    schedule: tuple | None = None
    restarts: int = 32
    seed: int = 0
    max_ascent_iter: int = 500


def default_schedule(k: int) -> tuple:
    """The (1, k, 2k) dimension schedule, deduplicated."""
    out = []
    for d in (1, k, 2 * k):
        if d not in out:
            out.append(d)
    return tuple(out)


# ---------------------------------------------------------------------------
# Cauchy-Schwarz bound
# ---------------------------------------------------------------------------

def cauchy_schwarz_bound(a, b) -> float:
    """``||sum a_i a_i*||^(1/2) ||sum b_i* b_i||^(1/2)``, an upper bound
    for ``||sum a_i b_i||`` for any matched families of matrices."""
    amats = [matkit.as_cmatrix(x, f"a[{i}]") for i, x in enumerate(a)]
    bmats = [matkit.as_cmatrix(x, f"b[{i}]") for i, x in enumerate(b)]
    if len(amats) != len(bmats) or not amats:
        raise InputError("families must be nonempty and of equal length", code="E_DIM")
    rows, inner = amats[0].shape
    cols = bmats[0].shape[1]
    for i, (ai, bi) in enumerate(zip(amats, bmats)):
        if ai.shape != (rows, inner) or bi.shape != (inner, cols):
            raise InputError(f"pair {i} has mismatched shapes {ai.shape} x {bi.shape}",
                             code="E_DIM")
    saa = sum(ai @ dag(ai) for ai in amats)
    sbb = sum(dag(bi) @ bi for bi in bmats)
    return float(np.sqrt(matkit.op_norm(saa)) * np.sqrt(matkit.op_norm(sbb)))


# ---------------------------------------------------------------------------
# Upper engine: dec norm + factorization certificate
# ---------------------------------------------------------------------------

def _psd_sqrt_and_invsqrt(h: np.ndarray, eps: float):
    lam, v = matkit.herm_eig(h)
    lam = np.maximum(lam, 0.0) + eps
    root = v @ np.diag(np.sqrt(lam)) @ dag(v)
    inv_root = v @ np.diag(1.0 / np.sqrt(lam)) @ dag(v)
    return root, inv_root


def dec_norm(t: OperatorTuple, gap_tol: float = 1e-9):
    """Decomposable norm of the tuple with a checkable factorization certificate.

    Returns ``(value, certificate)`` where ``value`` is the SDP optimum of
    :func:`ftnorm.sdp.assemble_dec_program` and the certificate factors
    ``x_i = a_i b_i`` with ``a_i = (z_i + eps)^(1/2)``, ``b_i = a_i^{-1} x_i``
    built from the optimal blocks (``z_i + eps`` is invertible, and the
    Schur complement of ``[[y_i, x_i*],[x_i, z_i]] >= 0`` gives
    ``b_i* b_i <= y_i``).
    """
    program = sdp.assemble_dec_program(t)
    sol = sdp.solve(program, gap_tol=gap_tol)
    if sol.status != "optimal":
        raise SolverError(f"dec-norm SDP ended with status {sol.status}",
                          trace=sol.diagnostics.get("trace"))
    lam_opt = sol.scalars["lam"]
    eps = 1e-8 * max(lam_opt, 1e-12)
    k = t.k
    a_fam, b_fam = [], []
    for i, x in enumerate(t.items):
        ti = sol.primal_blocks[f"T{i}"]
        z_i = (ti[k:, k:] + dag(ti[k:, k:])) / 2
        root, inv_root = _psd_sqrt_and_invsqrt(z_i, eps)
        a_fam.append(root)
        b_fam.append(inv_root @ x)
    cert = FactorizationCertificate(
        a=tuple(a_fam), b=tuple(b_fam),
        value=cauchy_schwarz_bound(a_fam, b_fam),
        residual=max(matkit.op_norm(ai @ bi - xi)
                     for ai, bi, xi in zip(a_fam, b_fam, t.items)))
    scale = tuple_scale(t)
    if cert.residual > 1e-7 * scale:
        raise SolverError(f"certificate residual {cert.residual:.3e} out of tolerance")
    if cert.value > lam_opt * (1 + 1e-6) + t.n * eps:
        raise SolverError(f"certificate value {cert.value:.12g} exceeds SDP value "
                          f"{lam_opt:.12g} beyond tolerance")
    return float(lam_opt), cert


def factorization_value(t: OperatorTuple, cert: FactorizationCertificate) -> float:
    """Recompute a certificate's value and residual from scratch.

    Raises :class:`CertificateError` when the recomputed residual exceeds
    ``1e-7 * max(1, ||tuple||)`` (corrupted or mismatched certificate).
    """
    if len(cert.a) != t.n or len(cert.b) != t.n:
        raise InputError("certificate family size does not match tuple", code="E_DIM")
    for i, (ai, bi) in enumerate(zip(cert.a, cert.b)):
        ai = matkit.as_cmatrix(ai, f"cert a[{i}]")
        bi = matkit.as_cmatrix(bi, f"cert b[{i}]")
        if ai.shape[0] != t.k or bi.shape[1] != t.k or ai.shape[1] != bi.shape[0]:
            raise InputError(f"certificate pair {i} has inconsistent shapes",
                             code="E_DIM")
    residual = max(matkit.op_norm(np.asarray(ai) @ np.asarray(bi) - xi)
                   for ai, bi, xi in zip(cert.a, cert.b, t.items))
    if residual > 1e-7 * tuple_scale(t):
        raise CertificateError(f"factorization residual {residual:.3e} exceeds tolerance")
    return cauchy_schwarz_bound(cert.a, cert.b)


# ---------------------------------------------------------------------------
# Lower engine: Riemannian ascent over products of unitary groups
# ---------------------------------------------------------------------------

def _cayley(a: np.ndarray) -> np.ndarray:
    """Cayley transform of a skew-Hermitian matrix; exactly unitary."""
    d = a.shape[0]
    eye = np.eye(d)
    return np.linalg.solve(eye - a / 2, eye + a / 2)


def _skew(r: np.ndarray) -> np.ndarray:
    return (r - dag(r)) / 2


def _soft_weights(svals: np.ndarray) -> tuple:
    """Soft-max weights over the top two singular values (smoothing 1e-6)."""
    if svals.size < 2:
        return 1.0, 0.0
    delta = (svals[0] - svals[1]) / _SMOOTHING
    if delta > 36.0:
        return 1.0, 0.0
    w1 = 1.0 / (1.0 + np.exp(-delta))
    return float(w1), float(1.0 - w1)


def _smoothed_value(svals: np.ndarray) -> float:
    if svals.size < 2:
        return float(svals[0])
    delta = (svals[0] - svals[1]) / _SMOOTHING
    if delta > 36.0:
        return float(svals[0])
    return float(svals[0] + _SMOOTHING * np.log1p(np.exp(-delta)))


def _pair_gradients(us, xs, w, v, d, k):
    """Euclidean gradients of ``Re w*(sum u_i (x) x_i)v`` in each u_i."""
    W = w.reshape(d, k)
    V = v.reshape(d, k)
    Vc = V.conj().T
    return [W @ x.conj() @ Vc for x in xs]


def _build(us, xs):
    m = np.kron(us[0], xs[0])
    for u, x in zip(us[1:], xs[1:]):
        m = m + np.kron(u, x)
    return m


def _ascend(us, xs, free, max_iter):
    """Maximize the top singular value over the free unitaries in ``us``."""
    d = us[0].shape[0]
    k = xs[0].shape[0]
    us = [u.copy() for u in us]
    step = 1.0
    m = _build(us, xs)
    uu, svals, vh = np.linalg.svd(m)
    for _ in range(max_iter):
        w1, w2 = _soft_weights(svals)
        grads = _pair_gradients(us, xs, uu[:, 0], vh[0].conj(), d, k)
        if w2 > 0.0:
            g2 = _pair_gradients(us, xs, uu[:, 1], vh[1].conj(), d, k)
            grads = [w1 * g + w2 * h for g, h in zip(grads, g2)]
        dirs = {}
        gn2 = 0.0
        for i in free:
            a = _skew(dag(us[i]) @ grads[i])
            dirs[i] = a
            gn2 += float(np.linalg.norm(a) ** 2)
        if np.sqrt(gn2) <= _GRAD_TOL * max(1.0, svals[0]):
            break
        f0 = _smoothed_value(svals)
        tstep = step
        accepted = False
        for _ls in range(40):
            trial = list(us)
            for i in free:
                trial[i] = us[i] @ _cayley(tstep * dirs[i])
            svals_t = np.linalg.svd(_build(trial, xs), compute_uv=False)
            if _smoothed_value(svals_t) >= f0 + _ARMIJO * tstep * gn2:
                accepted = True
                break
            tstep /= 2
        if not accepted:
            break
        us = trial
        step = min(tstep * 1.5, 1e3)
        m = _build(us, xs)
        uu, svals, vh = np.linalg.svd(m)
    return float(svals[0]), us, vh[0].conj()


def _init_unitaries(t: OperatorTuple, d: int, restart: int, seed: int,
                    dim_index: int, warm=None):
    n = t.n
    if restart == 0:
        us = [np.eye(d, dtype=complex) for _ in range(n)]
    elif restart == 1 and warm is not None and warm[0].shape[0] < d:
        dw = warm[0].shape[0]
        us = []
        for i in range(n):
            pad = matkit.haar_unitary(d - dw, matkit.derive_seed(
                seed, _STREAM_USUP, dim_index, restart, i))
            blk = np.zeros((d, d), dtype=complex)
            blk[:dw, :dw] = warm[i]
            blk[dw:, dw:] = pad
            us.append(blk)
    else:
        us = [np.asarray(matkit.haar_unitary(d, matkit.derive_seed(
            seed, _STREAM_USUP, dim_index, restart, i))) for i in range(n)]
    if t.unit_index is not None:
        us[t.unit_index] = np.eye(d, dtype=complex)
    return us


def _unitary_sup_traced(t: OperatorTuple, schedule, restarts, seed, max_iter):
    schedule = tuple(int(d) for d in schedule)
    if not schedule or any(d < 1 for d in schedule):
        raise InputError("schedule must be a nonempty list of dimensions >= 1",
                         code="E_DIM")
    if restarts < 1:
        raise InputError("restarts must be >= 1", code="E_DIM")
    best = -np.inf
    best_data = None
    warm = None
    trace = []
    for di, d in enumerate(schedule):
        dim_best = -np.inf
        dim_best_us = None
        for r in range(restarts):
            us0 = _init_unitaries(t, d, r, seed, di, warm)
            free = [i for i in range(t.n) if i != t.unit_index]
            val, us, vec = _ascend(us0, t.items, free, max_iter)
            if val > dim_best:
                dim_best = val
                dim_best_us = us
            if val > best:
                best = val
                best_data = (d, us, vec)
            trace.append(TraceRecord(d, r, best))
        warm = dim_best_us
    d, us, vec = best_data
    vec = vec / np.linalg.norm(vec)
    value = float(np.linalg.norm(_build(us, t.items) @ vec))
    witness = UnitaryWitness(d=d, unitaries=tuple(us), vector=vec, value=value)
    _check_witness(t, witness)
    return float(best), witness, tuple(trace)


def unitary_sup(t: OperatorTuple, schedule=None, restarts: int = 32,
                seed: int = 0, max_iter: int = 500):
    """Best value of ``||sum u_i (x) x_i||`` over sampled-and-ascended unitaries.

    Runs ``restarts`` ascents per dimension in ``schedule`` (restart 0
    starts from identities, restart 1 warm-starts from the best tuple of
    the previous dimension, the rest from Haar samples with per-restart
    derived seeds).  Deterministic for fixed ``seed``; the reported trace
    is the running best, hence monotone nondecreasing.

    Returns ``(value, witness)``.
    """
    if schedule is None:
        schedule = default_schedule(t.k)
    value, witness, _ = _unitary_sup_traced(t, schedule, restarts, seed, max_iter)
    return value, witness


def _check_witness(t: OperatorTuple, wit: UnitaryWitness):
    for i, u in enumerate(wit.unitaries):
        if matkit.op_norm(dag(u) @ u - np.eye(wit.d)) > 1e-8:
            raise SolverError(f"witness unitary {i} drifted off the unitary group")
    if abs(np.linalg.norm(wit.vector) - 1.0) > 1e-10:
        raise SolverError("witness vector is not normalized")
    m = _build(list(wit.unitaries), t.items)
    if wit.value > matkit.op_norm(m) + 1e-9:
        raise SolverError("witness value exceeds the operator norm it certifies")


# ---------------------------------------------------------------------------
# Assembled estimate and the unit-coefficient gauge
# ---------------------------------------------------------------------------

def gauge_reduce(t: OperatorTuple) -> OperatorTuple:
    """Replace the unit coefficient by a fresh free unitary.

    Left multiplication by the inverse of the new unitary shows both the
    dec norm and the unitary supremum are unchanged; the coefficient
    matrices themselves stay as they are, only the unit flag is dropped.
    """
    if t.unit_index is None:
        raise InputError("tuple has no unit_index to reduce", code="E_INDEX")
    return operator_tuple(t.items, unit_index=None)


def min_norm_estimate(t: OperatorTuple, config: EstimateConfig | None = None) -> NormEstimate:
    """Two-sided estimate: dec-norm SDP upper bound, unitary-supremum lower bound."""
    cfg = config or EstimateConfig()
    if t.n == 1:
        # a single coefficient: every unitary gives the same value
        x = t.items[0]
        value = matkit.op_norm(x)
        _, svals, vh = np.linalg.svd(x)
        d0 = 1
        vec = np.zeros(t.k * d0, dtype=complex)
        vec[:t.k] = vh[0].conj()
        cert = FactorizationCertificate(
            a=(x,), b=(np.eye(t.k, dtype=complex),), value=value, residual=0.0)
        wit = UnitaryWitness(d=d0, unitaries=(np.eye(d0, dtype=complex),),
                             vector=vec, value=value)
        rec = TraceRecord(d0, 0, value)
        return NormEstimate(lower=value, upper=value, gap=0.0,
                            upper_cert=cert, lower_cert=wit, trace=(rec,))
    upper, ucert = dec_norm(t, gap_tol=cfg.gap_tol)
    schedule = cfg.schedule if cfg.schedule is not None else default_schedule(t.k)
    lower, wit, trace = _unitary_sup_traced(t, schedule, cfg.restarts, cfg.seed,
                                            cfg.max_ascent_iter)
    if lower > upper + 1e-6 * max(1.0, upper):
        raise SolverError(f"lower bound {lower:.12g} exceeds upper bound {upper:.12g}: "
                          "engines disagree beyond tolerance")
    return NormEstimate(lower=float(lower), upper=float(upper),
                        gap=float(upper - lower), upper_cert=ucert, lower_cert=wit,
                        trace=trace)
