"""Haagerup tensor-norm estimators for two-factor spans.

An :class:`HTensorElement` is ``x = sum_l c_l (x) d_l`` with ``c_l`` in
M_k and ``d_l`` in M_m.  Its Haagerup norm is
``inf ||sum c_l c_l*||^(1/2) ||sum d_l* d_l||^(1/2)`` over equivalent
decompositions, and equals the supremum of ``||sum s1(c_l) s2(d_l)||``
over pairs of *-homomorphisms into a common B(H).

Upper bounds (:func:`haagerup_upper`): after reducing to a minimal-length
decomposition via the operator-Schmidt (realignment) SVD, every remaining
freedom is a Gram reparameterization by an invertible ``G``; the value

    value(G) = ||C(G)||^(1/2) ||D(G^{-1})||^(1/2),
    C(G) = sum_{pq} G[p,q] c_p c_q*,   D(H) = sum_{pq} H[p,q] d_p* d_q,

is minimized by bisecting along geodesics of the PD cone toward the
balancing point, i.e. the Riccati solution of the first-order condition
``G P G = Q`` equalizing the two factor sensitivities.

Lower bounds (:func:`haagerup_rep_lower`): sample pairs of random unital
multiplicity embeddings ``a -> U (I_mu (x) a) U*`` zero-padded to a common
dilation size (the padding simulates non-unital homomorphisms by
compression with a projection), evaluate ``||sum s1(c_l) s2(d_l)||``,
optionally polish the best pair by Riemannian ascent.  Every sampled pair
is an honest pair of *-homomorphisms, so each value is a valid lower
bound on the Haagerup norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import matkit
from .errors import InputError, SolverError
from .matkit import dag
from .norms import FactorizationCertificate, _cayley, _skew, cauchy_schwarz_bound

_STREAM_HREP = 2
_EIG_CLUSTER = 1e-9
_SING_FLOOR = 1e-14


@dataclass(frozen=True)
class HTensorElement:
    """``sum_l c_l (x) d_l`` with ``c_l`` k x k and ``d_l`` m x m."""

    k: int
    m: int
    terms: tuple

    def full(self) -> np.ndarray:
        out = np.zeros((self.k * self.m, self.k * self.m), dtype=complex)
        for c, d in self.terms:
            out = out + np.kron(c, d)
        return out


def htensor_element(terms) -> HTensorElement:
    pairs = []
    for l, (c, d) in enumerate(terms):
        pairs.append((matkit.as_cmatrix(c, f"term {l} left"),
                      matkit.as_cmatrix(d, f"term {l} right")))
    if not pairs:
        raise InputError("an element needs at least one term", code="E_DIM")
    k = pairs[0][0].shape[0]
    m = pairs[0][1].shape[0]
    for l, (c, d) in enumerate(pairs):
        if c.shape != (k, k) or d.shape != (m, m):
            raise InputError(f"term {l} has shapes {c.shape} (x) {d.shape}, expected "
                             f"({k},{k}) (x) ({m},{m})", code="E_DIM")
    return HTensorElement(k=k, m=m, terms=tuple(pairs))


def operator_schmidt(x: HTensorElement, truncate: float = 1e-12):
    """Minimal-length decomposition via the realignment SVD.

    Returns stacks ``(C, D)`` with ``x = sum_l C[l] (x) D[l]`` and the
    ``C[l]`` (and ``D[l]``) linearly independent; singular values below
    ``truncate`` times the largest are dropped.
    """
    k, m = x.k, x.m
    T = x.full()
    R = T.reshape(k, m, k, m).transpose(0, 2, 1, 3).reshape(k * k, m * m)
    u, s, vh = np.linalg.svd(R)
    if s.size == 0 or s[0] == 0.0:
        return (np.zeros((1, k, k), dtype=complex), np.zeros((1, m, m), dtype=complex))
    keep = s > truncate * s[0]
    L = int(np.count_nonzero(keep))
    C = np.empty((L, k, k), dtype=complex)
    D = np.empty((L, m, m), dtype=complex)
    for l in range(L):
        root = math.sqrt(s[l])
        C[l] = root * u[:, l].reshape(k, k)
        D[l] = root * vh[l].reshape(m, m)
    return C, D


# ---------------------------------------------------------------------------
# Upper bound: Gram search
# ---------------------------------------------------------------------------

def _c_side(G, C):
    return np.einsum('ab,ais,bjs->ij', G, C, C.conj())


def _d_side(H, D):
    return np.einsum('ab,asi,bsj->ij', H, D.conj(), D)


def _pd_fun(h, fn, floor=0.0):
    lam, v = matkit.herm_eig(h)
    lam = np.maximum(lam, floor)
    return v @ np.diag(fn(lam)) @ dag(v)


def _pd_inverse(g, reg_count):
    lam, v = matkit.herm_eig(g)
    top = float(lam[-1]) if lam.size else 0.0
    if top <= 0.0:
        raise SolverError("Gram matrix collapsed to zero")
    if lam[0] < _SING_FLOOR * top:
        reg_count[0] += 1
        eps = _SING_FLOOR * top
        lam = lam + eps
    return v @ np.diag(1.0 / lam) @ dag(v)


def _top_projector_rows(mat, apply_rows):
    """Weighted sensitivity Gram over the near-top eigenspace of ``mat``."""
    lam, v = matkit.herm_eig((mat + dag(mat)) / 2)
    top = lam[-1]
    sel = lam >= top * (1 - _EIG_CLUSTER) - _EIG_CLUSTER
    vecs = [v[:, i] for i in range(lam.size) if sel[i]]
    weight = 1.0 / len(vecs)
    P = 0.0
    for vec in vecs:
        Q = apply_rows(vec)  # (L, dim) rows
        P = P + weight * (Q @ Q.conj().T)
    return (P + dag(P)) / 2


def _geodesic(G, target, s):
    root = _pd_fun(G, np.sqrt, floor=0.0)
    inv_root = _pd_fun(G, lambda lam: 1.0 / np.sqrt(np.maximum(lam, _SING_FLOOR)))
    mid = inv_root @ target @ inv_root
    mid_s = _pd_fun((mid + dag(mid)) / 2, lambda lam: np.maximum(lam, _SING_FLOOR) ** s)
    return root @ mid_s @ root


def haagerup_upper(x: HTensorElement, iterations: int = 200):
    """Upper bound on the Haagerup norm with a reparameterized certificate.

    The value sequence is monotone nonincreasing across iterations; the
    certificate ``(c', d')`` satisfies ``sum c'_l (x) d'_l = x`` up to an
    operator-norm residual of 1e-7 relative.
    """
    C, D = operator_schmidt(x)
    L = C.shape[0]
    scale = max(1.0, matkit.op_norm(x.full()))
    regs = [0]

    def value_of(G):
        Ginv = _pd_inverse(G, regs)
        nc = matkit.op_norm(_c_side(G, C))
        nd = matkit.op_norm(_d_side(Ginv, D))
        return math.sqrt(max(nc, 0.0) * max(nd, 0.0)), Ginv, nc, nd

    G = np.eye(L, dtype=complex)
    val, Ginv, nc, nd = value_of(G)
    history = [val]
    if val > 0.0:
        for _ in range(max(0, int(iterations))):
            if nc <= 0.0 or nd <= 0.0:
                break
            # sensitivity Grams of the two factor norms
            P = _top_projector_rows(_c_side(G, C),
                                    lambda vec: np.einsum('lji,j->li', C.conj(), vec.conj()).conj())
            Q = _top_projector_rows(_d_side(Ginv, D),
                                    lambda vec: np.einsum('lij,j->li', D, vec))
            A = P / nc + _SING_FLOOR * np.eye(L)
            B = Q / nd + _SING_FLOOR * np.eye(L)
            # balancing point: PD solution of  Gbal A Gbal = B
            a_root = _pd_fun(A, np.sqrt, floor=0.0)
            a_iroot = _pd_fun(A, lambda lam: 1.0 / np.sqrt(np.maximum(lam, _SING_FLOOR)))
            inner = _pd_fun((a_root @ B @ a_root + dag(a_root @ B @ a_root)) / 2,
                            np.sqrt, floor=0.0)
            Gbal = a_iroot @ inner @ a_iroot
            Gbal = (Gbal + dag(Gbal)) / 2
            step = 1.0
            improved = False
            for _ls in range(24):
                Gtry = (_geodesic(G, Gbal, step) + dag(_geodesic(G, Gbal, step))) / 2
                vtry, Ginv_t, nc_t, nd_t = value_of(Gtry)
                if vtry < val - 1e-15 * max(1.0, val):
                    G, val, Ginv, nc, nd = Gtry, vtry, Ginv_t, nc_t, nd_t
                    improved = True
                    break
                step /= 2
            history.append(val)
            if not improved:
                break
            if len(history) > 10 and history[-11] - val < 1e-8 * max(1.0, val):
                break

    # certificate: c'_p = sum_l M[l,p] c_l, d'_p = sum_l Minv[p,l] d_l, M = G^(1/2)
    M = _pd_fun(G, np.sqrt, floor=0.0)
    Minv = _pd_fun(G, lambda lam: 1.0 / np.sqrt(np.maximum(lam, _SING_FLOOR)))
    cprime = np.einsum('lp,lij->pij', M, C)
    dprime = np.einsum('pl,lij->pij', Minv, D)
    recon = np.zeros_like(x.full())
    for p in range(L):
        recon = recon + np.kron(cprime[p], dprime[p])
    residual = matkit.op_norm(recon - x.full())
    if residual > 1e-7 * scale:
        raise SolverError(f"Haagerup certificate residual {residual:.3e} out of tolerance")
    cert = FactorizationCertificate(
        a=tuple(cprime), b=tuple(dprime),
        value=cauchy_schwarz_bound(list(cprime), list(dprime)) if val > 0 else 0.0,
        residual=residual, regularizations=regs[0])
    return float(val), cert


# ---------------------------------------------------------------------------
# Lower bound: sampled representation pairs
# ---------------------------------------------------------------------------

def _embed(a: np.ndarray, mult: int, dim: int, u: np.ndarray) -> np.ndarray:
    """Non-unital *-homomorphism  a -> U (I_mult (x) a  (+)  0) U*."""
    d = a.shape[0]
    blk = np.zeros((dim, dim), dtype=complex)
    blk[:mult * d, :mult * d] = np.kron(np.eye(mult), a)
    return u @ blk @ dag(u)


def _rep_value(s1_imgs, s2_imgs):
    m = s1_imgs[0] @ s2_imgs[0]
    for a, b in zip(s1_imgs[1:], s2_imgs[1:]):
        m = m + a @ b
    return m


def _polish_pair(C, D, mu1, mu2, dim, u1, u2, max_iter=300):
    """Ascend ``||sum s1(c_l) s2(d_l)||`` over the pair of dilation unitaries."""
    L = C.shape[0]
    chat = [np.zeros((dim, dim), dtype=complex) for _ in range(L)]
    dhat = [np.zeros((dim, dim), dtype=complex) for _ in range(L)]
    for l in range(L):
        chat[l][:mu1 * C.shape[1], :mu1 * C.shape[1]] = np.kron(np.eye(mu1), C[l])
        dhat[l][:mu2 * D.shape[1], :mu2 * D.shape[1]] = np.kron(np.eye(mu2), D[l])
    u1 = u1.copy()
    u2 = u2.copy()
    step = 1.0

    def build(a, b):
        s1 = [a @ ch @ dag(a) for ch in chat]
        s2 = [b @ dh @ dag(b) for dh in dhat]
        m = s1[0] @ s2[0]
        for p, q in zip(s1[1:], s2[1:]):
            m = m + p @ q
        return m, s1, s2

    m, s1, s2 = build(u1, u2)
    uu, svals, vh = np.linalg.svd(m)
    for _ in range(max_iter):
        w = uu[:, 0]
        v = vh[0].conj()
        k1 = np.zeros((dim, dim), dtype=complex)
        k2 = np.zeros((dim, dim), dtype=complex)
        vw = np.outer(v, w.conj())
        for l in range(L):
            f = dag(u1) @ s2[l] @ vw @ u1
            k1 += chat[l] @ f - f @ chat[l]
            h = dag(u2) @ vw @ s1[l] @ u2
            k2 += dhat[l] @ h - h @ dhat[l]
        a1 = _skew(dag(k1))
        a2 = _skew(dag(k2))
        gn2 = float(np.linalg.norm(a1) ** 2 + np.linalg.norm(a2) ** 2)
        if math.sqrt(gn2) <= 1e-9 * max(1.0, svals[0]):
            break
        f0 = svals[0]
        tstep = step
        accepted = False
        for _ls in range(40):
            u1t = u1 @ _cayley(tstep * a1)
            u2t = u2 @ _cayley(tstep * a2)
            mt, s1t, s2t = build(u1t, u2t)
            ft = np.linalg.svd(mt, compute_uv=False)[0]
            if ft >= f0 + 0.1 * tstep * gn2:
                accepted = True
                break
            tstep /= 2
        if not accepted:
            break
        u1, u2, s1, s2 = u1t, u2t, s1t, s2t
        step = min(tstep * 1.5, 1e3)
        m, _, _ = build(u1, u2)[0], None, None
        m, s1, s2 = build(u1, u2)
        uu, svals, vh = np.linalg.svd(m)
    return float(svals[0])


def haagerup_rep_lower(x: HTensorElement, samples: int = 10000, mult_max: int = 3,
                       seed: int = 0, polish: bool = True) -> float:
    """Best lower bound from sampled pairs of *-homomorphisms.

    Always evaluates the canonical pair (identity embeddings at the least
    common multiple of the factor dimensions, plus the plain identity
    representations when k = m) before random sampling.
    """
    if mult_max < 1:
        raise InputError("mult_max must be >= 1", code="E_DIM")
    C, D = operator_schmidt(x)
    k, m = x.k, x.m
    base = max(k, m)
    best = -np.inf
    best_params = None

    def evaluate(mu1, mu2, dim, u1, u2):
        s1 = [_embed(C[l], mu1, dim, u1) for l in range(C.shape[0])]
        s2 = [_embed(D[l], mu2, dim, u2) for l in range(D.shape[0])]
        return matkit.op_norm(_rep_value(C, D, s1, s2))

    canonical = []
    if k == m:
        canonical.append((1, 1, k, np.eye(k, dtype=complex), np.eye(k, dtype=complex)))
    lcm = k * m // math.gcd(k, m)
    if lcm <= mult_max * base or not canonical:
        canonical.append((lcm // k, lcm // m, lcm,
                          np.eye(lcm, dtype=complex), np.eye(lcm, dtype=complex)))
    for params in canonical:
        val = evaluate(*params)
        if val > best:
            best, best_params = val, params

    for s in range(int(samples)):
        rng = np.random.default_rng(matkit.derive_seed(seed, _STREAM_HREP, s))
        dim = int(rng.integers(base, mult_max * base + 1))
        mu1 = int(rng.integers(1, dim // k + 1))
        mu2 = int(rng.integers(1, dim // m + 1))
        u1 = np.asarray(matkit.haar_unitary(dim, matkit.derive_seed(seed, _STREAM_HREP, s, 1)))
        u2 = np.asarray(matkit.haar_unitary(dim, matkit.derive_seed(seed, _STREAM_HREP, s, 2)))
        val = evaluate(mu1, mu2, dim, u1, u2)
        if val > best:
            best, best_params = val, (mu1, mu2, dim, u1, u2)

    if polish and best_params is not None and best > 0:
        mu1, mu2, dim, u1, u2 = best_params
        polished = _polish_pair(C, D, mu1, mu2, dim, np.asarray(u1), np.asarray(u2))
        best = max(best, polished)
    return float(best)
