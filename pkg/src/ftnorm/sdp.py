"""A small dense semidefinite-program solver for block-structured programs.

The programs this package needs are tiny (Hermitian blocks of dimension a
few dozen, a few hundred real equality constraints), so the solver favors
robustness and determinism over scale:

* primal-dual interior point with Nesterov-Todd scaling on dense complex
  Hermitian blocks (no realification: the Hermitian PSD cone is handled
  natively, so certificates need no mapping back),
* Mehrotra-style predictor/corrector step with fraction-to-boundary 0.98,
* pure feasibility programs are decided by a shifted-cone phase-1
  (minimize t with X + t*I PSD), and primal infeasibility is certified by
  searching the Farkas alternative system,
* a bisection-on-the-objective-scalar fallback with a phase-1 feasibility
  oracle takes over if the KKT system conditioning exceeds ``cond_limit``.

Standard form (internal): minimize  sum_j <C_j, X_j> + c.s  subject to
``sum_j <A_pj, X_j> + (G s)_p = b_p`` for p < m, with each X_j Hermitian
PSD and s a vector of free reals.  ``<A, B> = Re tr(A* B)``.

Everything here is deterministic: identical inputs give bitwise-identical
iteration traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matkit
from .errors import InputError, SolverError
from .tuples import OperatorTuple

_FEAS_TOL = 1e-10
_RAY_TOL = 1e-8
_MARGINAL_T = 1e-6


# ---------------------------------------------------------------------------
# Public program description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockTerm:
    """Contribution ``left @ kron(X, I_mult) @ right`` of PSD block ``block``."""

    block: str
    left: np.ndarray
    right: np.ndarray
    mult: int = 1


@dataclass(frozen=True)
class ScalarTerm:
    """Contribution ``s * coeff`` of the scalar variable ``var``."""

    var: str
    coeff: np.ndarray


@dataclass(frozen=True)
class MatrixEquation:
    """An affine matrix equality ``sum(terms) = rhs``.

    ``hermitian=True`` asserts that both sides are Hermitian-valued, so
    only the upper triangle contributes independent real equations.
    """

    terms: tuple
    rhs: np.ndarray
    hermitian: bool = False


@dataclass(frozen=True)
class Objective:
    """Affine real functional to minimize."""

    scalar: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    constant: float = 0.0

    def is_constant(self) -> bool:
        no_scalar = all(v == 0.0 for v in self.scalar.values())
        no_block = all(np.all(np.asarray(M) == 0) for M in self.blocks.values())
        return no_scalar and no_block


@dataclass(frozen=True)
class LmiProgram:
    """Block-structured SDP: PSD matrix variables, free scalars, equalities."""

    psd_blocks: tuple
    scalar_vars: tuple
    constraints: tuple
    objective: Objective

    def validate(self):
        names = [n for n, _ in self.psd_blocks]
        if len(set(names)) != len(names):
            raise InputError("duplicate PSD block names", code="E_PROGRAM")
        if len(set(self.scalar_vars)) != len(self.scalar_vars):
            raise InputError("duplicate scalar variable names", code="E_PROGRAM")
        if not self.psd_blocks:
            raise InputError("program needs at least one PSD block", code="E_PROGRAM")
        dims = dict(self.psd_blocks)
        for name, d in self.psd_blocks:
            if d < 1:
                raise InputError(f"block {name} has dimension {d}", code="E_PROGRAM")
        for eq in self.constraints:
            rhs = np.asarray(eq.rhs)
            for term in eq.terms:
                if isinstance(term, BlockTerm):
                    if term.block not in dims:
                        raise InputError(f"constraint references undeclared block "
                                         f"{term.block!r}", code="E_PROGRAM")
                    d = dims[term.block]
                    left = np.asarray(term.left)
                    right = np.asarray(term.right)
                    if left.shape != (rhs.shape[0], d * term.mult) or \
                            right.shape != (d * term.mult, rhs.shape[1]):
                        raise InputError(f"constraint term on block {term.block!r} has "
                                         f"inconsistent shape", code="E_PROGRAM")
                elif isinstance(term, ScalarTerm):
                    if term.var not in self.scalar_vars:
                        raise InputError(f"constraint references undeclared scalar "
                                         f"{term.var!r}", code="E_PROGRAM")
                    if np.asarray(term.coeff).shape != rhs.shape:
                        raise InputError("scalar coefficient shape mismatch",
                                         code="E_PROGRAM")
                else:
                    raise InputError(f"unknown constraint term {term!r}", code="E_PROGRAM")
            if eq.hermitian:
                if rhs.shape[0] != rhs.shape[1] or \
                        np.max(np.abs(rhs - rhs.conj().T)) > 1e-10 * (1 + np.max(np.abs(rhs))):
                    raise InputError("hermitian equation with non-Hermitian rhs",
                                     code="E_PROGRAM")
        for v in self.objective.scalar.values():
            if not np.isfinite(v):
                raise InputError("objective coefficients must be finite", code="E_PROGRAM")
        for name in self.objective.scalar:
            if name not in self.scalar_vars:
                raise InputError(f"objective references undeclared scalar {name!r}",
                                 code="E_PROGRAM")
        for name in self.objective.blocks:
            if name not in dims:
                raise InputError(f"objective references undeclared block {name!r}",
                                 code="E_PROGRAM")


@dataclass
class SdpSolution:
    """Primal/dual solution of an :class:`LmiProgram`.

    ``status`` is one of ``optimal``, ``infeasible``, ``max_iterations``.
    For optimal solutions ``duality_gap`` is the scaled gap
    ``|pobj - dobj| / (1 + |pobj| + |dobj|)``; for infeasible ones
    ``dual_certificate`` carries a normalized Farkas ray.
    """

    status: str
    primal_blocks: dict
    scalars: dict
    objective_value: float
    dual_certificate: dict
    duality_gap: float
    iterations: int
    diagnostics: dict


# ---------------------------------------------------------------------------
# svec packing: isometry between Hermitian d x d and R^{d^2}
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)


def _svec_stack(S: np.ndarray) -> np.ndarray:
    """Pack a stack (m, d, d) of Hermitian matrices into rows of length d^2."""
    m, d, _ = S.shape
    iu = np.triu_indices(d, 1)
    off = S[:, iu[0], iu[1]]
    diag = np.real(S[:, np.arange(d), np.arange(d)])
    return np.concatenate([diag, _SQRT2 * off.real, _SQRT2 * off.imag], axis=1)


def _svec(X: np.ndarray) -> np.ndarray:
    return _svec_stack(X[np.newaxis])[0]


def _smat(v: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d, 1)
    X = np.zeros((d, d), dtype=np.complex128)
    X[np.arange(d), np.arange(d)] = v[:d]
    noff = iu[0].size
    off = (v[d:d + noff] + 1j * v[d + noff:]) / _SQRT2
    X[iu] = off
    X[(iu[1], iu[0])] = np.conj(off)
    return X


def _herm(X: np.ndarray) -> np.ndarray:
    return (X + X.conj().T) / 2


# ---------------------------------------------------------------------------
# Compiled standard form
# ---------------------------------------------------------------------------

class StandardForm:
    """Realified standard form of an :class:`LmiProgram`.

    ``A[j]`` is an (m, d_j, d_j) stack of Hermitian coefficient matrices,
    ``G`` the (m, f) free-variable matrix, ``b`` the right side.
    """

    def __init__(self, names, dims, A, G, b, C, c, obj_const=0.0, scalar_names=()):
        self.names = list(names)
        self.dims = list(dims)
        self.A = A
        self.G = G
        self.b = b
        self.C = C
        self.c = c
        self.obj_const = obj_const
        self.scalar_names = list(scalar_names)
        self.m = b.size
        self.nfree = c.size
        self.Asvec = [_svec_stack(Aj) for Aj in A]

    def apply(self, X, s) -> np.ndarray:
        out = self.G @ s if self.nfree else np.zeros(self.m)
        for j, Aj in enumerate(self.A):
            out = out + np.einsum('pij,ji->p', Aj, X[j]).real
        return out

    def adjoint(self, y):
        return [_herm(np.einsum('p,pij->ij', y, Aj)) for Aj in self.A]

    def primal_objective(self, X, s) -> float:
        val = self.obj_const + (float(self.c @ s) if self.nfree else 0.0)
        for j, Cj in enumerate(self.C):
            val += float(np.vdot(Cj, X[j]).real)
        return val

    def constraint_violation(self, X, s) -> float:
        return float(np.max(np.abs(self.apply(X, s) - self.b))) if self.m else 0.0

    def rank_check(self):
        cols = [Asv for Asv in self.Asvec]
        if self.nfree:
            cols.append(self.G)
        K = np.concatenate(cols, axis=1)
        if self.m > K.shape[1]:
            raise InputError("ill-posed constraints: more equations than variable "
                             "coordinates", code="E_RANK")
        sv = np.linalg.svd(K, compute_uv=False)
        if sv.size and sv[-1] < 1e-10 * max(1.0, sv[0]):
            raise InputError("ill-posed constraints: rank-deficient beyond tolerance",
                             code="E_RANK")


def compile_program(program: LmiProgram) -> StandardForm:
    """Realify an :class:`LmiProgram` into :class:`StandardForm` (with rank check)."""
    program.validate()
    names = [n for n, _ in program.psd_blocks]
    dims = [d for _, d in program.psd_blocks]
    bidx = {n: j for j, n in enumerate(names)}
    sidx = {n: t for t, n in enumerate(program.scalar_vars)}
    f = len(program.scalar_vars)

    rows_A = [[] for _ in names]
    rows_G = []
    rows_b = []

    def emit(block_N, scalar_c, gamma, part):
        for j, d in enumerate(dims):
            N = block_N.get(j)
            if N is None:
                H = np.zeros((d, d), dtype=np.complex128)
            elif part == "re":
                H = (N + N.conj().T) / 2
            else:
                H = (N - N.conj().T) / 2j
            rows_A[j].append(H)
        grow = np.zeros(f)
        for t, cval in scalar_c.items():
            grow[t] = cval.real if part == "re" else cval.imag
        rows_G.append(grow)
        rows_b.append(gamma.real if part == "re" else gamma.imag)

    for eq in program.constraints:
        rhs = np.asarray(eq.rhs, dtype=np.complex128)
        r, scols = rhs.shape
        if eq.hermitian:
            entries = [(a, b) for a in range(r) for b in range(a, scols)]
        else:
            entries = [(a, b) for a in range(r) for b in range(scols)]
        for (a, b) in entries:
            block_N = {}
            scalar_c = {}
            for term in eq.terms:
                if isinstance(term, BlockTerm):
                    j = bidx[term.block]
                    d = dims[j]
                    left = np.asarray(term.left, dtype=np.complex128)
                    right = np.asarray(term.right, dtype=np.complex128)
                    Pa = left[a, :].reshape(d, term.mult)
                    Qb = right[:, b].reshape(d, term.mult)
                    N = Qb @ Pa.T
                    block_N[j] = block_N.get(j, 0) + N
                else:
                    t = sidx[term.var]
                    cval = complex(np.asarray(term.coeff)[a, b])
                    scalar_c[t] = scalar_c.get(t, 0.0) + cval
            parts = ["re"] if (eq.hermitian and a == b) else ["re", "im"]
            for part in parts:
                emit(block_N, scalar_c, complex(rhs[a, b]), part)

    m = len(rows_b)
    A = [np.array(rows_A[j]) if m else np.zeros((0, d, d), dtype=np.complex128)
         for j, d in enumerate(dims)]
    G = np.array(rows_G) if m else np.zeros((0, f))
    b = np.array(rows_b)
    C = []
    for name, d in program.psd_blocks:
        Cj = program.objective.blocks.get(name)
        C.append(_herm(np.asarray(Cj, dtype=np.complex128)) if Cj is not None
                 else np.zeros((d, d), dtype=np.complex128))
    c = np.zeros(f)
    for name, v in program.objective.scalar.items():
        c[sidx[name]] = v
    sf = StandardForm(names, dims, A, G, b, C, c, program.objective.constant,
                      program.scalar_vars)
    sf.rank_check()
    return sf


# ---------------------------------------------------------------------------
# Interior-point core
# ---------------------------------------------------------------------------

class _FallbackNeeded(Exception):
    pass


def _nt_scaling(X, Z):
    Lx = np.linalg.cholesky(X)
    Lz = np.linalg.cholesky(Z)
    _, sig, Vh = np.linalg.svd(Lz.conj().T @ Lx)
    Gf = Lx @ Vh.conj().T @ np.diag(1.0 / np.sqrt(sig))
    return _herm(Gf @ Gf.conj().T)


def _chol_pd(X):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        d = X.shape[0]
        jitter = 1e-14 * max(1.0, float(np.trace(X).real))
        return np.linalg.cholesky(X + jitter * np.eye(d))


def _max_step(X, dX):
    L = _chol_pd(X)
    Y = np.linalg.solve(L, dX)
    Y = np.linalg.solve(L, Y.conj().T).conj().T
    lam = float(np.linalg.eigvalsh(_herm(Y))[0])
    if lam >= -1e-14:
        return np.inf
    return -1.0 / lam


def _ipm(sf: StandardForm, gap_tol: float, max_iter: int, *, cond_limit=1e12,
         x0=None, s0=None, early_stop=None, allow_fallback=True):
    """Run the interior-point loop; returns a state dict."""
    J = len(sf.dims)
    N = sum(sf.dims)
    scale = 1.0 + max(
        float(np.max(np.abs(sf.b))) if sf.m else 0.0,
        max((float(np.linalg.norm(Cj, 2)) for Cj in sf.C), default=0.0))
    X = [np.array(x, dtype=np.complex128) for x in x0] if x0 is not None else \
        [scale * np.eye(d, dtype=np.complex128) for d in sf.dims]
    Z = [scale * np.eye(d, dtype=np.complex128) for d in sf.dims]
    y = np.zeros(sf.m)
    s = np.array(s0, dtype=float) if s0 is not None else np.zeros(sf.nfree)
    trace = []
    state = dict(reason="max_iterations")
    it = 0
    for it in range(1, max_iter + 1):
        rp = sf.b - sf.apply(X, s)
        AadjY = sf.adjoint(y)
        Rd = [sf.C[j] - Z[j] - AadjY[j] for j in range(J)]
        rg = (sf.c - sf.G.T @ y) if sf.nfree else np.zeros(0)
        pobj = sf.primal_objective(X, s)
        dobj = float(sf.b @ y) + sf.obj_const
        mu = sum(float(np.vdot(X[j], Z[j]).real) for j in range(J)) / N
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pinf = float(np.linalg.norm(rp)) / (1 + float(np.linalg.norm(sf.b)))
        dinf = max([float(np.linalg.norm(Rd[j])) / (1 + float(np.linalg.norm(sf.C[j])))
                    for j in range(J)] +
                   ([float(np.linalg.norm(rg, np.inf))] if rg.size else [0.0]))
        trace.append((mu, relgap, pinf, dinf))
        if early_stop is not None and early_stop(s=s, pinf=pinf, X=X):
            state.update(reason="early_stop")
            break
        if pinf <= _FEAS_TOL and dinf <= _FEAS_TOL and relgap <= gap_tol:
            state.update(reason="optimal")
            break
        # Dual improving ray => certificate of primal infeasibility.
        ynorm = float(np.linalg.norm(y))
        if ynorm > 1e3 * scale:
            yhat = y / ynorm
            slacks = [-_herm(Ahat) for Ahat in sf.adjoint(yhat)]
            lam_min = min(float(np.linalg.eigvalsh(Sj)[0]) for Sj in slacks)
            gres = float(np.linalg.norm(sf.G.T @ yhat, np.inf)) if sf.nfree else 0.0
            bty = float(sf.b @ yhat)
            if lam_min >= -_RAY_TOL and gres <= _RAY_TOL and bty >= _RAY_TOL:
                state.update(reason="infeasible_ray", ray=yhat, ray_slacks=slacks,
                             ray_violation=bty)
                break
        if pobj < -1e9 * scale:
            state.update(reason="unbounded")
            break

        W = [_nt_scaling(X[j], Z[j]) for j in range(J)]
        M = np.zeros((sf.m, sf.m))
        for j in range(J):
            WA = np.einsum('ab,pbc,cd->pad', W[j], sf.A[j], W[j])
            M += sf.Asvec[j] @ _svec_stack(WA).T
        M = (M + M.T) / 2
        f = sf.nfree
        K = np.zeros((sf.m + f, sf.m + f))
        K[:sf.m, :sf.m] = M
        if f:
            K[:sf.m, sf.m:] = sf.G
            K[sf.m:, :sf.m] = sf.G.T

        WRdW = [W[j] @ Rd[j] @ W[j] for j in range(J)]

        def solve_dir(Rc):
            h = rp - sf.apply([Rc[j] - WRdW[j] for j in range(J)], np.zeros(f))
            rhs = np.concatenate([h, rg])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                raise _FallbackNeeded("singular KKT system")
            res = rhs - K @ sol
            nres = float(np.linalg.norm(res))
            if nres > 1e-13 * (1 + float(np.linalg.norm(rhs))):
                sol = sol + np.linalg.solve(K, res)  # one refinement pass
                res = rhs - K @ sol
                nres = float(np.linalg.norm(res))
            if not np.all(np.isfinite(sol)) or \
                    nres > 1e-6 * (1 + float(np.linalg.norm(rhs))):
                cond = float(np.linalg.cond(K))
                if cond > cond_limit:
                    raise _FallbackNeeded(f"KKT conditioning {cond:.2e}")
                raise _FallbackNeeded("KKT solve lost accuracy")
            dy = sol[:sf.m]
            ds = sol[sf.m:]
            AadjDy = sf.adjoint(dy)
            dZ = [_herm(Rd[j] - AadjDy[j]) for j in range(J)]
            dX = [_herm(Rc[j] - W[j] @ dZ[j] @ W[j]) for j in range(J)]
            return dX, ds, dy, dZ

        try:
            Rc_aff = [-X[j] for j in range(J)]
            dX, ds, dy, dZ = solve_dir(Rc_aff)
            ap = min([1.0] + [0.99 * _max_step(X[j], dX[j]) for j in range(J)])
            ad = min([1.0] + [0.99 * _max_step(Z[j], dZ[j]) for j in range(J)])
            mu_aff = sum(float(np.vdot(X[j] + ap * dX[j], Z[j] + ad * dZ[j]).real)
                         for j in range(J)) / N
            sigma = min(1.0, max((max(mu_aff, 0.0) / mu) ** 3, 1e-10))
            Zinv = [np.linalg.inv(Z[j]) for j in range(J)]
            Rc = [_herm(sigma * mu * Zinv[j] - X[j]) for j in range(J)]
            dX, ds, dy, dZ = solve_dir(Rc)
        except _FallbackNeeded:
            if allow_fallback and relgap > 1e3 * gap_tol:
                raise
            if allow_fallback:
                # close enough: report what we have
                state.update(reason="optimal" if relgap <= gap_tol and
                             pinf <= 1e-8 and dinf <= 1e-8 else "max_iterations")
                break
            state.update(reason="max_iterations")
            break

        ap = min([1.0] + [0.98 * _max_step(X[j], dX[j]) for j in range(J)])
        ad = min([1.0] + [0.98 * _max_step(Z[j], dZ[j]) for j in range(J)])
        X = [_herm(X[j] + ap * dX[j]) for j in range(J)]
        s = s + ap * ds
        y = y + ad * dy
        Z = [_herm(Z[j] + ad * dZ[j]) for j in range(J)]

    rp = sf.b - sf.apply(X, s)
    state.update(X=X, s=s, y=y, Z=Z,
                 pobj=sf.primal_objective(X, s),
                 dobj=float(sf.b @ y) + sf.obj_const,
                 pinf=float(np.linalg.norm(rp)) / (1 + float(np.linalg.norm(sf.b))),
                 iterations=it, trace=trace)
    state["relgap"] = abs(state["pobj"] - state["dobj"]) / \
        (1 + abs(state["pobj"]) + abs(state["dobj"]))
    return state


# ---------------------------------------------------------------------------
# Phase-1 feasibility and Farkas certificates
# ---------------------------------------------------------------------------

def _phase1_form(sf: StandardForm):
    """Shifted-cone phase-1: min t s.t. A(X~) - t*A(I) + G s = b, X~ PSD, t >= -1."""
    J = len(sf.dims)
    dims1 = sf.dims + [1]
    m1 = sf.m + 1
    A1 = []
    for j in range(J):
        Aj = np.zeros((m1,) + sf.A[j].shape[1:], dtype=np.complex128)
        Aj[:sf.m] = sf.A[j]
        A1.append(Aj)
    Aq = np.zeros((m1, 1, 1), dtype=np.complex128)
    Aq[sf.m, 0, 0] = 1.0
    A1.append(Aq)
    g_t = np.zeros(sf.m)
    for j in range(J):
        g_t += -np.einsum('pii->p', sf.A[j]).real
    G1 = np.zeros((m1, sf.nfree + 1))
    if sf.nfree:
        G1[:sf.m, :sf.nfree] = sf.G
    G1[:sf.m, sf.nfree] = g_t
    G1[sf.m, sf.nfree] = -1.0  # q - t = 1
    b1 = np.concatenate([sf.b, [1.0]])
    C1 = [np.zeros((d, d), dtype=np.complex128) for d in dims1]
    c1 = np.zeros(sf.nfree + 1)
    c1[sf.nfree] = 1.0
    return StandardForm(sf.names + ["_phase1_bound"], dims1, A1, G1, b1, C1, c1)


def _phase1(sf: StandardForm, max_iter: int = 200):
    """Decide feasibility of ``A(X) + G s = b, X PSD``.

    Returns (verdict, X, s, diagnostics) with verdict in
    {"feasible", "marginal", "infeasible", "unknown"}.
    """
    # Least-squares base point for the affine system.
    cols = list(sf.Asvec) + ([sf.G] if sf.nfree else [])
    Kls = np.concatenate(cols, axis=1)
    xi, *_ = np.linalg.lstsq(Kls, sf.b, rcond=None)
    resid = float(np.linalg.norm(Kls @ xi - sf.b))
    if resid > 1e-8 * (1 + float(np.linalg.norm(sf.b))):
        # equalities already unsolvable: the residual itself is a Farkas ray
        r = sf.b - Kls @ xi
        yhat = r / np.linalg.norm(r)
        return "infeasible", None, None, dict(ray=yhat,
                                              ray_slacks=[-_herm(Sj) for Sj in sf.adjoint(yhat)],
                                              ray_violation=float(sf.b @ yhat))
    Xbase = []
    off = 0
    for d in sf.dims:
        Xbase.append(_smat(xi[off:off + d * d], d))
        off += d * d
    sbase = xi[off:] if sf.nfree else np.zeros(0)
    lam_lo = min(float(np.linalg.eigvalsh(Xj)[0]) for Xj in Xbase)
    margin = 1.0 + 0.1 * max(1.0, max(float(np.linalg.norm(Xj, 2)) for Xj in Xbase))
    t0 = max(1.0, -lam_lo + margin)
    X0 = [Xbase[j] + t0 * np.eye(sf.dims[j]) for j in range(len(sf.dims))]
    X0.append(np.array([[1.0 + t0]], dtype=np.complex128))
    s0 = np.concatenate([sbase, [t0]])

    sf1 = _phase1_form(sf)
    t_idx = sf.nfree

    def early(s, pinf, X):
        return s[t_idx] <= -1e-7 and pinf <= 1e-9

    st = _ipm(sf1, gap_tol=1e-9, max_iter=max_iter, x0=X0, s0=s0,
              early_stop=early, allow_fallback=False)
    tval = float(st["s"][t_idx])
    X = [st["X"][j] - tval * np.eye(sf.dims[j]) for j in range(len(sf.dims))]
    s = st["s"][:sf.nfree]
    diag = dict(phase1_t=tval, phase1_reason=st["reason"],
                phase1_iterations=st["iterations"])
    if st["reason"] == "early_stop":
        return "feasible", X, s, diag
    if st["reason"] == "optimal" or st["pinf"] <= 1e-8:
        if tval <= -1e-7:
            return "feasible", X, s, diag
        if tval <= _MARGINAL_T:
            return "marginal", X, s, diag
        return "infeasible", None, None, diag
    return "unknown", None, None, diag


def _farkas_search(sf: StandardForm, max_iter: int = 200):
    """Search the alternative system S = -A*(y) PSD, G^T y = 0, b.y = 1."""
    if float(np.linalg.norm(sf.b)) == 0.0:
        return None
    J = len(sf.dims)
    m = sf.m
    dims2 = list(sf.dims)
    # Rows: per block j, Hermitian equation S_j + A_j*(y) = 0  (d_j^2 real rows),
    # then b.y = 1 and G^T y = 0.
    rows_A = [[] for _ in range(J)]
    rows_G = []
    rows_b = []

    def zero_blocks():
        return [np.zeros((d, d), dtype=np.complex128) for d in dims2]

    for j, d in enumerate(dims2):
        for a in range(d):
            for bcol in range(a, d):
                parts = ["re"] if a == bcol else ["re", "im"]
                for part in parts:
                    N = np.zeros((d, d), dtype=np.complex128)
                    N[bcol, a] = 1.0  # phi(S) = S[a, bcol]
                    H = (N + N.conj().T) / 2 if part == "re" else (N - N.conj().T) / 2j
                    row = zero_blocks()
                    row[j] = H
                    for jj in range(J):
                        rows_A[jj].append(row[jj])
                    gr = np.zeros(m)
                    vals = sf.A[j][:, a, bcol]
                    gr[:] = vals.real if part == "re" else vals.imag
                    rows_G.append(gr)
                    rows_b.append(0.0)
    # b.y = 1
    for jj in range(J):
        rows_A[jj].append(np.zeros((dims2[jj], dims2[jj]), dtype=np.complex128))
    rows_G.append(sf.b.copy())
    rows_b.append(1.0)
    # G^T y = 0
    for t in range(sf.nfree):
        for jj in range(J):
            rows_A[jj].append(np.zeros((dims2[jj], dims2[jj]), dtype=np.complex128))
        rows_G.append(sf.G[:, t].copy())
        rows_b.append(0.0)

    m2 = len(rows_b)
    A2 = [np.array(rows_A[j]) for j in range(J)]
    G2 = np.array(rows_G)
    b2 = np.array(rows_b)
    C2 = [np.zeros((d, d), dtype=np.complex128) for d in dims2]
    c2 = np.zeros(m)
    alt = StandardForm([f"S{j}" for j in range(J)], dims2, A2, G2, b2, C2, c2)
    verdict, Xalt, yvec, diag = _phase1(alt, max_iter=max_iter)
    if verdict not in ("feasible", "marginal") or yvec is None:
        return None
    y = np.asarray(yvec)
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        return None
    yhat = y / ynorm
    slacks = [-_herm(Sj) for Sj in sf.adjoint(yhat)]
    lam_min = min(float(np.linalg.eigvalsh(Sj)[0]) for Sj in slacks)
    gres = float(np.linalg.norm(sf.G.T @ yhat, np.inf)) if sf.nfree else 0.0
    bty = float(sf.b @ yhat)
    if lam_min >= -_RAY_TOL and gres <= _RAY_TOL and bty >= _RAY_TOL:
        return dict(ray=yhat, ray_slacks=slacks, ray_violation=bty)
    return None


# ---------------------------------------------------------------------------
# Bisection fallback
# ---------------------------------------------------------------------------

def _objective_scalar_index(sf: StandardForm):
    nz = np.nonzero(sf.c)[0]
    if any(np.linalg.norm(Cj) > 0 for Cj in sf.C):
        return None
    if nz.size != 1 or sf.c[nz[0]] <= 0:
        return None
    return int(nz[0])


def _fix_scalar(sf: StandardForm, idx: int, value: float) -> StandardForm:
    keep = [t for t in range(sf.nfree) if t != idx]
    G = sf.G[:, keep] if keep else np.zeros((sf.m, 0))
    b = sf.b - value * sf.G[:, idx]
    names = [sf.scalar_names[t] for t in keep] if sf.scalar_names else []
    return StandardForm(sf.names, sf.dims, sf.A, G, b, sf.C, np.zeros(len(keep)),
                        0.0, names)


def _bisection(sf: StandardForm, gap_tol: float, max_iter: int):
    """Bisection on the single objective scalar with a phase-1 feasibility oracle.

    Assumes interval feasibility in the scalar (true for the norm programs
    this package assembles, where larger lambda only relaxes PSD slacks).
    """
    idx = _objective_scalar_index(sf)
    if idx is None:
        raise SolverError("bisection fallback requires a single-scalar objective")

    cache = {}

    def feasible(val):
        if val in cache:
            return cache[val]
        verdict, X, s, _ = _phase1(_fix_scalar(sf, idx, val), max_iter=max_iter)
        ok = verdict in ("feasible", "marginal")
        cache[val] = (ok, X, s)
        return cache[val]

    hi = 1.0
    for _ in range(64):
        ok, _, _ = feasible(hi)
        if ok:
            break
        hi = hi * 2 + 1
    else:
        raise SolverError("bisection fallback found no feasible objective value")
    lo = 0.0
    ok0, _, _ = feasible(lo)
    if ok0:
        # explore negative values
        lo = -1.0
        for _ in range(64):
            ok, _, _ = feasible(lo)
            if not ok:
                break
            hi = lo
            lo *= 2
        else:
            raise SolverError("objective appears unbounded below (bisection)")
    total = 0
    while hi - lo > max(1e-12, gap_tol * max(1.0, abs(hi))) and total < 200:
        mid = 0.5 * (lo + hi)
        ok, _, _ = feasible(mid)
        if ok:
            hi = mid
        else:
            lo = mid
        total += 1
    ok, X, s = feasible(hi)
    coeff = sf.c[idx]
    sfull = np.zeros(sf.nfree)
    keep = [t for t in range(sf.nfree) if t != idx]
    for pos, t in enumerate(keep):
        sfull[t] = s[pos] if s is not None and len(s) else 0.0
    sfull[idx] = hi
    return dict(reason="optimal", X=X, s=sfull, y=np.zeros(sf.m), Z=None,
                pobj=coeff * hi + sf.obj_const, dobj=coeff * lo + sf.obj_const,
                relgap=(hi - lo) / (1 + abs(hi) + abs(lo)),
                iterations=total, trace=[], method="bisection")


# ---------------------------------------------------------------------------
# Public solve
# ---------------------------------------------------------------------------

def _package(program, sf, st, status, gap_tol):
    X = st.get("X")
    s = st.get("s")
    blocks = {name: X[j] for j, name in enumerate(sf.names[:len(program.psd_blocks)])} \
        if X is not None else {}
    scalars = {name: float(s[t]) for t, name in enumerate(program.scalar_vars)} \
        if s is not None and len(program.scalar_vars) else {}
    dual = {}
    if status == "infeasible":
        dual = dict(farkas_ray=st.get("ray"), slack_blocks=st.get("ray_slacks"),
                    violation=st.get("ray_violation"))
    elif st.get("y") is not None:
        dual = dict(y=st.get("y"), slack_blocks=st.get("Z"))
    diagnostics = dict(trace=st.get("trace", []), reason=st.get("reason"),
                       method=st.get("method", "ipm"))
    for key in ("phase1_t", "phase1_reason"):
        if key in st:
            diagnostics[key] = st[key]
    sol = SdpSolution(
        status=status,
        primal_blocks=blocks,
        scalars=scalars,
        objective_value=float(st.get("pobj", np.nan)) if status == "optimal" else float("nan"),
        dual_certificate=dual,
        duality_gap=float(st.get("relgap", np.nan)),
        iterations=int(st.get("iterations", 0)),
        diagnostics=diagnostics,
    )
    if status == "optimal":
        viol = sf.constraint_violation(X, s)
        if viol > 1e-7:
            raise SolverError(f"solution failed re-verification: constraint violation "
                              f"{viol:.3e}", trace=st.get("trace"))
        for j, name in enumerate(sf.names[:len(program.psd_blocks)]):
            if not matkit.psd_check(_herm(X[j]), 1e-8):
                raise SolverError(f"solution block {name} failed PSD re-verification",
                                  trace=st.get("trace"))
        sol.diagnostics["constraint_violation"] = viol
    return sol


def solve(program: LmiProgram, gap_tol: float = 1e-8, max_iter: int = 200,
          cond_limit: float = 1e12) -> SdpSolution:
    """Solve an :class:`LmiProgram` to a certified duality gap.

    Deterministic for fixed inputs.  ``gap_tol`` must be at least 1e-9.
    """
    if gap_tol < 1e-9:
        raise InputError("gap_tol must be >= 1e-9", code="E_TOL")
    sf = compile_program(program)

    if program.objective.is_constant():
        verdict, X, s, diag = _phase1(sf, max_iter=max_iter)
        if verdict in ("feasible", "marginal"):
            st = dict(X=X, s=s, y=None, pobj=program.objective.constant,
                      dobj=program.objective.constant, relgap=0.0,
                      iterations=diag.get("phase1_iterations", 0), trace=[],
                      reason=verdict, method="phase1", **diag)
            return _package(program, sf, st, "optimal", gap_tol)
        cert = _farkas_search(sf, max_iter=max_iter)
        if cert is not None:
            st = dict(iterations=diag.get("phase1_iterations", 0), trace=[],
                      reason="farkas", method="phase1", **cert, **diag)
            return _package(program, sf, st, "infeasible", gap_tol)
        st = dict(iterations=diag.get("phase1_iterations", 0), trace=[],
                  reason="inconclusive", method="phase1", **diag)
        return _package(program, sf, st, "max_iterations", gap_tol)

    try:
        st = _ipm(sf, gap_tol, max_iter, cond_limit=cond_limit)
    except _FallbackNeeded:
        st = _bisection(sf, gap_tol, max_iter)
        return _package(program, sf, st, "optimal", gap_tol)

    if st["reason"] == "optimal":
        return _package(program, sf, st, "optimal", gap_tol)
    if st["reason"] == "infeasible_ray":
        return _package(program, sf, st, "infeasible", gap_tol)
    if st["reason"] == "unbounded":
        st["diagnostic"] = "objective appears unbounded below"
        sol = _package(program, sf, st, "max_iterations", gap_tol)
        sol.diagnostics["diagnostic"] = "objective appears unbounded below"
        return sol
    # stalled: decide feasibility to give a useful status
    cert = _farkas_search(sf, max_iter=max_iter)
    if cert is not None:
        st.update(cert)
        return _package(program, sf, st, "infeasible", gap_tol)
    sol = _package(program, sf, st, "max_iterations", gap_tol)
    sol.diagnostics["diagnostic"] = "did not converge within max_iter"
    return sol


def check_farkas(program: LmiProgram, ray: np.ndarray) -> dict:
    """Independently evaluate a Farkas ray against a program's constraints."""
    sf = compile_program(program)
    yhat = np.asarray(ray, dtype=float)
    nrm = float(np.linalg.norm(yhat))
    if nrm > 0:
        yhat = yhat / nrm
    slacks = [-_herm(Sj) for Sj in sf.adjoint(yhat)]
    lam_min = min(float(np.linalg.eigvalsh(Sj)[0]) for Sj in slacks)
    gres = float(np.linalg.norm(sf.G.T @ yhat, np.inf)) if sf.nfree else 0.0
    return dict(min_slack_eig=lam_min, free_residual=gres,
                violation=float(sf.b @ yhat))


# ---------------------------------------------------------------------------
# Program assembly
# ---------------------------------------------------------------------------

def assemble_dec_program(t: OperatorTuple) -> LmiProgram:
    """The decomposable-norm SDP for a tuple ``(x_i)`` of k x k matrices.

    Variables: Hermitian PSD blocks ``T_i`` (2k x 2k) whose corners are the
    ``y_i``/``z_i`` of the 2x2-block positivity certificates
    ``[[y_i, x_i*], [x_i, z_i]] >= 0``, slack blocks for
    ``lam*I - sum y_i >= 0`` and ``lam*I - sum z_i >= 0``, and the scalar
    ``lam`` to minimize.  The optimum is the factorization value
    ``inf ||sum a_i a_i*||^(1/2) ||sum b_i* b_i||^(1/2)`` over all
    decompositions ``x_i = a_i b_i``.
    """
    k = t.k
    n = t.n
    eye = np.eye(k)
    zero = np.zeros((k, k))
    p_top = np.concatenate([eye, zero], axis=1)
    p_bot = np.concatenate([zero, eye], axis=1)
    q_left = p_top.T
    q_right = p_bot.T
    blocks = tuple((f"T{i}", 2 * k) for i in range(n)) + (("M1", k), ("M2", k))
    constraints = []
    for i, x in enumerate(t.items):
        constraints.append(MatrixEquation(
            terms=(BlockTerm(f"T{i}", p_bot, q_left),),
            rhs=np.asarray(x), hermitian=False))
    sum_tl = tuple(BlockTerm(f"T{i}", p_top, q_left) for i in range(n))
    sum_br = tuple(BlockTerm(f"T{i}", p_bot, q_right) for i in range(n))
    constraints.append(MatrixEquation(
        terms=(BlockTerm("M1", eye, eye),) + sum_tl + (ScalarTerm("lam", -eye),),
        rhs=np.zeros((k, k)), hermitian=True))
    constraints.append(MatrixEquation(
        terms=(BlockTerm("M2", eye, eye),) + sum_br + (ScalarTerm("lam", -eye),),
        rhs=np.zeros((k, k)), hermitian=True))
    return LmiProgram(psd_blocks=blocks, scalar_vars=("lam",),
                      constraints=tuple(constraints),
                      objective=Objective(scalar={"lam": 1.0}))


def assemble_choi_program(span, target) -> LmiProgram:
    """Feasibility program for a unital CP map with prescribed generator images.

    ``span`` provides unitaries ``u_i`` in M_k, ``target`` their images in
    M_m.  The single PSD variable is the Choi matrix ``C`` of a map
    ``M_k -> M_m`` (block layout ``C[(i,a),(j,b)] = Phi(e_ij)[a,b]``),
    constrained by ``Phi_C(u_i) = target.images[i]`` and ``Phi_C(1) = I``.
    """
    k = int(span.k)
    m = int(target.m)
    us = [matkit.as_cmatrix(u, f"span unitary {i}") for i, u in enumerate(span.unitaries)]
    images = [matkit.as_cmatrix(B, f"target image {i}") for i, B in enumerate(target.images)]
    if len(us) != len(images):
        raise InputError("span and target must list the same number of generators",
                         code="E_DIM")
    for i, (u, B) in enumerate(zip(us, images)):
        if u.shape != (k, k):
            raise InputError(f"span unitary {i} has shape {u.shape}, expected ({k},{k})",
                             code="E_DIM")
        if B.shape != (m, m):
            raise InputError(f"target image {i} has shape {B.shape}, expected ({m},{m})",
                             code="E_DIM")
    eye_m = np.eye(m)
    selectors = []
    for i in range(k):
        e = np.zeros((1, k))
        e[0, i] = 1.0
        selectors.append(np.kron(e, eye_m))  # m x km picking the i-th row block

    def phi_terms(u):
        terms = []
        for i in range(k):
            for j in range(k):
                cij = complex(u[i, j])
                if cij == 0:
                    continue
                terms.append(BlockTerm("C", cij * selectors[i], selectors[j].conj().T))
        return tuple(terms)

    constraints = [MatrixEquation(terms=phi_terms(np.eye(k)), rhs=eye_m, hermitian=True)]
    for u, B in zip(us, images):
        herm_u = np.max(np.abs(u - u.conj().T)) <= 1e-12 * (1 + np.max(np.abs(u)))
        herm_b = np.max(np.abs(B - B.conj().T)) <= 1e-12 * (1 + np.max(np.abs(B)))
        constraints.append(MatrixEquation(terms=phi_terms(u), rhs=np.asarray(B),
                                          hermitian=bool(herm_u and herm_b)))
    return LmiProgram(psd_blocks=(("C", k * m),), scalar_vars=(),
                      constraints=tuple(constraints), objective=Objective())
