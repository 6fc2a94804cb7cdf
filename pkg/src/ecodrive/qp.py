"""Primal-dual interior-point solver for banded convex quadratic programs.

Solves  min 1/2 x'Hx + g'x  s.t.  Ax = b,  Gx <= h  with a Mehrotra
predictor-corrector iteration. The reduced KKT system

    [H + G' diag(mu/s) G + dp I,  A' ]
    [A,                          -dd I]

is reordered once with reverse Cuthill-McKee and factorised as a banded
matrix, so the per-iteration cost is linear in the horizon length for the
stage-structured problems assembled by the OCP builder. Problem data is
equilibrated (Ruiz scaling) before iterating; reported residuals are measured
on the original data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import SolverError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

# static primal/dual regularisation of the augmented system; small enough
# that the equality-residual floor delta * |dual| stays below tol_primal
_DELTA_P = 1e-13
_DELTA_D = 1e-13


@dataclass
class QpSolution:
    """Primal/dual answer with KKT certificates.

    residuals holds raw infinity norms (stationarity, primal equality,
    primal inequality violation, complementarity) on the original problem
    data; rel_residuals holds the scaled measures used for termination.
    status == "optimal" guarantees every rel residual is at or below the
    requested tolerance and all inequality duals are nonnegative.
    """

    x: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    objective: float
    status: str
    iterations: int
    residuals: dict = field(default_factory=dict)
    rel_residuals: dict = field(default_factory=dict)


def kkt_residuals(problem, x, nu=None, mu=None):
    """Raw KKT residual norms of (x, nu, mu) for the given problem.

    Returns (stationarity, primal_eq, primal_ineq, complementarity) as
    infinity norms; dual vectors default to zero.
    """
    H, g, A, b, G, h = _problem_arrays(problem)
    nu = np.zeros(b.size) if nu is None else np.asarray(nu, float)
    mu = np.zeros(h.size) if mu is None else np.asarray(mu, float)
    r_stat = H @ x + g
    if b.size:
        r_stat = r_stat + A.T @ nu
    if h.size:
        r_stat = r_stat + G.T @ mu
    r_eq = A @ x - b if b.size else np.zeros(0)
    gap = G @ x - h if h.size else np.zeros(0)
    return (_inf(r_stat), _inf(r_eq), _inf(np.maximum(gap, 0.0)), _inf(mu * gap))


def solve(problem, warm_start=None, tol=1e-8, tol_primal=1e-9, max_iter=100) -> QpSolution:
    """Solve a convex QP; see module docstring for the method.

    warm_start may carry (x, nu, mu) from a related problem; slacks are
    clipped away from the boundary to restore strict interiority. tol bounds
    the relative stationarity/complementarity residuals; tol_primal the
    (tighter) relative primal residuals, so returned iterates violate
    constraints by at most ~tol_primal times the data scale.
    """
    H, g, A, b, G, h = _problem_arrays(problem)
    n = g.size
    m_eq = b.size
    m_in = h.size
    obj_const = float(getattr(problem, "obj_const", 0.0))

    scale = _RuizScaling.compute(H, g, A, G, b, h)
    Hs, gs = scale.cost(H, g)
    As, bs = scale.eq(A, b)
    Gs, hs = scale.ineq(G, h)

    if m_in == 0:
        return _solve_equality_only(problem, H, g, A, b, Hs, gs, As, bs, scale, obj_const)

    kkt = _BandedKkt(Hs, As, Gs)

    # starting point; warm primal is scaled in and re-centred: slacks pushed
    # strictly inside and duals chosen so the pairwise products are uniform
    if warm_start is not None:
        x = np.asarray(warm_start[0], float) / scale.d
        nu = (scale.c * np.asarray(warm_start[1], float) / scale.ea
              if warm_start[1] is not None and m_eq else np.zeros(m_eq))
        s = np.maximum(hs - Gs @ x, 0.05)
        if warm_start[2] is not None:
            mu = np.maximum(scale.c * np.asarray(warm_start[2], float) / scale.eg, 1e-6)
        else:
            mu = np.clip(0.05 / s, 1e-4, 1e2)
    else:
        x = np.zeros(n)
        nu = np.zeros(m_eq)
        s = np.maximum(hs - Gs @ x, 1.0)
        mu = np.ones(m_in)

    status = MAX_ITER
    iterations = 0
    best = None          # (score, x, nu, mu, rel)
    stall = 0
    for it in range(max_iter):
        iterations = it
        r_d = Hs @ x + gs + Gs.T @ mu
        if m_eq:
            r_d = r_d + As.T @ nu
        r_p = As @ x - bs if m_eq else np.zeros(0)
        r_g = Gs @ x + s - hs
        gap = float(s @ mu) / m_in

        rel = _relative_residuals(Hs, gs, As, bs, Gs, hs, x, nu, mu, s, gap)
        log.debug("qp iter %d gap=%.3e stat=%.3e eq=%.3e ineq=%.3e", it, gap,
                  rel["stationarity"], rel["primal_eq"], rel["primal_ineq"])
        score = max(rel["stationarity"] / tol, rel["complementarity"] / tol,
                    rel["primal_eq"] / tol_primal, rel["primal_ineq"] / tol_primal)
        if best is None or score < best[0]:
            best = (score, x.copy(), nu.copy(), mu.copy(), dict(rel))
            stall = 0
        else:
            stall += 1
        if score <= 1.0:
            status = OPTIMAL
            break
        if _certifies_infeasible(As, bs, Gs, hs, nu, mu):
            status = INFEASIBLE
            break
        if stall >= 8:
            break  # numerically stagnant; fall back to the best iterate

        w = mu / s
        ab = kkt.assemble(w)

        # predictor
        rc = -s * mu
        rhs = np.concatenate([-r_d - Gs.T @ ((rc + mu * r_g) / s), -r_p])
        dxn = kkt.solve(ab, rhs)
        dx, dnu_aff = dxn[:n], dxn[n:]
        ds_aff = -r_g - Gs @ dx
        dmu_aff = (rc - mu * ds_aff) / s
        a_p = _step_len(s, ds_aff)
        a_d = _step_len(mu, dmu_aff)
        gap_aff = float((s + a_p * ds_aff) @ (mu + a_d * dmu_aff)) / m_in
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3

        # corrector
        rc = -s * mu - ds_aff * dmu_aff + sigma * gap
        rhs = np.concatenate([-r_d - Gs.T @ ((rc + mu * r_g) / s), -r_p])
        dxn = kkt.solve(ab, rhs)
        dx, dnu = dxn[:n], dxn[n:]
        ds = -r_g - Gs @ dx
        dmu = (rc - mu * ds) / s

        frac = 0.99 if gap > 1e-6 else 0.999
        a_p = min(1.0, frac * _step_len(s, ds))
        a_d = min(1.0, frac * _step_len(mu, dmu))
        x = x + a_p * dx
        s = s + a_p * ds
        nu = nu + a_d * dnu
        mu = mu + a_d * dmu

    if status != INFEASIBLE and best is not None and best[0] <= 1.0:
        status = OPTIMAL
        _, x, nu, mu, rel = best
    x_out = scale.d * x
    nu_out = scale.ea * nu / scale.c if m_eq else np.zeros(0)
    mu_out = scale.eg * mu / scale.c
    raw = kkt_residuals(problem, x_out, nu_out, mu_out)
    objective = float(0.5 * x_out @ (H @ x_out) + g @ x_out) + obj_const
    return QpSolution(
        x=x_out, nu=nu_out, mu=mu_out, objective=objective, status=status,
        iterations=iterations,
        residuals={"stationarity": raw[0], "primal_eq": raw[1],
                   "primal_ineq": raw[2], "complementarity": raw[3]},
        rel_residuals=rel)


def _solve_equality_only(problem, H, g, A, b, Hs, gs, As, bs, scale, obj_const):
    n = gs.size
    m_eq = bs.size
    kkt = _BandedKkt(Hs, As, sp.csr_matrix((0, n)))
    ab = kkt.assemble(np.zeros(0))
    sol = kkt.solve(ab, np.concatenate([-gs, bs]))
    x = scale.d * sol[:n]
    nu = scale.ea * sol[n:] / scale.c if m_eq else np.zeros(0)
    raw = kkt_residuals(problem, x, nu, np.zeros(0))
    objective = float(0.5 * x @ (H @ x) + g @ x) + obj_const
    return QpSolution(x=x, nu=nu, mu=np.zeros(0), objective=objective,
                      status=OPTIMAL, iterations=1,
                      residuals={"stationarity": raw[0], "primal_eq": raw[1],
                                 "primal_ineq": 0.0, "complementarity": 0.0},
                      rel_residuals={"stationarity": raw[0], "primal_eq": raw[1],
                                     "primal_ineq": 0.0, "complementarity": 0.0})


def _problem_arrays(problem):
    H = sp.csr_matrix(problem.H)
    g = np.asarray(problem.g, float).ravel()
    n = g.size
    A = sp.csr_matrix(getattr(problem, "A", None) if getattr(problem, "A", None) is not None
                      else sp.csr_matrix((0, n)))
    b = np.asarray(getattr(problem, "b", np.zeros(0)), float).ravel()
    G = sp.csr_matrix(getattr(problem, "G", None) if getattr(problem, "G", None) is not None
                      else sp.csr_matrix((0, n)))
    h = np.asarray(getattr(problem, "h", np.zeros(0)), float).ravel()
    if A.shape != (b.size, n) or G.shape != (h.size, n):
        raise SolverError("inconsistent QP dimensions")
    return H, g, A, b, G, h


def _inf(v):
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _step_len(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _relative_residuals(Hs, gs, As, bs, Gs, hs, x, nu, mu, s, gap):
    hx = Hs @ x
    atn = As.T @ nu if bs.size else 0.0
    gtm = Gs.T @ mu
    r_d = hx + gs + gtm + (atn if bs.size else 0.0)
    sig_d = max(1.0, _inf(hx), _inf(gs), _inf(gtm), _inf(atn) if bs.size else 0.0)
    ax = As @ x if bs.size else np.zeros(0)
    gx = Gs @ x
    obj = abs(0.5 * float(x @ hx) + float(gs @ x))
    return {
        "stationarity": _inf(r_d) / sig_d,
        "primal_eq": _inf(ax - bs) / max(1.0, _inf(ax), _inf(bs)) if bs.size else 0.0,
        "primal_ineq": _inf(np.maximum(gx - hs, 0.0)) / max(1.0, _inf(gx), _inf(hs)),
        # total duality gap, so tol bounds the relative objective error
        "complementarity": gap * mu.size / max(1.0, obj),
    }


def _certifies_infeasible(As, bs, Gs, hs, nu, mu):
    """Farkas-style primal infeasibility test on the normalised duals."""
    norm = max(_inf(nu), _inf(mu))
    if norm < 1e8:
        return False
    nu_n = nu / norm
    mu_n = mu / norm
    lhs = Gs.T @ mu_n + (As.T @ nu_n if bs.size else 0.0)
    val = float(hs @ mu_n) + (float(bs @ nu_n) if bs.size else 0.0)
    return _inf(lhs) < 1e-10 and val < -1e-5


class _RuizScaling:
    """Equilibration of the QP data.

    Variable scales come from single-entry rows (boxes, pinned states): a row
    c x_v <= h reveals the magnitude |h/c| of x_v, information that pure
    matrix equilibration cannot recover. With variables at natural magnitude,
    one max-norm pass over the constraint rows brings coefficients and right
    hand sides to order one simultaneously; the cost is normalised by a
    single scalar.
    """

    def __init__(self, d, ea, eg, c):
        self.d = d
        self.ea = ea
        self.eg = eg
        self.c = c

    @classmethod
    def compute(cls, H, g, A, G, b=None, h=None, clip=1e10):
        n = g.size
        d = cls._magnitude_hints(n, A, b, G, h)
        ea = np.ones(A.shape[0])
        eg = np.ones(G.shape[0])
        if ea.size:
            ra = _row_max(abs(A).multiply(d[None, :]).tocsr())
            ea = 1.0 / np.clip(ra, 1.0 / clip, clip)
        if eg.size:
            rg = _row_max(abs(G).multiply(d[None, :]).tocsr())
            eg = 1.0 / np.clip(rg, 1.0 / clip, clip)
        hnorm = _col_max(abs(sp.diags(d) @ H @ sp.diags(d)).tocsc())
        gnorm = _inf(d * g)
        c = 1.0 / np.clip(max(np.max(hnorm) if hnorm.size else 0.0, gnorm), 1e-10, 1e10)
        return cls(d=d, ea=ea, eg=eg, c=float(c))

    @staticmethod
    def _magnitude_hints(n, A, b, G, h):
        d = np.zeros(n)
        for M, rhs in ((A, b), (G, h)):
            if rhs is None or M.shape[0] == 0:
                continue
            Mr = M.tocsr()
            single = np.flatnonzero(np.diff(Mr.indptr) == 1)
            if single.size == 0:
                continue
            pos = Mr.indptr[single]
            cols = Mr.indices[pos]
            coef = np.abs(Mr.data[pos])
            ok = coef > 0.0
            np.maximum.at(d, cols[ok], np.abs(rhs[single][ok]) / coef[ok])
        d[d == 0.0] = 1.0
        return np.clip(d, 1e-8, 1e12)

    def cost(self, H, g):
        D = sp.diags(self.d)
        return (self.c * (D @ H @ D)).tocsr(), self.c * (self.d * g)

    def eq(self, A, b):
        return (sp.diags(self.ea) @ A @ sp.diags(self.d)).tocsr(), self.ea * b

    def ineq(self, G, h):
        return (sp.diags(self.eg) @ G @ sp.diags(self.d)).tocsr(), self.eg * h


def _col_max(Mcsc):
    out = np.zeros(Mcsc.shape[1])
    if Mcsc.nnz:
        out = np.maximum.reduceat(
            np.concatenate([Mcsc.data, [0.0]]),
            np.minimum(Mcsc.indptr[:-1], Mcsc.nnz - 1))
        out[np.diff(Mcsc.indptr) == 0] = 0.0
    return out


def _row_max(Mcsr):
    out = np.zeros(Mcsr.shape[0])
    if Mcsr.nnz:
        out = np.maximum.reduceat(
            np.concatenate([Mcsr.data, [0.0]]),
            np.minimum(Mcsr.indptr[:-1], Mcsr.nnz - 1))
        out[np.diff(Mcsr.indptr) == 0] = 0.0
    return out


class _BandedKkt:
    """Banded storage and factorisation of the reduced KKT matrix.

    The sparsity pattern is fixed across interior-point iterations; only the
    values that multiply the barrier weights change. Triplets are therefore
    precomputed once (constant part and per-inequality-row products G_li G_lj)
    and each assemble() is a single bincount into LAPACK banded storage.
    """

    def __init__(self, Hs, As, Gs):
        n = Hs.shape[0]
        m_eq = As.shape[0]
        self.n = n
        self.dim = n + m_eq

        Hc = sp.coo_matrix(0.5 * (Hs + Hs.T))  # defensive symmetrisation
        rows = [Hc.row, np.arange(n)]
        cols = [Hc.col, np.arange(n)]
        vals = [Hc.data, np.full(n, _DELTA_P)]
        if m_eq:
            Ac = sp.coo_matrix(As)
            rows += [Ac.row + n, Ac.col, np.arange(n, self.dim)]
            cols += [Ac.col, Ac.row + n, np.arange(n, self.dim)]
            vals += [Ac.data, Ac.data, np.full(m_eq, -_DELTA_D)]
        const_r = np.concatenate(rows)
        const_c = np.concatenate(cols)
        self._const_v = np.concatenate(vals)

        # products G_li G_lj for every within-row index pair of G; rows with
        # one or two entries (all rows the OCP builder emits) are vectorised
        Gc = Gs.tocsr()
        indptr, indices, data = Gc.indptr, Gc.indices, Gc.data
        counts = np.diff(indptr)
        pr, pc, pv, pw = [], [], [], []
        r1 = np.flatnonzero(counts == 1)
        if r1.size:
            lo = indptr[r1]
            pr.append(indices[lo])
            pc.append(indices[lo])
            pv.append(data[lo] * data[lo])
            pw.append(r1)
        r2 = np.flatnonzero(counts == 2)
        if r2.size:
            lo = indptr[r2]
            ia, ib = indices[lo], indices[lo + 1]
            va, vb = data[lo], data[lo + 1]
            for ci, cj, vv in ((ia, ia, va * va), (ia, ib, va * vb),
                               (ib, ia, vb * va), (ib, ib, vb * vb)):
                pr.append(ci)
                pc.append(cj)
                pv.append(vv)
                pw.append(r2)
        for l in np.flatnonzero(counts >= 3):
            idx = indices[indptr[l]:indptr[l + 1]]
            val = data[indptr[l]:indptr[l + 1]]
            ii, jj = np.meshgrid(np.arange(idx.size), np.arange(idx.size), indexing="ij")
            pr.append(idx[ii.ravel()])
            pc.append(idx[jj.ravel()])
            pv.append((val[ii] * val[jj]).ravel())
            pw.append(np.full(idx.size ** 2, l))
        self._w_r = np.concatenate(pr).astype(np.int64) if pr else np.zeros(0, np.int64)
        self._w_c = np.concatenate(pc).astype(np.int64) if pc else np.zeros(0, np.int64)
        self._w_v = np.concatenate(pv).astype(float) if pv else np.zeros(0)
        self._w_l = np.concatenate(pw).astype(np.int64) if pw else np.zeros(0, np.int64)

        pattern = sp.coo_matrix(
            (np.ones(const_r.size + self._w_r.size),
             (np.concatenate([const_r, self._w_r]),
              np.concatenate([const_c, self._w_c]))),
            shape=(self.dim, self.dim)).tocsr()
        perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True))
        invp = np.empty(self.dim, dtype=np.int64)
        invp[perm] = np.arange(self.dim)
        self.perm = perm

        pi_c = invp[const_r]
        pj_c = invp[const_c]
        pi_w = invp[self._w_r]
        pj_w = invp[self._w_c]
        self.bw = int(max(np.max(np.abs(pi_c - pj_c)) if pi_c.size else 0,
                          np.max(np.abs(pi_w - pj_w)) if pi_w.size else 0))
        self._flat_const = (self.bw + pi_c - pj_c) * self.dim + pj_c
        self._flat_w = (self.bw + pi_w - pj_w) * self.dim + pj_w
        self._ab_size = (2 * self.bw + 1) * self.dim

    def assemble(self, w):
        vals = np.concatenate([self._const_v, self._w_v * w[self._w_l]])
        idx = np.concatenate([self._flat_const, self._flat_w])
        ab = np.bincount(idx, weights=vals, minlength=self._ab_size)
        return ab.reshape(2 * self.bw + 1, self.dim)

    def solve(self, ab, rhs):
        out = np.empty_like(rhs)
        try:
            sol = solve_banded((self.bw, self.bw), ab, rhs[self.perm],
                               overwrite_ab=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"banded KKT factorisation failed: {exc}") from exc
        out[self.perm] = sol
        return out
