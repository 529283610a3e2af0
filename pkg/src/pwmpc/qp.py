"""Dense convex QP solver and the 1-norm splitting used by the hot-start programs.

Solves ``min 0.5 x'Hx + g'x  s.t.  A x <= b,  lb <= x <= ub`` for symmetric
positive semidefinite ``H`` (``H = 0`` gives an LP). A Mehrotra
predictor-corrector interior-point method locates the optimal face; an
equality-constrained solve on the identified active set then polishes the
point so complementarity holds to rounding error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class QpStatus(str, enum.Enum):
    SUCCESS = "SUCCESS"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"
    MAX_ITER = "MAX_ITER"


@dataclass
class QpProblem:
    """``min 0.5 x'Hx + g'x`` subject to ``A_ineq x <= b_ineq`` and ``lb <= x <= ub``.

    Infinite entries of ``lb``/``ub`` mean no bound. Set ``check=False`` to
    skip the symmetry/PSD checks for matrices that are PSD by construction.
    """

    H: np.ndarray
    g: np.ndarray
    A_ineq: Optional[np.ndarray] = None
    b_ineq: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    check: bool = True

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        self.H = np.zeros((n, n)) if self.H is None else np.asarray(self.H, dtype=float)
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if self.A_ineq is None:
            self.A_ineq = np.zeros((0, n))
            self.b_ineq = np.zeros(0)
        self.A_ineq = np.atleast_2d(np.asarray(self.A_ineq, dtype=float))
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
        if self.A_ineq.shape[1] != n or self.A_ineq.shape[0] != self.b_ineq.size:
            raise ValueError("inconsistent inequality dimensions")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must match the variable dimension")
        if self.check:
            if not np.allclose(self.H, self.H.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(self.H).max(initial=0.0))):
                raise ValueError("H must be symmetric")
            if n:
                lam_min = np.linalg.eigvalsh(0.5 * (self.H + self.H.T))[0]
                if lam_min < -1e-8 * max(1.0, np.linalg.norm(self.H, 2)):
                    raise ValueError(f"H is not positive semidefinite (min eigenvalue {lam_min:.3g})")

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    status: QpStatus
    z_ineq: np.ndarray
    z_lb: np.ndarray
    z_ub: np.ndarray
    iterations: int = 0
    polished: bool = False
    kkt: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == QpStatus.SUCCESS

    @property
    def active_set(self) -> np.ndarray:
        """Indices of inequality rows with positive multipliers."""
        return np.flatnonzero(self.z_ineq > 0)


def kkt_residuals(p: QpProblem, x, z_ineq, z_lb, z_ub) -> dict:
    """Scaled KKT residuals of a primal-dual point.

    Each entry is dimensionless: stationarity relative to the size of the
    gradient terms, primal feasibility relative to the constraint data,
    complementarity relative to the objective magnitude, and dual sign
    relative to the multiplier size.
    """
    x = np.asarray(x, float)
    Ax = p.A_ineq @ x
    Hx = p.H @ x
    ATz = p.A_ineq.T @ z_ineq
    grad = Hx + p.g + ATz - z_lb + z_ub
    s_scale = max(1.0, np.abs(p.g).max(initial=0), np.abs(Hx).max(initial=0),
                  np.abs(ATz).max(initial=0), np.abs(z_lb).max(initial=0), np.abs(z_ub).max(initial=0))
    fin_l, fin_u = np.isfinite(p.lb), np.isfinite(p.ub)
    slack_a = p.b_ineq - Ax
    slack_l = np.where(fin_l, x - np.where(fin_l, p.lb, 0.0), np.inf)
    slack_u = np.where(fin_u, np.where(fin_u, p.ub, 0.0) - x, np.inf)
    p_scale = max(1.0, np.abs(p.b_ineq).max(initial=0), np.abs(Ax).max(initial=0),
                  np.abs(p.lb[fin_l]).max(initial=0), np.abs(p.ub[fin_u]).max(initial=0))
    primal = max(0.0, -slack_a.min(initial=np.inf), -slack_l.min(initial=np.inf),
                 -slack_u.min(initial=np.inf)) / p_scale
    obj = p.objective(x)
    c_scale = max(1.0, abs(obj), abs(float(p.g @ x)), abs(float(x @ Hx)))
    comp = max(np.abs(z_ineq * slack_a).max(initial=0),
               np.abs(z_lb[fin_l] * slack_l[fin_l]).max(initial=0),
               np.abs(z_ub[fin_u] * slack_u[fin_u]).max(initial=0)) / c_scale
    # Multipliers on absent bounds must vanish.
    stray = max(np.abs(z_lb[~fin_l]).max(initial=0), np.abs(z_ub[~fin_u]).max(initial=0))
    z_all = np.concatenate([z_ineq, z_lb, z_ub])
    dual = max(0.0, -z_all.min(initial=0), stray) / max(1.0, np.abs(z_all).max(initial=0))
    return {"stationarity": float(np.abs(grad).max(initial=0) / s_scale), "primal": float(primal),
            "complementarity": float(comp), "dual": float(dual)}


def kkt_max(res: dict) -> float:
    return max(res.values()) if res else np.inf


class _RowSplit:
    """Inequality matrix with very sparse rows kept in CSR form.

    Rows with at most ``max_nnz`` nonzeros (coupling rows such as
    ``tau + kappa <= T``) would dominate the cost of ``A' W A`` if treated
    densely.
    """

    def __init__(self, A: np.ndarray, max_nnz: int = 4):
        nnz = np.count_nonzero(A, axis=1)
        self.shape = A.shape
        self.dense_rows = np.flatnonzero(nnz > max_nnz)
        self.sparse_rows = np.flatnonzero(nnz <= max_nnz)
        self.D = A[self.dense_rows]
        self.S = sp.csr_matrix(A[self.sparse_rows])
        self.ST = self.S.T.tocsr()
        # Entry pairs of each sparse row, for accumulating A' W A directly.
        n = A.shape[1]
        rows, cols = self.S.nonzero()
        vals = np.asarray(self.S[rows, cols]).ravel()
        same = rows[:, None] == rows[None, :]
        a, b = np.nonzero(same)
        self._pair_row = rows[a]
        self._pair_idx = cols[a] * n + cols[b]
        self._pair_val = vals[a] * vals[b]

    def dot(self, x):
        out = np.empty(self.shape[0])
        out[self.dense_rows] = self.D @ x
        out[self.sparse_rows] = self.S @ x
        return out

    def rdot(self, z):
        return self.D.T @ z[self.dense_rows] + self.ST @ z[self.sparse_rows]

    def gram(self, w):
        """``A' diag(w) A`` as a dense array."""
        out = (self.D.T * w[self.dense_rows]) @ self.D
        if self._pair_idx.size:
            n = self.shape[1]
            ws = w[self.sparse_rows][self._pair_row] * self._pair_val
            out += np.bincount(self._pair_idx, weights=ws, minlength=n * n).reshape(n, n)
        return out


class _Scaled:
    """Objective scaled to unit size, inequality rows to unit infinity norm."""

    def __init__(self, p: QpProblem, obj_scale: Optional[float] = None):
        self.p = p
        if obj_scale is None:
            obj_scale = max(1.0, np.abs(p.H).max(initial=0), np.abs(p.g).max(initial=0))
        self.obj_scale = float(obj_scale)
        self.H = p.H / self.obj_scale
        self.g = p.g / self.obj_scale
        rn = np.abs(p.A_ineq).max(axis=1, initial=0)
        rn[rn == 0] = 1.0
        self.row_scale = rn
        self.A = p.A_ineq / rn[:, None]
        self.Aop = _RowSplit(self.A)
        self.b = p.b_ineq / rn
        self.L = np.flatnonzero(np.isfinite(p.lb))
        self.U = np.flatnonzero(np.isfinite(p.ub))
        self.lb = p.lb[self.L]
        self.ub = p.ub[self.U]

    def unscale(self, zA, zL, zU):
        n = self.p.n
        z_ineq = zA * self.obj_scale / self.row_scale
        z_lb = np.zeros(n)
        z_ub = np.zeros(n)
        z_lb[self.L] = zL * self.obj_scale
        z_ub[self.U] = zU * self.obj_scale
        return z_ineq, z_lb, z_ub


def _ipm(sc: _Scaled, x0, tol, max_iter, reg=1e-11):
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _ipm_loop(sc, x0, tol, max_iter, reg)


def _ipm_loop(sc: _Scaled, x0, tol, max_iter, reg):
    """Mehrotra predictor-corrector on the scaled problem.

    Returns ``(x, zA, zL, zU, sA, sL, sU, iterations, state)`` where ``state``
    is ``"converged"``, ``"max_iter"`` or ``"diverged"``.
    """
    H, g, A, b = sc.H, sc.g, sc.Aop, sc.b
    L, U, lb, ub = sc.L, sc.U, sc.lb, sc.ub
    n = g.size
    mA, mL, mU = b.size, L.size, U.size
    m = mA + mL + mU
    x = np.array(x0, dtype=float)
    # Start inside the box where it is two-sided.
    if mL:
        x[L] = np.maximum(x[L], lb)
    if mU:
        x[U] = np.minimum(x[U], ub)
    sA = np.maximum(b - A.dot(x), 1.0)
    sL = np.maximum(x[L] - lb, 1.0)
    sU = np.maximum(ub - x[U], 1.0)
    zA, zL, zU = np.ones(mA), np.ones(mL), np.ones(mU)
    if m == 0:
        # Unconstrained: one Newton step on a (possibly singular) quadratic.
        Hr = H + reg * np.eye(n)
        x = np.linalg.solve(Hr, -g) if n else x
        state = "converged" if np.abs(H @ x + g).max(initial=0) <= tol else "diverged"
        return x, zA, zL, zU, sA, sL, sU, 1, state

    g_scale = 1.0 + np.abs(g).max(initial=0)
    b_scale = 1.0 + max(np.abs(b).max(initial=0), np.abs(lb).max(initial=0), np.abs(ub).max(initial=0))
    x_cap = 1e10 * (1.0 + np.abs(x).max(initial=0))
    eye_n = np.eye(n)

    def residuals(x, sA, sL, sU, zA, zL, zU):
        rd = H @ x + g + A.rdot(zA)
        if mL:
            rd[L] -= zL
        if mU:
            rd[U] += zU
        rA = A.dot(x) + sA - b
        rL = -x[L] + sL + lb
        rU = x[U] + sU - ub
        return rd, rA, rL, rU

    state = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        rd, rA, rL, rU = residuals(x, sA, sL, sU, zA, zL, zU)
        mu = (sA @ zA + sL @ zL + sU @ zU) / m
        rp = max(np.abs(rA).max(initial=0), np.abs(rL).max(initial=0), np.abs(rU).max(initial=0))
        if (np.abs(rd).max(initial=0) <= tol * g_scale and rp <= tol * b_scale and mu <= tol * 1e-2):
            state = "converged"
            break
        if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0) > x_cap:
            state = "diverged"
            break
        if max(zA.max(initial=0), zL.max(initial=0), zU.max(initial=0)) > 1e14:
            state = "diverged"
            break
        wA, wL, wU = zA / sA, zL / sL, zU / sU
        M = H + A.gram(wA) + reg * eye_n
        if mL:
            M[L, L] += wL
        if mU:
            M[U, U] += wU
        if not np.all(np.isfinite(M)):
            state = "diverged"
            break
        try:
            factor = sla.cho_factor(M, lower=True, check_finite=False)
            solve_M = lambda r: sla.cho_solve(factor, r, check_finite=False)  # noqa: E731
        except (np.linalg.LinAlgError, ValueError):
            lu = sla.lu_factor(M + 1e-9 * np.abs(M).max() * eye_n, check_finite=False)
            solve_M = lambda r: sla.lu_solve(lu, r, check_finite=False)  # noqa: E731

        def direction(cA, cL, cU):
            # Complementarity targets c = s*z - sigma*mu (+ corrector).
            vA = (-cA + zA * rA) / sA
            vL = (-cL + zL * rL) / sL
            vU = (-cU + zU * rU) / sU
            rhs = -rd - A.rdot(vA)
            if mL:
                rhs[L] += vL
            if mU:
                rhs[U] -= vU
            dx = solve_M(rhs)
            Adx = A.dot(dx)
            dsA = -rA - Adx
            dsL = -rL + dx[L]
            dsU = -rU - dx[U]
            dzA = vA + wA * Adx
            dzL = vL - wL * dx[L]
            dzU = vU + wU * dx[U]
            return dx, dsA, dsL, dsU, dzA, dzL, dzU

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        aff = direction(sA * zA, sL * zL, sU * zU)
        dx, dsA, dsL, dsU, dzA, dzL, dzU = aff
        a_p = min(max_step(sA, dsA), max_step(sL, dsL), max_step(sU, dsU))
        a_d = min(max_step(zA, dzA), max_step(zL, dzL), max_step(zU, dzU))
        mu_aff = ((sA + a_p * dsA) @ (zA + a_d * dzA) + (sL + a_p * dsL) @ (zL + a_d * dzL)
                  + (sU + a_p * dsU) @ (zU + a_d * dzU)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        cA = sA * zA + dsA * dzA - sigma * mu
        cL = sL * zL + dsL * dzL - sigma * mu
        cU = sU * zU + dsU * dzU - sigma * mu
        dx, dsA, dsL, dsU, dzA, dzL, dzU = direction(cA, cL, cU)
        a_p = min(max_step(sA, dsA), max_step(sL, dsL), max_step(sU, dsU))
        a_d = min(max_step(zA, dzA), max_step(zL, dzL), max_step(zU, dzU))
        eta = 0.995
        step = eta * min(a_p, a_d)
        x = x + step * dx
        sA, sL, sU = sA + step * dsA, sL + step * dsL, sU + step * dsU
        zA, zL, zU = zA + step * dzA, zL + step * dzL, zU + step * dzU
    return x, zA, zL, zU, sA, sL, sU, it, state


def _polish(p: QpProblem, sc: _Scaled, x, zA, zL, zU, sA, sL, sU, hint=None):
    """Solve the equality QP on the active set guessed from the IPM iterate."""
    n = p.n
    actA = zA > sA
    if hint is not None and hint.size:
        actA[hint] |= sA[hint] < 1e-6
    at_lb = np.zeros(n, dtype=bool)
    at_ub = np.zeros(n, dtype=bool)
    at_lb[sc.L[zL > sL]] = True
    at_ub[sc.U[zU > sU]] = True
    at_ub &= ~at_lb
    fixed = at_lb | at_ub
    free = ~fixed
    xf = np.where(at_lb, p.lb, np.where(at_ub, p.ub, 0.0))
    W = np.flatnonzero(actA)
    Hs, gs = sc.H, sc.g
    AW = sc.A[W]
    bW = sc.b[W]
    Fi = np.flatnonzero(free)
    nf, nw = Fi.size, W.size
    K0 = np.zeros((nf + nw, nf + nw))
    K0[:nf, :nf] = Hs[np.ix_(Fi, Fi)]
    K0[:nf, nf:] = AW[:, Fi].T
    K0[nf:, :nf] = AW[:, Fi]
    rhs = np.concatenate([-gs[Fi] - Hs[np.ix_(Fi, np.flatnonzero(fixed))] @ xf[fixed],
                          bW - AW[:, fixed] @ xf[fixed]])
    delta = 1e-10
    K = K0.copy()
    K[np.arange(nf), np.arange(nf)] += delta
    K[nf + np.arange(nw), nf + np.arange(nw)] -= delta
    try:
        lu = sla.lu_factor(K, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    for _ in range(6):
        r = rhs - K0 @ sol
        if np.abs(r).max(initial=0) < 1e-15 * (1 + np.abs(rhs).max(initial=0)):
            break
        sol = sol + sla.lu_solve(lu, r, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    xp = xf.copy()
    xp[Fi] = sol[:nf]
    zA_p = np.zeros(sc.b.size)
    zA_p[W] = sol[nf:]
    grad = Hs @ xp + gs + sc.A.T @ zA_p
    zL_full = np.where(at_lb, grad, 0.0)
    zU_full = np.where(at_ub, -grad, 0.0)
    z_ineq, _, _ = sc.unscale(zA_p, np.zeros(sc.L.size), np.zeros(sc.U.size))
    z_lb = zL_full * sc.obj_scale
    z_ub = zU_full * sc.obj_scale
    return xp, z_ineq, z_lb, z_ub


def _phase_one(p: QpProblem, tol: float, max_iter: int) -> float:
    """Minimum total violation of the inequality rows (bounds kept hard)."""
    n, m = p.n, p.b_ineq.size
    if m == 0:
        return 0.0
    rn = np.abs(p.A_ineq).max(axis=1, initial=0)
    rn[rn == 0] = 1.0
    A = np.hstack([p.A_ineq / rn[:, None], -np.eye(m)])
    aux = QpProblem(H=np.zeros((n + m, n + m)), g=np.concatenate([np.zeros(n), np.ones(m)]),
                    A_ineq=A, b_ineq=p.b_ineq / rn,
                    lb=np.concatenate([p.lb, np.zeros(m)]), ub=np.concatenate([p.ub, np.full(m, np.inf)]),
                    check=False)
    sc = _Scaled(aux)
    x0 = np.zeros(n + m)
    x0[n:] = np.maximum(aux.b_ineq * -1.0, 0.0) + 1.0
    out = _ipm(sc, x0, tol, max_iter, reg=1e-9)
    return float(np.sum(np.maximum(out[0][n:], 0.0)))


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 200,
             x0=None, active_set=None, obj_scale: Optional[float] = None,
             classify: bool = True) -> QpResult:
    """Solve a convex QP.

    ``active_set`` optionally lists inequality rows expected to be active
    (for example, the previous MPC step's); it seeds the polishing step.
    ``obj_scale`` is the objective unit the interior-point stopping test is
    measured in; by default it is the largest entry of ``H`` and ``g``. Pass
    the natural unit when the objective carries a large constant-like
    quadratic part and only small absolute differences matter. With
    ``classify=False`` a run that does not converge returns ``MAX_ITER``
    without the extra phase-one solve that tells infeasible from unbounded.
    On ``SUCCESS`` every scaled KKT residual is below ``tol``.
    """
    n = p.n
    if np.any(p.lb > p.ub):
        return _failed(p, QpStatus.INFEASIBLE)
    sc = _Scaled(p, obj_scale)
    x_init = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()
    ipm_tol = min(tol, 1e-9)
    x, zA, zL, zU, sA, sL, sU, iters, state = _ipm(sc, x_init, ipm_tol, max_iter)

    if state != "converged" and not classify:
        return _failed(p, QpStatus.MAX_ITER, iters, x)
    if state != "converged":
        # Classify the failure: a positive minimum violation means no
        # feasible point exists; otherwise the objective is unbounded.
        violation = _phase_one(p, 1e-10, max_iter)
        scale = max(1.0, np.abs(p.b_ineq).max(initial=0))
        if violation > 1e-7 * scale:
            return _failed(p, QpStatus.INFEASIBLE, iters)
        if state == "diverged":
            return _failed(p, QpStatus.UNBOUNDED, iters, x)

    z_ineq, z_lb, z_ub = sc.unscale(zA, zL, zU)
    best = (x, z_ineq, z_lb, z_ub)
    best_res = kkt_residuals(p, *best)
    polished = False
    hint = None if active_set is None else np.asarray(active_set, dtype=int)
    cand = _polish(p, sc, x, zA, zL, zU, sA, sL, sU, hint)
    if cand is not None:
        res = kkt_residuals(p, *cand)
        if kkt_max(res) < kkt_max(best_res):
            best, best_res, polished = cand, res, True
    x, z_ineq, z_lb, z_ub = best
    status = QpStatus.SUCCESS if kkt_max(best_res) < tol else QpStatus.MAX_ITER
    return QpResult(x=x, objective=p.objective(x), status=status, z_ineq=z_ineq, z_lb=z_lb,
                    z_ub=z_ub, iterations=iters, polished=polished, kkt=best_res)


def _failed(p: QpProblem, status: QpStatus, iters: int = 0, x=None) -> QpResult:
    n, m = p.n, p.b_ineq.size
    x = np.full(n, np.nan) if x is None else x
    obj = -np.inf if status == QpStatus.UNBOUNDED else np.nan
    return QpResult(x=x, objective=obj, status=status, z_ineq=np.zeros(m), z_lb=np.zeros(n),
                    z_ub=np.zeros(n), iterations=iters)


@dataclass(frozen=True)
class L1Split:
    """Write ``U = U+ - U-`` with ``U+, U- >= 0`` so ``w'|U|`` becomes linear."""

    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.weights.size

    def lift(self, H, g, A=None, b=None, lb=None, ub=None) -> QpProblem:
        """QP in ``[U+; U-]`` equivalent to ``0.5 U'HU + g'U + w'|U|``."""
        m = self.dim
        H = np.zeros((m, m)) if H is None else np.asarray(H, float)
        g = np.zeros(m) if g is None else np.asarray(g, float)
        w = self.weights
        Hs = np.block([[H, -H], [-H, H]])
        gs = np.concatenate([g + w, -g + w])
        As = None if A is None else np.hstack([A, -np.asarray(A, float)])
        lb = np.full(m, -np.inf) if lb is None else np.asarray(lb, float)
        ub = np.full(m, np.inf) if ub is None else np.asarray(ub, float)
        upper = np.concatenate([np.maximum(ub, 0.0), np.maximum(-lb, 0.0)])
        lower = np.zeros(2 * m)
        # A two-sided box that excludes zero cannot be expressed by the split.
        if np.any(lb > 0) or np.any(ub < 0):
            raise ValueError("split_l1 requires lb <= 0 <= ub")
        return QpProblem(H=Hs, g=gs, A_ineq=As, b_ineq=b, lb=lower, ub=upper, check=False)

    def recombine(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        return z[: self.dim] - z[self.dim:]

    def normalize(self, z) -> np.ndarray:
        """Cancel simultaneous positive and negative parts (same ``U``, lower cost)."""
        U = self.recombine(z)
        return np.concatenate([np.maximum(U, 0.0), np.maximum(-U, 0.0)])


def split_l1(weights, dim: Optional[int] = None) -> L1Split:
    """Reformulation mapping for a weighted 1-norm over ``dim`` variables."""
    w = np.asarray(weights, dtype=float).ravel()
    if dim is not None and w.size == 1:
        w = np.full(dim, float(w[0]))
    if dim is not None and w.size != dim:
        raise ValueError(f"expected {dim} weights, got {w.size}")
    if np.any(w < 0):
        raise ValueError("1-norm weights must be nonnegative")
    return L1Split(w)
