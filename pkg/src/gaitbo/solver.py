"""Gauss-Newton SQP with an augmented-Lagrangian treatment of inequalities.

Each inner iteration linearizes the equality constraints exactly and solves
the regularized KKT system

    [B   JE^T] [step]   [-grad]
    [JE  -eps] [ nu ] = [-ce  ]

where ``grad`` and ``B`` are the gradient and Gauss-Newton Hessian of

    phi = ||r_effort||^2 + rho/2 * ||max(0, ci + lam_i / rho)||^2.

Steps are globalized with a backtracking line search on the exact penalty
``phi + pi * ||ce||_1``. The outer loop updates the inequality multipliers
and the penalty ``rho`` until the feasibility tolerance is met or the
iteration caps run out.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .collocation import LAM, NG, NV, U, NlpProblem, NlpSolution, SolverConfig

log = logging.getLogger(__name__)

KKT_EPS = 1e-14
HESS_REG = 1e-8
PROX_INIT = 1e-2
REG_MAX = 1e4
STALL_WINDOW = 5
STALL_RTOL = 1e-7


class _Evaluator:
    """Evaluates residuals and sparse Jacobians in scaled variables."""

    def __init__(self, problem: NlpProblem):
        self.problem = problem
        N = problem.n_nodes
        scale = np.ones((N, NV))
        scale[:, U] = problem.params.torque_limit
        scale[:, LAM] = problem.params.weight
        self.mask = problem.variable_mask.ravel()
        self.scale = scale.ravel()[self.mask]
        self.cols = np.flatnonzero(self.mask)
        self.n = len(self.cols)
        is_u = np.zeros((N, NV), dtype=bool)
        is_u[:, U] = True
        u_cols = np.flatnonzero(is_u.ravel()[self.mask])
        # effort residual sqrt(w_i) * u / u_lim is linear in the scaled torques
        weight = np.broadcast_to(problem.quadrature_weights[:, None], (N, NV)).ravel()
        w = np.sqrt(weight[self.cols[u_cols]])
        self.Jf = sp.csr_matrix((w,
                                 (np.arange(len(u_cols)), u_cols)), shape=(len(u_cols), self.n))
        self.JfTJf = (self.Jf.T @ self.Jf).tocsc()
        self.block_index = np.arange(N)
        self.block_ptr = np.arange(N + 1)
        select = sp.csr_matrix((self.scale, (self.cols, np.arange(self.n))),
                               shape=(N * NV, self.n))
        self.select = select

    def nodes(self, z):
        V = np.zeros(self.problem.n_nodes * NV)
        V[self.cols] = z * self.scale
        return V.reshape(self.problem.n_nodes, NV)

    def values(self, z):
        with np.errstate(all="ignore"):
            ce, ci = self.problem.evaluate(self.nodes(z))
        return self.Jf @ z, ce, ci

    def jacobians(self, z):
        prob = self.problem
        with np.errstate(all="ignore"):
            G, dG = prob.feature_jacobian(self.nodes(z))
        D = sp.bsr_matrix((dG, self.block_index, self.block_ptr),
                          shape=(prob.n_nodes * NG, prob.n_nodes * NV))
        DS = (D @ self.select).tocsr()
        G = G.reshape(-1)
        ce = prob.eq_map @ G + prob.eq_offset
        ci = prob.ineq_map @ G + prob.ineq_offset
        return ce, ci, (prob.eq_map @ DS).tocsr(), (prob.ineq_map @ DS).tocsr()


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def _violation(ce, ci):
    return float(max(np.max(np.abs(ce), initial=0.0), np.max(ci, initial=0.0)))


def _phi(rf, ci, lam_i, rho):
    shifted = np.maximum(0.0, ci + lam_i / rho)
    return float(rf @ rf + 0.5 * rho * (shifted @ shifted))


def gauss_newton_sqp(problem: NlpProblem, V0: np.ndarray, config: SolverConfig) -> NlpSolution:
    ev = _Evaluator(problem)
    z = V0.ravel()[ev.mask] / ev.scale
    rf, ce, ci = ev.values(z)
    if not _finite(ce, ci):
        return _finish(problem, ev, z, 0, "non-finite initial guess")

    lam_i = np.zeros_like(ci)
    rho = config.rho_init
    penalty = 1.0
    iterations = 0
    viol_i = np.max(ci, initial=0.0)
    message = "iteration limit"

    for outer in range(config.max_outer):
        budget = min(config.max_inner, config.max_iterations - iterations)
        if budget <= 0:
            break
        z, n_it, status, penalty = _inner(ev, z, lam_i, rho, penalty, config, budget,
                                          step_tol=max(1e-3 * 0.1**outer, 1e-8))
        iterations += n_it
        rf, ce, ci = ev.values(z)
        if not _finite(ce, ci):
            message = "diverged"
            break
        log.debug("outer %d: rho=%.1e f=%.5f eq=%.2e ineq=%.2e inner=%d (%s)", outer, rho, rf @ rf,
                  np.max(np.abs(ce), initial=0.0), np.max(ci, initial=0.0), n_it, status)
        if status == "failed":
            message = "line search failed"
            break
        new_viol_i = np.max(ci, initial=0.0)
        if _violation(ce, ci) <= config.feas_tol:
            message = "converged"
            break
        lam_i = np.maximum(0.0, lam_i + rho * ci)
        if new_viol_i > 0.25 * viol_i:
            rho = min(10.0 * rho, config.rho_max)
        viol_i = new_viol_i

    return _finish(problem, ev, z, iterations, message)


def _inner(ev: _Evaluator, z, lam_i, rho, penalty, config: SolverConfig, budget: int,
           step_tol: float):
    """SQP iterations at fixed (lam_i, rho). Returns (z, its, status, penalty)."""
    n = ev.n
    reg = PROX_INIT
    history = []
    it = 0
    while it < budget:
        it += 1
        ce, ci, JE, JI = ev.jacobians(z)
        rf = ev.Jf @ z
        if not _finite(ce, ci, JE.data, JI.data):
            return z, it, "failed", penalty
        shifted = ci + lam_i / rho
        active = shifted > 0
        JIa = JI[active]
        grad = 2.0 * (ev.Jf.T @ rf) + rho * (JIa.T @ shifted[active])
        B0 = (2.0 * ev.JfTJf + rho * (JIa.T @ JIa)).tocsc()
        feas = np.max(np.abs(ce), initial=0.0)
        merit0 = None

        accepted = False
        while not accepted and reg <= REG_MAX:
            step, nu_new, lu = _kkt_step(B0, JE, grad, ce, reg)
            if step is None:
                reg = max(reg * 100.0, 1e-6)
                continue
            if feas <= 0.1 * config.feas_tol and np.max(np.abs(step)) <= step_tol:
                return z, it, "stationary", penalty
            penalty = max(penalty, 1.1 * np.max(np.abs(nu_new), initial=0.0))
            merit0 = _phi(rf, ci, lam_i, rho) + penalty * np.sum(np.abs(ce))
            slope = grad @ step - penalty * np.sum(np.abs(ce))
            if slope > 0:
                reg = max(reg * 100.0, 1e-6)
                continue
            z_new, merit1, alpha = _line_search(ev, z, step, lu, n, merit0, slope, lam_i, rho, penalty)
            if z_new is None:
                reg = max(reg * 100.0, 1e-6)
                continue
            accepted = True
        if not accepted:
            status = "stalled" if feas <= 0.1 * config.feas_tol else "failed"
            return z, it, status, penalty

        log.debug("it %d alpha=%.3g reg=%.1e eq=%.2e dm=%.2e", it, alpha, reg, feas, merit0 - merit1)
        z = z_new
        history.append(merit1)
        if feas <= 0.1 * config.feas_tol and len(history) > STALL_WINDOW:
            drop = history[-STALL_WINDOW - 1] - merit1
            if drop <= STALL_RTOL * max(1.0, abs(merit1)):
                return z, it, "stationary", penalty
        # the proximal weight acts as a trust region
        if alpha >= 0.5:
            reg = max(HESS_REG, reg * 0.3)
        elif alpha < 0.1:
            reg = min(reg * 10.0, REG_MAX)
    return z, it, "iteration limit", penalty


def _kkt_step(B0, JE, grad, ce, reg):
    n, m = B0.shape[0], JE.shape[0]
    B = B0 + reg * sp.identity(n, format="csc")
    K = sp.bmat([[B, JE.T], [JE, -KKT_EPS * sp.identity(m)]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError:
        return None, None, None
    sol = lu.solve(np.concatenate([-grad, -ce]))
    if not _finite(sol):
        return None, None, None
    return sol[:n], sol[n:], lu


def _line_search(ev, z, step, lu, n, merit0, slope, lam_i, rho, penalty):
    def merit_at(x):
        rf, ce, ci = ev.values(x)
        if not _finite(ce, ci):
            return np.inf
        return _phi(rf, ci, lam_i, rho) + penalty * np.sum(np.abs(ce))

    z_full = z + step
    m_full = merit_at(z_full)
    if m_full <= merit0 + 1e-4 * slope:
        return z_full, m_full, 1.0
    if np.isfinite(m_full):
        # second-order correction: pull the trial point back onto the
        # linearized constraints using the same factorization
        _, ce_full, _ = ev.values(z_full)
        z_soc = z_full + lu.solve(np.concatenate([np.zeros(n), -ce_full]))[:n]
        m_soc = merit_at(z_soc)
        if m_soc <= merit0 + 1e-4 * slope:
            return z_soc, m_soc, 1.0
    alpha = 0.5
    while alpha > 1e-8:
        z_try = z + alpha * step
        m_try = merit_at(z_try)
        if m_try <= merit0 + 1e-4 * alpha * slope:
            return z_try, m_try, alpha
        alpha *= 0.5
    return None, None, 0.0


def _finish(problem, ev, z, iterations, message):
    V = ev.nodes(z)
    with np.errstate(all="ignore"):
        ce, ci = problem.evaluate(V)
    converged = _finite(ce, ci) and _violation(ce, ci) <= problem.config.feas_tol
    return NlpSolution(problem=problem, nodes=V, objective_value=problem.objective(V),
                       equality_residuals=ce, inequality_values=ci,
                       converged=bool(converged), iterations=int(iterations), message=message)
