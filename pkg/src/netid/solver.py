"""ADMM solver for the reduced identification problem.

The problem  minimize sum_i ||T_i(theta_i) z_i||^2  subject to z = A x + b,
theta = E theta0  is bi-convex: convex in the signals (z, x) for fixed
parameters and convex in the parameters for fixed signals.  Each iteration
minimizes the augmented Lagrangian over (z, x), then over theta, refreshes
theta0 by out-degree averaging of the new theta, and ascends the duals.
Refreshing theta0 from the updated theta keeps E^T mu identically zero, so
the averaging step stays the exact minimizer throughout.

The (z, x) step eliminates z node by node: with K_i = 2 T_i^T T_i + rho I
and X = I - rho K^{-1}, the hidden trajectories solve the reduced system
rho (A^T X A) x = A^T X r with r = lambda - rho b, after which each node
recovers z_i = K_i^{-1} (rho (A x)_i - r_i) locally.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bandsolve import BandedGram
from .errors import DimensionMismatch, SingularSchur, ZeroDegree
from .models import apply_T, apply_T_transpose, build_regressor
from .topology import build_standard_form

__all__ = [
    "SolverConfig",
    "AdmmState",
    "Problem",
    "SolveResult",
    "assemble_problem",
    "update_theta0",
    "update_zx",
    "update_theta",
    "update_duals",
    "stopping_test",
    "adapt_rho",
    "solve",
]

HISTORY_COLUMNS = ("iter", "r_p", "r_d", "eps_p", "eps_d", "rho")


@dataclass
class SolverConfig:
    """Stopping tolerances and penalty schedule.

    ``mu_balance`` and ``tau`` drive the optional residual-balancing penalty
    update: rho is scaled by tau when one residual norm exceeds
    ``mu_balance`` times the other.
    """

    eps_abs: float = 1e-6
    eps_rel: float = 1e-3
    rho0: float = 1.0
    max_iter: int = 5000
    adaptive: bool = False
    mu_balance: float = 10.0
    tau: float = 2.0
    theta0_init: np.ndarray | None = None
    check_gradients: bool = False

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.mu_balance <= 1 or self.tau <= 1:
            raise ValueError("mu_balance and tau must exceed 1")


class _NodeWork:
    """Per-node constants reused across iterations."""

    def __init__(self, idx, model, z_off, z_len, th_lo, th_hi, a_rows, n_samples):
        self.idx = idx
        self.model = model
        self.z_off = z_off
        self.z_len = z_len
        self.th_lo = th_lo
        self.th_hi = th_hi
        self.n_samples = n_samples
        self.a_cols = np.flatnonzero(np.any(a_rows != 0, axis=0))
        self.a_sub = np.ascontiguousarray(a_rows[:, self.a_cols])
        if self.a_cols.size:
            # dense (A_i kron I_N) restricted to this node's hidden columns
            self.m_dense = np.kron(self.a_sub, np.eye(n_samples))
            self.mtm = np.kron(self.a_sub.T @ self.a_sub, np.eye(n_samples))
            self.x_idx = (
                self.a_cols[:, None] * n_samples + np.arange(n_samples)[None, :]
            ).reshape(-1)
        else:
            self.m_dense = None
            self.mtm = None
            self.x_idx = np.zeros(0, dtype=int)

    def mt_apply(self, v):
        """(A_i kron I_N)^T v using the small factor."""
        blocks = v.reshape(self.a_sub.shape[0], self.n_samples, -1)
        out = np.einsum("ca,cnk->ank", self.a_sub, blocks)
        out = out.reshape(self.a_cols.size * self.n_samples, -1)
        return out[:, 0] if v.ndim == 1 else out


@dataclass
class Problem:
    """Assembled identification problem: reduced form plus node models."""

    topology: object
    models: list
    tying: object
    standard_form: object
    nodes: list = field(default_factory=list, repr=False)

    @property
    def n_samples(self):
        return self.standard_form.n_samples

    @property
    def q(self):
        return self.tying.q

    def theta_slice(self, i):
        return self.nodes[i].th_lo, self.nodes[i].th_hi

    def z_block(self, z, i):
        nd = self.nodes[i]
        return z[nd.z_off : nd.z_off + nd.z_len]

    def apply_a_nodes(self, x):
        """A @ x evaluated per node block, matching the arithmetic of the
        coordinator/worker execution exactly."""
        out = np.zeros(self.standard_form.b.size)
        for nd in self.nodes:
            if nd.m_dense is not None:
                out[nd.z_off : nd.z_off + nd.z_len] = nd.m_dense @ x[nd.x_idx]
        return out


def assemble_problem(topology, models, tying, y0, u0, n_samples):
    """Build a Problem from measured data.

    ``y0`` and ``u0`` are the measured output/input records, either as
    (channels, N) arrays or channel-major flat vectors.
    """
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    if len(models) != topology.M:
        raise DimensionMismatch("one model per subsystem required")
    if any(p != 1 for p in topology.p):
        raise DimensionMismatch("node models assume scalar outputs per node")
    if sum(m.q for m in models) != tying.q:
        raise DimensionMismatch("tying map rows do not match model dimensions")
    z0 = np.concatenate([y0, u0])
    sf = build_standard_form(topology, z0, n_samples)

    nodes = []
    z_off = 0
    th_off = 0
    row_off = 0
    for i, model in enumerate(models):
        cnt = topology.p[i] + topology.m[i]
        z_len = cnt * n_samples
        a_rows = sf.a_tilde[row_off : row_off + cnt, :]
        nodes.append(
            _NodeWork(i, model, z_off, z_len, th_off, th_off + model.q,
                      a_rows, n_samples)
        )
        z_off += z_len
        th_off += model.q
        row_off += cnt
    return Problem(topology=topology, models=models, tying=tying,
                   standard_form=sf, nodes=nodes)


@dataclass
class AdmmState:
    """Iterates of the solver; ``history`` rows follow HISTORY_COLUMNS."""

    x: np.ndarray
    theta0: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    rho: float
    iteration: int = 0
    history: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


def init_state(problem, cfg):
    """Table-style initialization: signals at the data offset, duals at zero,
    parameters at the user guess with the tying constraint active."""
    sf = problem.standard_form
    r = problem.tying.r
    theta0 = (np.zeros(r) if cfg.theta0_init is None
              else np.asarray(cfg.theta0_init, dtype=float).copy())
    if theta0.size != r:
        raise DimensionMismatch(f"theta0_init must have length {r}")
    return AdmmState(
        x=np.zeros(sf.n_hidden * sf.n_samples),
        theta0=theta0,
        z=sf.b.copy(),
        theta=problem.tying.gather(theta0),
        lam=np.zeros(sf.b.size),
        mu=np.zeros(problem.tying.q),
        rho=cfg.rho0,
    )


def update_theta0(state, tying):
    """Out-degree averaging: theta0_j = mean of the node components tied
    to j; the closed-form solution of E^T E theta0 = E^T theta."""
    if np.any(tying.out_degrees == 0):
        raise ZeroDegree("a global parameter component is tied to nothing")
    return (tying.E.T @ state.theta) / tying.out_degrees


def update_zx(state, problem):
    """Joint signal update: Schur elimination over the hidden trajectories,
    then independent banded solves per node.  Returns (z, x)."""
    sf = problem.standard_form
    N = sf.n_samples
    rho = state.rho
    rvec = state.lam - rho * sf.b
    n_hidden = sf.n_hidden

    solves = []
    if n_hidden:
        schur = np.zeros((n_hidden * N, n_hidden * N))
        rhs = np.zeros(n_hidden * N)
    for nd in problem.nodes:
        theta_i = state.theta[nd.th_lo : nd.th_hi]
        gram = BandedGram(nd.model.channel_coeffs(theta_i), N, rho)
        r_i = rvec[nd.z_off : nd.z_off + nd.z_len]
        if nd.m_dense is not None:
            work = gram.solve(np.column_stack([nd.m_dense, r_i]))
            v_i, w_i = work[:, :-1], work[:, -1]
            xr = nd.mt_apply(np.column_stack([v_i, (r_i - rho * w_i)]))
            schur[np.ix_(nd.x_idx, nd.x_idx)] += nd.mtm - rho * xr[:, :-1]
            rhs[nd.x_idx] += xr[:, -1]
        else:
            v_i, w_i = None, gram.solve(r_i)
        solves.append((nd, v_i, w_i))

    if n_hidden:
        try:
            factor = sla.cho_factor(rho * schur, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSchur(
                "hidden-output system is rank deficient; the hidden signals "
                "are not identifiable from the measurements"
            ) from exc
        x = sla.cho_solve(factor, rhs, check_finite=False)
    else:
        x = np.zeros(0)

    z = np.empty_like(state.z)
    for nd, v_i, w_i in solves:
        if v_i is not None:
            z_i = rho * (v_i @ x[nd.x_idx]) - w_i
        else:
            z_i = -w_i
        z[nd.z_off : nd.z_off + nd.z_len] = z_i
    return z, x


def update_theta(state, problem):
    """Per-node parameter update: the strictly convex proximal regression
    (2 Phi^T Phi + rho I) theta_i = rho tbar_i - mu_i - 2 Phi^T y_i,
    solved in stacked least-squares form for numerical stability."""
    N = problem.n_samples
    rho = state.rho
    theta_bar = problem.tying.gather(state.theta0)
    theta = np.empty_like(state.theta)
    sq2, sqr = np.sqrt(2.0), np.sqrt(rho)
    for nd in problem.nodes:
        z_i = problem.z_block(state.z, nd.idx)
        y_i = z_i[:N]
        phi = build_regressor(nd.model, y_i, z_i[N:])
        w = theta_bar[nd.th_lo : nd.th_hi] - state.mu[nd.th_lo : nd.th_hi] / rho
        lhs = np.vstack([sq2 * phi, sqr * np.eye(nd.model.q)])
        rhs = np.concatenate([-sq2 * y_i, sqr * w])
        theta[nd.th_lo : nd.th_hi] = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return theta


def update_duals(state, problem):
    """Ascent step on both constraint blocks."""
    sf = problem.standard_form
    lam = state.lam + state.rho * (state.z - problem.apply_a_nodes(state.x) - sf.b)
    mu = state.mu + state.rho * (state.theta - problem.tying.gather(state.theta0))
    return lam, mu


def stopping_test(state, problem, cfg, z_prev, theta_prev):
    """Residual-based termination check.

    Primal residual stacks both constraint violations; the dual residual
    tracks the change of (z, theta) mapped through the constraint operators.
    Tolerances mix an absolute floor with a relative part scaled by the
    largest of the constraint-side norms.
    """
    sf = problem.standard_form
    tying = problem.tying
    ax = problem.apply_a_nodes(state.x)
    e_theta0 = tying.gather(state.theta0)
    rz = state.z - ax - sf.b
    rt = state.theta - e_theta0
    r_p = np.sqrt(rz @ rz + rt @ rt)

    rd_x = state.rho * sf.apply_at(z_prev - state.z)
    rd_t = state.rho * (tying.E.T @ (theta_prev - state.theta))
    r_d = np.sqrt(rd_x @ rd_x + rd_t @ rd_t)

    mp_n = state.z.size
    q = state.theta.size
    n_n = state.x.size
    r = state.theta0.size
    lhs_norm = np.sqrt(ax @ ax + e_theta0 @ e_theta0)
    var_norm = np.sqrt(state.z @ state.z + state.theta @ state.theta)
    eps_p = (np.sqrt(mp_n + q) * cfg.eps_abs
             + cfg.eps_rel * max(lhs_norm, var_norm, np.linalg.norm(sf.b)))
    at_lam = sf.apply_at(state.lam)
    et_mu = tying.E.T @ state.mu
    eps_d = (np.sqrt(n_n + r) * cfg.eps_abs
             + cfg.eps_rel * np.sqrt(at_lam @ at_lam + et_mu @ et_mu))
    return {
        "stop": bool(r_p <= eps_p and r_d <= eps_d),
        "r_p": float(r_p),
        "r_d": float(r_d),
        "eps_p": float(eps_p),
        "eps_d": float(eps_d),
    }


def adapt_rho(state, cfg, r_p, r_d):
    """Residual balancing: grow rho when the primal residual dominates,
    shrink it when the dual residual dominates.  Duals are not rescaled."""
    if r_p > cfg.mu_balance * r_d:
        return state.rho * cfg.tau
    if r_d > cfg.mu_balance * r_p:
        return state.rho / cfg.tau
    return state.rho


@dataclass
class SolveResult:
    theta0: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    x: np.ndarray
    iterations: int
    converged: bool
    history: np.ndarray
    diagnostics: list
    wall_time: float


def _gradient_checks(state, problem, phase, out):
    """Record first-order optimality of the phase that just ran."""
    sf = problem.standard_form
    N = problem.n_samples
    if phase == "zx":
        resid = state.z - problem.apply_a_nodes(state.x) - sf.b
        inner = state.lam + state.rho * resid
        g_z = np.empty_like(state.z)
        for nd in problem.nodes:
            z_i = problem.z_block(state.z, nd.idx)
            theta_i = state.theta[nd.th_lo : nd.th_hi]
            e_i = apply_T(nd.model, theta_i, z_i)
            g_z[nd.z_off : nd.z_off + nd.z_len] = (
                2.0 * apply_T_transpose(nd.model, theta_i, e_i)
                + inner[nd.z_off : nd.z_off + nd.z_len]
            )
        g_x = -sf.apply_at(inner)
        rvec = state.lam - state.rho * sf.b
        scale = 1.0 + np.linalg.norm(rvec)
        out["grad_zx"] = float(np.sqrt(g_z @ g_z + g_x @ g_x) / scale)
    elif phase == "theta":
        theta_bar = problem.tying.gather(state.theta0)
        g = np.empty_like(state.theta)
        for nd in problem.nodes:
            z_i = problem.z_block(state.z, nd.idx)
            y_i = z_i[:N]
            phi = build_regressor(nd.model, y_i, z_i[N:])
            th = state.theta[nd.th_lo : nd.th_hi]
            g[nd.th_lo : nd.th_hi] = (
                2.0 * phi.T @ (phi @ th + y_i)
                + state.rho * th
                + state.mu[nd.th_lo : nd.th_hi]
                - state.rho * theta_bar[nd.th_lo : nd.th_hi]
            )
        out["grad_theta"] = float(
            np.linalg.norm(g) / (1.0 + np.linalg.norm(state.theta))
        )
    elif phase == "theta0":
        g = problem.tying.E.T @ (
            state.mu + state.rho * (state.theta - problem.tying.gather(state.theta0))
        )
        denom = max(state.rho * np.linalg.norm(state.theta), 1e-300)
        out["theta0_stat"] = float(np.linalg.norm(g) / denom)
    elif phase == "duals":
        et_mu = problem.tying.E.T @ state.mu
        denom = max(np.linalg.norm(state.mu), 1e-300)
        out["etmu"] = float(np.linalg.norm(et_mu) / denom)


def solve(problem, cfg=None):
    """Run the alternating scheme until the residual test passes.

    Returns the final iterates plus the per-iteration residual history; a
    run that exhausts ``max_iter`` returns ``converged=False`` with the last
    iterate rather than raising.
    """
    cfg = cfg or SolverConfig()
    state = init_state(problem, cfg)
    t_start = time.perf_counter()
    converged = False

    for it in range(1, cfg.max_iter + 1):
        state.iteration = it
        z_prev = state.z.copy()
        theta_prev = state.theta.copy()
        diag = {"iter": it}

        state.z, state.x = update_zx(state, problem)
        if cfg.check_gradients:
            _gradient_checks(state, problem, "zx", diag)
        state.theta = update_theta(state, problem)
        if cfg.check_gradients:
            _gradient_checks(state, problem, "theta", diag)
        state.theta0 = update_theta0(state, problem.tying)
        if cfg.check_gradients:
            _gradient_checks(state, problem, "theta0", diag)
        state.lam, state.mu = update_duals(state, problem)
        if cfg.check_gradients:
            _gradient_checks(state, problem, "duals", diag)
            state.diagnostics.append(diag)

        res = stopping_test(state, problem, cfg, z_prev, theta_prev)
        state.history.append(
            (it, res["r_p"], res["r_d"], res["eps_p"], res["eps_d"], state.rho)
        )
        if res["stop"]:
            converged = True
            break
        if cfg.adaptive:
            state.rho = adapt_rho(state, cfg, res["r_p"], res["r_d"])

    return SolveResult(
        theta0=state.theta0,
        theta=state.theta,
        z=state.z,
        x=state.x,
        iterations=state.iteration,
        converged=converged,
        history=np.array(state.history),
        diagnostics=state.diagnostics,
        wall_time=time.perf_counter() - t_start,
    )
