"""Coordinator/worker execution of the solver.

One worker owns each node's signals, parameters and duals and performs all
solves that touch them; the coordinator owns the hidden trajectories and the
global parameters and performs the two reductions (the reduced-system solve
for x and the out-degree average for theta0) plus the residual-based
termination and penalty decisions.

Workers are simulated in process and exchange typed messages through a
round-based scheduler with a barrier after every phase.  A worker only ever
receives the hidden-trajectory components appearing in its own coupling rows
and the global parameter components in its own tying edges; the message log
records every payload so tests can audit that locality.  The message schema
is plain arrays and index lists, ready for serialization, but no wire
transport is provided.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .bandsolve import BandedGram
from .errors import MissingContribution, SingularSchur
from .models import build_regressor
from .solver import SolveResult, SolverConfig, init_state

__all__ = [
    "SchurContribution",
    "ThetaContribution",
    "ResidualContribution",
    "Broadcast",
    "NodeWorker",
    "Coordinator",
    "run_distributed",
    "reduce_theta0",
    "audit_locality",
]


@dataclass
class SchurContribution:
    """Reduced-system block of one node, indexed by its hidden columns."""

    node: int
    cols: np.ndarray
    block: np.ndarray
    rhs: np.ndarray


@dataclass
class ThetaContribution:
    """Partial sums for the tied global components plus local degrees."""

    node: int
    indices: np.ndarray
    sums: np.ndarray
    degrees: np.ndarray


@dataclass
class ResidualContribution:
    """Local squared-norm pieces of the residuals and tolerance norms."""

    node: int
    rz_sq: float
    rt_sq: float
    ax_sq: float
    etheta0_sq: float
    z_sq: float
    theta_sq: float
    b_sq: float
    rd_x: np.ndarray
    rd_x_cols: np.ndarray
    rd_t: np.ndarray
    rd_t_idx: np.ndarray
    at_lam: np.ndarray
    at_lam_cols: np.ndarray
    et_mu: np.ndarray
    et_mu_idx: np.ndarray


@dataclass
class Broadcast:
    """Coordinator-to-worker payload; sliced to the worker's neighborhood."""

    node: int
    kind: str
    x_cols: np.ndarray | None = None
    x_slice: np.ndarray | None = None
    theta0_idx: np.ndarray | None = None
    theta0_slice: np.ndarray | None = None
    rho: float | None = None


class NodeWorker:
    """Owns one node's iterates and local data."""

    def __init__(self, work, tying, b_i, n_samples):
        self.work = work  # _NodeWork: model, coupling rows, layout constants
        self.n_samples = n_samples
        self.b = b_i
        edges = tying.edges[work.idx]
        self.edge_glob = np.array([j for j, _ in edges], dtype=int)
        self.edge_loc = np.array([k for _, k in edges], dtype=int)
        self.tied_glob = np.unique(self.edge_glob) if edges else np.zeros(0, int)
        q = work.th_hi - work.th_lo
        self.z = b_i.copy()
        self.z_prev = b_i.copy()
        self.theta = np.zeros(q)
        self.theta_prev = np.zeros(q)
        self.lam = np.zeros(b_i.size)
        self.mu = np.zeros(q)
        self.rho = 1.0
        self.theta0_loc = np.zeros(self.tied_glob.size)
        self._gram = None
        self._v = None
        self._w = None
        self._ax = np.zeros(b_i.size)

    @property
    def neighborhood(self):
        """Hidden-trajectory columns this worker may read."""
        return self.work.a_cols

    def set_initial_theta(self, theta0_idx, theta0_slice):
        self.theta0_loc = np.asarray(theta0_slice, dtype=float)
        theta = np.zeros(self.theta.size)
        lookup = {int(j): v for j, v in zip(theta0_idx, self.theta0_loc)}
        for j, k in zip(self.edge_glob, self.edge_loc):
            theta[k] = lookup[int(j)]
        self.theta = theta
        self.theta_prev = theta.copy()

    def _theta_bar(self):
        bar = np.zeros(self.theta.size)
        lookup = {int(j): v for j, v in zip(self.tied_glob, self.theta0_loc)}
        for j, k in zip(self.edge_glob, self.edge_loc):
            bar[k] = lookup[int(j)]
        return bar

    def phase_schur(self, msg):
        """Factor the local system and emit the reduced-system block."""
        self.rho = msg.rho
        self.theta0_loc = np.asarray(msg.theta0_slice, dtype=float)
        self.z_prev = self.z.copy()
        self.theta_prev = self.theta.copy()
        work = self.work
        rho = self.rho
        self._gram = BandedGram(
            work.model.channel_coeffs(self.theta), self.n_samples, rho
        )
        r_i = self.lam - rho * self.b
        if work.m_dense is not None:
            sol = self._gram.solve(np.column_stack([work.m_dense, r_i]))
            self._v, self._w = sol[:, :-1], sol[:, -1]
            xr = work.mt_apply(np.column_stack([self._v, r_i - rho * self._w]))
            block = work.mtm - rho * xr[:, :-1]
            rhs = xr[:, -1]
        else:
            self._v, self._w = None, self._gram.solve(r_i)
            block = np.zeros((0, 0))
            rhs = np.zeros(0)
        return SchurContribution(node=work.idx, cols=work.a_cols.copy(),
                                 block=block, rhs=rhs)

    def phase_local_solves(self, msg):
        """Recover z, refit theta, ascend the signal dual, emit theta sums."""
        work = self.work
        rho = self.rho
        N = self.n_samples
        if self._v is not None:
            x_loc = np.asarray(msg.x_slice, dtype=float)
            self._ax = work.m_dense @ x_loc
            self.z = rho * (self._v @ x_loc) - self._w
        else:
            self._ax = np.zeros(self.b.size)
            self.z = -self._w
        y_i = self.z[:N]
        phi = build_regressor(work.model, y_i, self.z[N:])
        w = self._theta_bar() - self.mu / rho
        sq2, sqr = np.sqrt(2.0), np.sqrt(rho)
        lhs = np.vstack([sq2 * phi, sqr * np.eye(work.model.q)])
        rhs = np.concatenate([-sq2 * y_i, sqr * w])
        self.theta = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        self.lam = self.lam + rho * (self.z - self._ax - self.b)
        sums = np.zeros(self.tied_glob.size)
        degs = np.zeros(self.tied_glob.size)
        pos = {int(j): a for a, j in enumerate(self.tied_glob)}
        for j, k in zip(self.edge_glob, self.edge_loc):
            sums[pos[int(j)]] += self.theta[k]
            degs[pos[int(j)]] += 1.0
        return ThetaContribution(node=work.idx, indices=self.tied_glob.copy(),
                                 sums=sums, degrees=degs)

    def phase_duals_residuals(self, msg):
        """Ascend the tying dual with the fresh theta0 and emit residuals."""
        work = self.work
        rho = self.rho
        self.theta0_loc = np.asarray(msg.theta0_slice, dtype=float)
        bar = self._theta_bar()
        rt = self.theta - bar
        self.mu = self.mu + rho * rt
        rz = self.z - self._ax - self.b
        d_z = self.z_prev - self.z
        d_t = self.theta_prev - self.theta
        def scatter_theta(vec):
            out = np.zeros(self.tied_glob.size)
            pos = {int(j): a for a, j in enumerate(self.tied_glob)}
            for j, k in zip(self.edge_glob, self.edge_loc):
                out[pos[int(j)]] += vec[k]
            return out
        return ResidualContribution(
            node=work.idx,
            rz_sq=float(rz @ rz),
            rt_sq=float(rt @ rt),
            ax_sq=float(self._ax @ self._ax),
            etheta0_sq=float(bar @ bar),
            z_sq=float(self.z @ self.z),
            theta_sq=float(self.theta @ self.theta),
            b_sq=float(self.b @ self.b),
            rd_x=rho * work.mt_apply(d_z) if work.a_cols.size else np.zeros(0),
            rd_x_cols=work.a_cols.copy(),
            rd_t=rho * scatter_theta(d_t),
            rd_t_idx=self.tied_glob.copy(),
            at_lam=work.mt_apply(self.lam) if work.a_cols.size else np.zeros(0),
            at_lam_cols=work.a_cols.copy(),
            et_mu=scatter_theta(self.mu),
            et_mu_idx=self.tied_glob.copy(),
        )


def reduce_theta0(contributions, r):
    """Degree-weighted average of the tied components from all workers."""
    sums = np.zeros(r)
    degs = np.zeros(r)
    for c in contributions:
        if c is None:
            raise MissingContribution("a worker did not report its sums")
        np.add.at(sums, c.indices, c.sums)
        np.add.at(degs, c.indices, c.degrees)
    if np.any(degs == 0):
        from .errors import ZeroDegree

        raise ZeroDegree("a global parameter component received no sums")
    return sums / degs


class Coordinator:
    """Owns x and theta0; drives the phase schedule and the reductions."""

    def __init__(self, problem, cfg, log):
        self.problem = problem
        self.cfg = cfg
        self.log = log
        sf = problem.standard_form
        self.n_hidden = sf.n_hidden
        self.n_samples = sf.n_samples
        r = problem.tying.r
        self.theta0 = (np.zeros(r) if cfg.theta0_init is None
                       else np.asarray(cfg.theta0_init, dtype=float).copy())
        self.x = np.zeros(self.n_hidden * self.n_samples)
        self.rho = cfg.rho0
        self.b_norm_sq = float(sf.b @ sf.b)

    def _send(self, worker, msg):
        payload = {"to": int(msg.node), "kind": msg.kind}
        if msg.x_cols is not None:
            payload["x_cols"] = [int(c) for c in msg.x_cols]
        if msg.theta0_idx is not None:
            payload["theta0_idx"] = [int(j) for j in msg.theta0_idx]
        self.log.append(payload)
        return msg

    def broadcast_round(self, workers):
        """Phase payloads for the start of one iteration."""
        out = []
        for w in workers:
            out.append(self._send(w, Broadcast(
                node=w.work.idx, kind="round_start",
                theta0_idx=w.tied_glob,
                theta0_slice=self.theta0[w.tied_glob],
                rho=self.rho,
            )))
        return out

    def solve_x(self, contributions):
        """Assemble and solve the reduced hidden-trajectory system."""
        N = self.n_samples
        if self.n_hidden == 0:
            self.x = np.zeros(0)
            return
        size = self.n_hidden * N
        schur = np.zeros((size, size))
        rhs = np.zeros(size)
        for c in contributions:
            if c is None:
                raise MissingContribution("a worker did not report its block")
            if c.cols.size == 0:
                continue
            idx = (c.cols[:, None] * N + np.arange(N)[None, :]).reshape(-1)
            schur[np.ix_(idx, idx)] += c.block
            rhs[idx] += c.rhs
        try:
            factor = sla.cho_factor(self.rho * schur, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSchur("reduced system is rank deficient") from exc
        self.x = sla.cho_solve(factor, rhs, check_finite=False)

    def broadcast_x(self, workers):
        N = self.n_samples
        out = []
        for w in workers:
            cols = w.neighborhood
            if cols.size:
                idx = (cols[:, None] * N + np.arange(N)[None, :]).reshape(-1)
                x_slice = self.x[idx]
            else:
                x_slice = np.zeros(0)
            out.append(self._send(w, Broadcast(
                node=w.work.idx, kind="x", x_cols=cols, x_slice=x_slice,
            )))
        return out

    def broadcast_theta0(self, workers):
        out = []
        for w in workers:
            out.append(self._send(w, Broadcast(
                node=w.work.idx, kind="theta0",
                theta0_idx=w.tied_glob,
                theta0_slice=self.theta0[w.tied_glob],
            )))
        return out

    def reduce_residuals(self, contributions):
        """Global residual norms and tolerances from the local pieces."""
        cfg = self.cfg
        N = self.n_samples
        rz_sq = rt_sq = ax_sq = e0_sq = z_sq = th_sq = 0.0
        rd_x = np.zeros(self.n_hidden * N)
        at_lam = np.zeros(self.n_hidden * N)
        r = self.theta0.size
        rd_t = np.zeros(r)
        et_mu = np.zeros(r)
        for c in contributions:
            if c is None:
                raise MissingContribution("a worker did not report residuals")
            rz_sq += c.rz_sq
            rt_sq += c.rt_sq
            ax_sq += c.ax_sq
            e0_sq += c.etheta0_sq
            z_sq += c.z_sq
            th_sq += c.theta_sq
            if c.rd_x_cols.size:
                idx = (c.rd_x_cols[:, None] * N + np.arange(N)[None, :]).reshape(-1)
                rd_x[idx] += c.rd_x
                at_lam[idx] += c.at_lam
            np.add.at(rd_t, c.rd_t_idx, c.rd_t)
            np.add.at(et_mu, c.et_mu_idx, c.et_mu)
        mp_n = sum(w_sz for w_sz in self._worker_sizes)
        q = self._q_total
        r_p = np.sqrt(rz_sq + rt_sq)
        r_d = np.sqrt(rd_x @ rd_x + rd_t @ rd_t)
        eps_p = (np.sqrt(mp_n + q) * cfg.eps_abs
                 + cfg.eps_rel * max(np.sqrt(ax_sq + e0_sq),
                                     np.sqrt(z_sq + th_sq),
                                     np.sqrt(self.b_norm_sq)))
        eps_d = (np.sqrt(self.n_hidden * N + self.theta0.size) * cfg.eps_abs
                 + cfg.eps_rel * np.sqrt(at_lam @ at_lam + et_mu @ et_mu))
        return {
            "stop": bool(r_p <= eps_p and r_d <= eps_d),
            "r_p": float(r_p), "r_d": float(r_d),
            "eps_p": float(eps_p), "eps_d": float(eps_d),
        }

    def adapt(self, res):
        cfg = self.cfg
        if res["r_p"] > cfg.mu_balance * res["r_d"]:
            self.rho *= cfg.tau
        elif res["r_d"] > cfg.mu_balance * res["r_p"]:
            self.rho /= cfg.tau


def run_distributed(problem, cfg=None, workers=None, message_log_path=None,
                    record_iterates=False):
    """Solve via the coordinator/worker protocol.

    ``workers`` chooses how many in-process worker containers host the M
    node handlers (values are independent of the grouping); ``None`` means
    one per node.  Returns the same result contract as :func:`solve`, with
    the message log attached, and optionally the per-iteration iterate
    snapshots for equivalence testing.
    """
    import time as _time

    cfg = cfg or SolverConfig()
    t_start = _time.perf_counter()
    sf = problem.standard_form
    N = sf.n_samples
    log = []
    coord = Coordinator(problem, cfg, log)

    node_workers = []
    for nd in problem.nodes:
        b_i = sf.b[nd.z_off : nd.z_off + nd.z_len]
        node_workers.append(NodeWorker(nd, problem.tying, b_i, N))
    coord._worker_sizes = [w.b.size for w in node_workers]
    coord._q_total = problem.tying.q

    n_hosts = len(node_workers) if not workers else min(int(workers), len(node_workers))
    hosts = [node_workers[i::n_hosts] for i in range(n_hosts)]

    for msg in coord.broadcast_theta0(node_workers):
        node_workers[msg.node].set_initial_theta(msg.theta0_idx, msg.theta0_slice)

    history = []
    snapshots = []
    converged = False
    iteration = 0
    for it in range(1, cfg.max_iter + 1):
        iteration = it
        start_msgs = coord.broadcast_round(node_workers)
        schur_msgs = [None] * len(node_workers)
        for host in hosts:
            for w in host:
                schur_msgs[w.work.idx] = w.phase_schur(start_msgs[w.work.idx])
        coord.solve_x(schur_msgs)
        x_msgs = coord.broadcast_x(node_workers)
        theta_msgs = [None] * len(node_workers)
        for host in hosts:
            for w in host:
                theta_msgs[w.work.idx] = w.phase_local_solves(x_msgs[w.work.idx])
        coord.theta0 = reduce_theta0(theta_msgs, problem.tying.r)
        t0_msgs = coord.broadcast_theta0(node_workers)
        res_msgs = [None] * len(node_workers)
        for host in hosts:
            for w in host:
                res_msgs[w.work.idx] = w.phase_duals_residuals(t0_msgs[w.work.idx])
        res = coord.reduce_residuals(res_msgs)
        history.append((it, res["r_p"], res["r_d"], res["eps_p"], res["eps_d"],
                        coord.rho))
        if record_iterates:
            snapshots.append(_snapshot(coord, node_workers))
        if res["stop"]:
            converged = True
            break
        if cfg.adaptive:
            coord.adapt(res)

    z = np.concatenate([w.z for w in node_workers])
    theta = np.concatenate([w.theta for w in node_workers])
    lam = np.concatenate([w.lam for w in node_workers])
    mu = np.concatenate([w.mu for w in node_workers])
    if message_log_path is not None:
        with open(message_log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    result = SolveResult(
        theta0=coord.theta0,
        theta=theta,
        z=z,
        x=coord.x,
        iterations=iteration,
        converged=converged,
        history=np.array(history),
        diagnostics=[],
        wall_time=_time.perf_counter() - t_start,
    )
    result.message_log = log
    result.iterate_snapshots = snapshots
    result.final_duals = (lam, mu)
    return result


def _snapshot(coord, node_workers):
    return {
        "x": coord.x.copy(),
        "theta0": coord.theta0.copy(),
        "z": np.concatenate([w.z for w in node_workers]),
        "theta": np.concatenate([w.theta for w in node_workers]),
        "lam": np.concatenate([w.lam for w in node_workers]),
        "mu": np.concatenate([w.mu for w in node_workers]),
    }


def audit_locality(log, problem):
    """Check that no broadcast carried data outside a worker's neighborhood.

    Returns the number of violations; zero means every x payload stayed
    within the worker's coupling columns and every theta0 payload within its
    tying edges.
    """
    allowed_x = {nd.idx: set(int(c) for c in nd.a_cols) for nd in problem.nodes}
    allowed_t = {
        i: set(int(j) for j, _ in problem.tying.edges[i])
        for i in range(len(problem.nodes))
    }
    bad = 0
    for entry in log:
        node = entry["to"]
        if "x_cols" in entry:
            if not set(entry["x_cols"]) <= allowed_x[node]:
                bad += 1
        if "theta0_idx" in entry:
            if not set(entry["theta0_idx"]) <= allowed_t[node]:
                bad += 1
    return bad
