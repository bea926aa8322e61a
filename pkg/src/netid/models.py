"""Per-node residual models and the parameter tying map.

Each node's prediction error is affine in both its parameter vector and its
signals: e_i = Phi_i(z_i) theta_i + y_i = T_i(theta_i) z_i.  The regressor
Phi_i is built from lagged outputs and lagged input channels; the operator
T_i is the equivalent lag-polynomial map acting on the stacked node signals.
Lagged signals use zero initial conditions, so the first samples of each
regressor column are padded with zeros rather than trimmed.

The tying map E constrains the stacked node parameters to a small global
vector: theta = E theta0.  E is a 0-1 incidence matrix with at most one
nonzero per row, so E^T E is diagonal with the tying out-degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import BadM, DimensionMismatch

__all__ = [
    "NodeModel",
    "TyingMap",
    "shift",
    "build_regressor",
    "build_T",
    "apply_T",
    "apply_T_transpose",
    "build_tying_arx",
    "build_tying_pde",
]


def shift(v, s):
    """Delay a signal by ``s`` samples with zero initial conditions.

    ``shift(v, s)[k] = v[k - s]`` for k > s and 0 otherwise; ``s`` larger
    than the signal length returns the zero vector.
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    if s < len(v):
        if s == 0:
            out[:] = v
        else:
            out[s:] = v[: len(v) - s]
    return out


def _shift_forward(v, s):
    """Adjoint of :func:`shift`: advance by ``s`` samples, zero tail."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    if s < len(v):
        if s == 0:
            out[:] = v
        else:
            out[: len(v) - s] = v[s:]
    return out


@dataclass(frozen=True)
class NodeModel:
    """Regressor specification of one node.

    ``input_lags`` lists the (channel, lag) pairs that form the input
    columns of Phi_i, in column order; ``input_sign`` is +1 when lagged
    inputs enter the residual with a plus sign (feedback ARX family) and
    -1 when the model moves them to the right-hand side (stencil family).
    All lags must be >= 1 so the interconnected model has no algebraic loop.
    """

    node_index: int
    na: int
    input_dim: int
    input_lags: tuple
    input_sign: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "input_lags", tuple((int(c), int(l)) for c, l in self.input_lags)
        )
        for c, l in self.input_lags:
            if not 0 <= c < self.input_dim:
                raise DimensionMismatch(f"input channel {c} out of range")
            if l < 1:
                raise ValueError("input lags must be >= 1")
        if self.na < 1:
            raise ValueError("autoregressive order must be >= 1")

    @property
    def q(self):
        """Parameter dimension: na output lags plus one per input column."""
        return self.na + len(self.input_lags)

    @property
    def max_lag(self):
        return max([self.na] + [l for _, l in self.input_lags])

    def channel_coeffs(self, theta):
        """Lag-polynomial coefficients of T_i, one list per signal channel.

        Channel 0 is the output: [(0, 1), (1, a_1), ..., (na, a_na)].
        Channel 1 + c collects the tied input columns of channel c with
        their signed parameter values.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.q:
            raise DimensionMismatch(
                f"theta has {theta.size} entries, expected {self.q}"
            )
        chans = [[(0, 1.0)] + [(l, theta[l - 1]) for l in range(1, self.na + 1)]]
        for c in range(self.input_dim):
            chans.append(
                [
                    (lag, self.input_sign * theta[self.na + k])
                    for k, (ch, lag) in enumerate(self.input_lags)
                    if ch == c
                ]
            )
        return chans


def build_regressor(model, y_i, u_i):
    """Assemble the N x q_i regressor Phi_i from one node's signals.

    Parameters
    ----------
    model : NodeModel
    y_i : ndarray, length N
    u_i : ndarray, length input_dim * N
        Input channels stacked channel-major.

    Returns
    -------
    ndarray, N x q_i with e_i = Phi_i theta_i + y_i.
    """
    y_i = np.asarray(y_i, dtype=float)
    n_samples = y_i.size
    u = np.asarray(u_i, dtype=float)
    if u.size != model.input_dim * n_samples:
        raise DimensionMismatch(
            f"u_i has {u.size} entries, expected {model.input_dim * n_samples}"
        )
    u = u.reshape(model.input_dim, n_samples)
    cols = [shift(y_i, l) for l in range(1, model.na + 1)]
    cols += [model.input_sign * shift(u[c], l) for c, l in model.input_lags]
    return np.stack(cols, axis=1)


def build_T(model, theta, n_samples):
    """Sparse residual operator T_i with T_i (y_i, u_i) = Phi_i theta + y_i.

    The operator is N x (1 + input_dim) N and affine (here linear plus the
    fixed identity on the output channel) in theta.
    """
    blocks = []
    for coeffs in model.channel_coeffs(theta):
        diags = [c * np.ones(n_samples - l) for l, c in coeffs if l < n_samples]
        offs = [-l for l, _ in coeffs if l < n_samples]
        if diags:
            blocks.append(sp.diags(diags, offs, shape=(n_samples, n_samples)))
        else:
            blocks.append(sp.csr_matrix((n_samples, n_samples)))
    return sp.hstack(blocks, format="csr")


def apply_T(model, theta, z_i):
    """Residual e_i = T_i(theta) z_i without forming the operator."""
    n_samples = z_i.size // (1 + model.input_dim)
    out = np.zeros(n_samples)
    chans = model.channel_coeffs(theta)
    for c, coeffs in enumerate(chans):
        sig = z_i[c * n_samples : (c + 1) * n_samples]
        for lag, coef in coeffs:
            out += coef * shift(sig, lag)
    return out


def apply_T_transpose(model, theta, w):
    """Adjoint T_i(theta)^T w, stacked channel-major like z_i."""
    n_samples = w.size
    chans = model.channel_coeffs(theta)
    out = np.zeros((1 + model.input_dim) * n_samples)
    for c, coeffs in enumerate(chans):
        acc = np.zeros(n_samples)
        for lag, coef in coeffs:
            acc += coef * _shift_forward(w, lag)
        out[c * n_samples : (c + 1) * n_samples] = acc
    return out


@dataclass(frozen=True)
class TyingMap:
    """Incidence map theta = E theta0 between node and global parameters.

    ``edges[i]`` lists the (global j, local k) pairs of node i;
    ``out_degrees[j]`` counts how many node components are tied to global
    component j, so that E^T E = diag(out_degrees).
    """

    E: sp.csr_matrix
    edges: tuple
    out_degrees: np.ndarray
    node_q: tuple

    def __post_init__(self):
        rowcnt = np.diff(self.E.indptr)
        if np.any(rowcnt > 1):
            raise ValueError("tying map must have at most one nonzero per row")

    @property
    def q(self):
        return self.E.shape[0]

    @property
    def r(self):
        return self.E.shape[1]

    def theta_slices(self):
        offs = np.concatenate([[0], np.cumsum(self.node_q)])
        return [(int(offs[i]), int(offs[i + 1])) for i in range(len(self.node_q))]

    def gather(self, theta0):
        """Per-node target values: theta_bar = E theta0."""
        return self.E @ np.asarray(theta0, dtype=float)


def _tying_from_edges(edge_lists, node_q, r):
    rows, cols = [], []
    off = 0
    for i, edges in enumerate(edge_lists):
        for j, k in edges:
            rows.append(off + k)
            cols.append(j)
        off += node_q[i]
    data = np.ones(len(rows))
    E = sp.csr_matrix((data, (rows, cols)), shape=(off, r))
    deg = np.asarray(E.sum(axis=0)).ravel()
    return TyingMap(
        E=E,
        edges=tuple(tuple((int(j), int(k)) for j, k in e) for e in edge_lists),
        out_degrees=deg,
        node_q=tuple(int(v) for v in node_q),
    )


def build_tying_arx(M, q_i):
    """Identity tying: every node parameter is its own global parameter."""
    if np.isscalar(q_i):
        q_i = [int(q_i)] * M
    edge_lists = []
    off = 0
    for i in range(M):
        edge_lists.append([(off + k, k) for k in range(q_i[i])])
        off += q_i[i]
    return _tying_from_edges(edge_lists, list(q_i), off)


# Global layout for the stencil chain: theta0 = (a_1, a_2, b_1, b_2, b_3).
# Per node, which global b component each input column is tied to; end
# nodes get the truncated selections of the interior stencil.
def _pde_b_map(i, M):
    if i == 1:
        return [0, 1, 2]
    if i == 2:
        return [1, 0, 1, 2]
    if i == M - 1:
        return [2, 1, 0, 1]
    if i == M:
        return [1, 0, 1]
    return [2, 1, 0, 1, 2]


def build_tying_pde(M):
    """Tying map of the discretized-chain family: shared (a, b) stencil.

    Every node ties its two output lags to the global a-pair and each input
    column to a component of the global 3-vector b according to the chain
    stencil, truncated at both ends.
    """
    if M < 5 or M % 2 == 0:
        raise BadM("chain length must be odd and at least 5")
    edge_lists = []
    node_q = []
    for i in range(1, M + 1):
        bmap = _pde_b_map(i, M)
        edges = [(0, 0), (1, 1)]
        edges += [(2 + j, 2 + k) for k, j in enumerate(bmap)]
        edge_lists.append(edges)
        node_q.append(2 + len(bmap))
    return _tying_from_edges(edge_lists, node_q, 5)
