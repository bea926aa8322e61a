"""Interconnection structure and its reduction to the standard form z = A x + b.

A network of M subsystems exchanges signals through three routing matrices:
``gamma`` builds the stacked node inputs from the stacked node outputs,
``b_in`` routes the measured external inputs, and ``c_out`` selects which
node outputs are measured.  Splitting the outputs into measured and hidden
parts turns the interconnection equations into a single affine constraint
``z = A x + b`` on the stacked per-node signals z, where x collects the
hidden output trajectories.  A is never materialized at full size; it is
kept as the compact factor ``a_tilde`` with ``A = a_tilde (kron) I_N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotASelection

__all__ = [
    "NetworkTopology",
    "StandardForm",
    "find_output_split",
    "build_standard_form",
    "reconstruct_signals",
    "stack_node_signals",
    "kron_matvec",
    "kron_rmatvec",
    "topology_from_dict",
]


def kron_matvec(mat, v, n_samples):
    """Apply (mat kron I_N) to a channel-major stacked vector.

    ``v`` holds ``mat.shape[1]`` channels of ``n_samples`` entries each;
    the result stacks ``mat.shape[0]`` channels the same way.
    """
    v = np.asarray(v, dtype=float)
    if v.size != mat.shape[1] * n_samples:
        raise DimensionMismatch(
            f"vector of length {v.size} incompatible with "
            f"{mat.shape[1]} channels of {n_samples} samples"
        )
    blocks = v.reshape(mat.shape[1], n_samples)
    return (mat @ blocks).reshape(-1)


def kron_rmatvec(mat, v, n_samples):
    """Apply (mat kron I_N)^T to a channel-major stacked vector."""
    v = np.asarray(v, dtype=float)
    if v.size != mat.shape[0] * n_samples:
        raise DimensionMismatch(
            f"vector of length {v.size} incompatible with "
            f"{mat.shape[0]} channels of {n_samples} samples"
        )
    blocks = v.reshape(mat.shape[0], n_samples)
    return (mat.T @ blocks).reshape(-1)


@dataclass(frozen=True)
class NetworkTopology:
    """Interconnection of M subsystems.

    Attributes
    ----------
    M : int
        Number of subsystems.
    m : tuple of int
        Input dimension of each subsystem.
    p : tuple of int
        Output dimension of each subsystem.
    m0 : int
        Number of measured external input channels.
    p0 : int
        Number of measured output channels.
    gamma : ndarray, (sum m) x (sum p)
        Output-to-input coupling; entries in {-1, 0, 1}.
    b_in : ndarray, (sum m) x m0
        External input routing; entries in {0, 1}.
    c_out : ndarray, p0 x (sum p)
        Output measurement selection; one unit entry per row.
    """

    M: int
    m: tuple
    p: tuple
    m0: int
    gamma: np.ndarray
    b_in: np.ndarray
    c_out: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "p", tuple(int(v) for v in self.p))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "b_in", np.asarray(self.b_in, dtype=float))
        object.__setattr__(self, "c_out", np.asarray(self.c_out, dtype=float))
        self.validate()

    @property
    def m_total(self):
        return sum(self.m)

    @property
    def p_total(self):
        return sum(self.p)

    @property
    def p0(self):
        return self.c_out.shape[0]

    @property
    def n_hidden(self):
        return self.p_total - self.p0

    def validate(self):
        mt, pt = self.m_total, self.p_total
        if len(self.m) != self.M or len(self.p) != self.M:
            raise DimensionMismatch("m and p must each have one entry per subsystem")
        if self.gamma.shape != (mt, pt):
            raise DimensionMismatch(
                f"gamma has shape {self.gamma.shape}, expected {(mt, pt)}"
            )
        if self.b_in.shape != (mt, self.m0):
            raise DimensionMismatch(
                f"b_in has shape {self.b_in.shape}, expected {(mt, self.m0)}"
            )
        if self.c_out.shape[1] != pt:
            raise DimensionMismatch(
                f"c_out has {self.c_out.shape[1]} columns, expected {pt}"
            )
        gb = np.hstack([self.gamma, self.b_in])
        # Signed selections appear in practice (negative feedback loops),
        # so +-1 entries are accepted even though plain interconnections
        # only use 0/1.
        if not np.all(np.isin(gb, (-1.0, 0.0, 1.0))):
            raise ValueError("[gamma b_in] entries must be -1, 0 or 1")
        if np.any(np.count_nonzero(gb, axis=1) == 0):
            raise ValueError("[gamma b_in] has an all-zero row")
        find_output_split(self.c_out)  # raises NotASelection when invalid

    def node_signal_slices(self, n_samples):
        """Per-node (offset, length) of the stacked z vector, node blocks
        laid out as p_i output channels then m_i input channels."""
        out = []
        off = 0
        for i in range(self.M):
            ln = (self.p[i] + self.m[i]) * n_samples
            out.append((off, ln))
            off += ln
        return out


def find_output_split(c_out):
    """Split outputs into measured and hidden parts.

    Returns
    -------
    p1_cols : ndarray of int
        For each measured channel r, the output index j with c_out[r, j] = 1;
        selecting these columns of the identity gives P1 with c_out @ P1 = I.
    p2_cols : ndarray of int
        The remaining (hidden) output indices in increasing order.
    """
    c_out = np.asarray(c_out, dtype=float)
    p = c_out.shape[1]
    cols = []
    for r in range(c_out.shape[0]):
        nz = np.flatnonzero(c_out[r])
        if nz.size != 1 or c_out[r, nz[0]] != 1.0:
            raise NotASelection(f"row {r} of the measurement map is not a unit row")
        cols.append(int(nz[0]))
    if len(set(cols)) != len(cols):
        raise NotASelection("measurement map selects an output twice")
    p1_cols = np.array(cols, dtype=int)
    p2_cols = np.array(sorted(set(range(p)) - set(cols)), dtype=int)
    return p1_cols, p2_cols


@dataclass(frozen=True)
class StandardForm:
    """Compact representation of the constraint z = A x + b.

    ``a_tilde`` is the (m+p) x n factor with A = a_tilde (kron) I_N; ``b``
    is the offset built from the measured data.  ``q_perm`` is the index
    vector of the permutation that interleaves the stacked (y, u) ordering
    into per-node (y_i, u_i) blocks.
    """

    topology: NetworkTopology
    n_samples: int
    a_tilde: np.ndarray
    b: np.ndarray
    q_perm: np.ndarray
    p1_cols: np.ndarray
    p2_cols: np.ndarray
    a_bar: np.ndarray
    b_bar: np.ndarray
    gamma_bar1: np.ndarray
    gamma_bar2: np.ndarray

    @property
    def n_hidden(self):
        return self.a_tilde.shape[1]

    def node_rows(self):
        """Per-node row blocks of a_tilde (offset, count)."""
        topo = self.topology
        out = []
        off = 0
        for i in range(topo.M):
            cnt = topo.p[i] + topo.m[i]
            out.append((off, cnt))
            off += cnt
        return out

    def apply_a(self, x):
        """A @ x via the compact factor."""
        if self.n_hidden == 0:
            return np.zeros(self.a_tilde.shape[0] * self.n_samples)
        return kron_matvec(self.a_tilde, x, self.n_samples)

    def apply_at(self, v):
        """A.T @ v via the compact factor."""
        if self.n_hidden == 0:
            return np.zeros(0)
        return kron_rmatvec(self.a_tilde, v, self.n_samples)


def build_standard_form(topo, z0, n_samples):
    """Reduce the interconnection to z = A x + b for the given data.

    Parameters
    ----------
    topo : NetworkTopology
    z0 : ndarray
        Measured data stack (y0 then u0, channel-major, each channel a
        length-``n_samples`` time series).
    n_samples : int

    Returns
    -------
    StandardForm
    """
    z0 = np.asarray(z0, dtype=float)
    p0, m0 = topo.p0, topo.m0
    if z0.size != (p0 + m0) * n_samples:
        raise DimensionMismatch(
            f"z0 has {z0.size} entries, expected {(p0 + m0) * n_samples}"
        )
    pt, mt = topo.p_total, topo.m_total
    p1_cols, p2_cols = find_output_split(topo.c_out)
    n = pt - p0

    p1 = np.zeros((pt, p0))
    p1[p1_cols, np.arange(p0)] = 1.0
    p2 = np.zeros((pt, n))
    p2[p2_cols, np.arange(n)] = 1.0

    gamma_bar1 = topo.gamma @ p1
    gamma_bar2 = topo.gamma @ p2
    a_bar = np.vstack([p2, gamma_bar2])
    b_bar = np.block([[p1, np.zeros((pt, m0))], [gamma_bar1, topo.b_in]])

    # interleave stacked (y, u) into per-node (y_i, u_i) blocks
    q_perm = []
    po = mo = 0
    for i in range(topo.M):
        q_perm.extend(range(po, po + topo.p[i]))
        q_perm.extend(range(pt + mo, pt + mo + topo.m[i]))
        po += topo.p[i]
        mo += topo.m[i]
    q_perm = np.array(q_perm, dtype=int)

    a_tilde = a_bar[q_perm, :]
    b_tilde = b_bar[q_perm, :]
    b = kron_matvec(b_tilde, z0, n_samples)

    return StandardForm(
        topology=topo,
        n_samples=n_samples,
        a_tilde=a_tilde,
        b=b,
        q_perm=q_perm,
        p1_cols=p1_cols,
        p2_cols=p2_cols,
        a_bar=a_bar,
        b_bar=b_bar,
        gamma_bar1=gamma_bar1,
        gamma_bar2=gamma_bar2,
    )


def reconstruct_signals(sf, x, z0=None):
    """Recover the full stacked per-node signals z = A x + b.

    When ``z0`` is given, the offset is recomputed for that data instead of
    using the one stored at build time.
    """
    x = np.asarray(x, dtype=float)
    if x.size != sf.n_hidden * sf.n_samples:
        raise DimensionMismatch(
            f"x has {x.size} entries, expected {sf.n_hidden * sf.n_samples}"
        )
    if z0 is None:
        b = sf.b
    else:
        b_tilde = sf.b_bar[sf.q_perm, :]
        b = kron_matvec(b_tilde, z0, sf.n_samples)
    return sf.apply_a(x) + b


def stack_node_signals(topo, y, u, n_samples):
    """Interleave globally stacked outputs and inputs into the per-node
    (y_i, u_i) ordering used by z."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.size != topo.p_total * n_samples or u.size != topo.m_total * n_samples:
        raise DimensionMismatch("signal stacks do not match the topology")
    parts = []
    po = mo = 0
    for i in range(topo.M):
        parts.append(y[po : po + topo.p[i] * n_samples])
        parts.append(u[mo : mo + topo.m[i] * n_samples])
        po += topo.p[i] * n_samples
        mo += topo.m[i] * n_samples
    return np.concatenate(parts)


def topology_from_dict(doc):
    """Build a NetworkTopology from its JSON document form.

    Expected fields: ``M``, ``m``, ``p``, ``m0``, ``gamma`` (list of
    ``[row, col]`` or ``[row, col, value]`` nonzeros, 1-based), ``b_matrix``
    (same convention) and ``c_rows`` (1-based measured output indices).
    """
    from .errors import ConfigError

    try:
        M = int(doc["M"])
        m = [int(v) for v in doc["m"]]
        p = [int(v) for v in doc["p"]]
        m0 = int(doc["m0"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad topology document: {exc}") from exc

    mt, pt = sum(m), sum(p)
    gamma = np.zeros((mt, pt))
    for entry in doc.get("gamma", []):
        r, c = int(entry[0]) - 1, int(entry[1]) - 1
        v = float(entry[2]) if len(entry) > 2 else 1.0
        gamma[r, c] = v
    b_in = np.zeros((mt, m0))
    for entry in doc.get("b_matrix", []):
        r, c = int(entry[0]) - 1, int(entry[1]) - 1
        v = float(entry[2]) if len(entry) > 2 else 1.0
        b_in[r, c] = v
    c_rows = [int(v) - 1 for v in doc["c_rows"]]
    c_out = np.zeros((len(c_rows), pt))
    c_out[np.arange(len(c_rows)), c_rows] = 1.0
    return NetworkTopology(M=M, m=tuple(m), p=tuple(p), m0=m0,
                           gamma=gamma, b_in=b_in, c_out=c_out)
