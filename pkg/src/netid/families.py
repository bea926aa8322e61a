"""Ready-made problem families: the three-node feedback loop of scalar ARX
models and the odd-length chain of stencil-coupled nodes with every second
output measured."""

from __future__ import annotations

import numpy as np

from .errors import BadM, ConfigError
from .models import NodeModel, build_tying_arx, build_tying_pde
from .topology import NetworkTopology

__all__ = ["arx_loop", "pde_chain", "default_true_theta0", "build_family"]


def arx_loop():
    """Three scalar ARX nodes in a ring with one negative feedback edge.

    Node 1 is driven by the external input and the negated output of node 3;
    nodes 2 and 3 are driven by their predecessor.  All outputs are measured,
    so there are no hidden signals.
    """
    M = 3
    gamma = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    b_in = np.array([[1.0], [0.0], [0.0]])
    c_out = np.eye(3)
    topo = NetworkTopology(M=M, m=(1, 1, 1), p=(1, 1, 1), m0=1,
                           gamma=gamma, b_in=b_in, c_out=c_out)
    models = [
        NodeModel(node_index=i, na=2, input_dim=1,
                  input_lags=((0, 1), (0, 2)), input_sign=1.0)
        for i in range(M)
    ]
    tying = build_tying_arx(M, [m.q for m in models])
    return topo, models, tying


def _pde_input_channels(i, M):
    """Input channel sources of chain node i (1-based): neighbour outputs at
    distance <= 2 plus the node's own external input, in spatial order."""
    if i == 1:
        return [("u0", 1), ("y", 2), ("y", 3)]
    if i == 2:
        return [("y", 1), ("u0", 2), ("y", 3), ("y", 4)]
    if i == M - 1:
        return [("y", M - 3), ("y", M - 2), ("u0", M - 1), ("y", M)]
    if i == M:
        return [("y", M - 2), ("y", M - 1), ("u0", M)]
    return [("y", i - 2), ("y", i - 1), ("u0", i), ("y", i + 1), ("y", i + 2)]


def pde_chain(M):
    """Chain of M scalar nodes coupled to neighbours within distance two.

    Each node sees its own external input plus the outputs of up to four
    neighbours; every second output (the odd-indexed ones) is measured.
    Inputs act with a one-sample delay, which keeps the interconnected
    model free of algebraic loops.
    """
    if M < 5 or M % 2 == 0:
        raise BadM("chain length must be odd and at least 5")
    chans = [_pde_input_channels(i, M) for i in range(1, M + 1)]
    m = tuple(len(c) for c in chans)
    mt = sum(m)
    gamma = np.zeros((mt, M))
    b_in = np.zeros((mt, M))
    row = 0
    for c in chans:
        for kind, j in c:
            if kind == "y":
                gamma[row, j - 1] = 1.0
            else:
                b_in[row, j - 1] = 1.0
            row += 1
    measured = list(range(0, M, 2))  # outputs 1, 3, ..., M (1-based)
    c_out = np.zeros((len(measured), M))
    c_out[np.arange(len(measured)), measured] = 1.0
    topo = NetworkTopology(M=M, m=m, p=(1,) * M, m0=M,
                           gamma=gamma, b_in=b_in, c_out=c_out)
    models = [
        NodeModel(node_index=i, na=2, input_dim=m[i],
                  input_lags=tuple((c, 1) for c in range(m[i])), input_sign=-1.0)
        for i in range(M)
    ]
    tying = build_tying_pde(M)
    return topo, models, tying


def default_true_theta0(family, M=None):
    """Parameter values used by the reference experiments."""
    if family == "arx_loop":
        return np.tile([-1.5, 0.7, -0.1, 0.1], 3)
    if family == "pde_chain":
        return np.array([0.7, 0.9, 0.5, -0.5, 0.5])
    raise ConfigError(f"unknown family {family!r}")


def build_family(family, M=None):
    """Dispatch on the family name; returns (topology, models, tying)."""
    if family == "arx_loop":
        return arx_loop()
    if family == "pde_chain":
        if M is None:
            raise ConfigError("pde_chain requires M")
        return pde_chain(M)
    raise ConfigError(f"unknown family {family!r}")
