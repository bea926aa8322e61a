"""Banded Cholesky solver for the per-node signal systems.

Each node's primal update solves (2 T^T T + rho I) w = rhs where T is a
lag-polynomial operator on the node's stacked signals.  In the channel-major
layout the Gram matrix is a grid of banded blocks; re-indexing the signals
time-major (all channels of sample k adjacent) makes the whole matrix banded
with bandwidth max_lag * n_channels + n_channels - 1, so a banded Cholesky
factorization solves it in O(N) instead of O(N^3).

The band values are assembled directly from the lag-polynomial coefficients:
a coefficient pair (l, c) on channel a and (l', c') on channel b contributes
2 c c' to the diagonal at time offset l - l', truncated where the shifted
signals run past the last sample.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg as sla

__all__ = ["BandedGram"]


@lru_cache(maxsize=64)
def _interleave_perms(n_channels, n_samples):
    """Index maps between channel-major and time-major layouts."""
    tm = np.arange(n_channels * n_samples)
    t, c = np.divmod(tm, n_channels)
    perm = c * n_samples + t        # time-major position -> channel-major index
    inv = np.empty_like(perm)
    inv[perm] = tm                  # channel-major position -> time-major index
    perm.setflags(write=False)
    inv.setflags(write=False)
    return perm, inv


class BandedGram:
    """Factorization of K = 2 T^T T + rho I for one node.

    Parameters
    ----------
    channel_coeffs : sequence of sequences of (lag, coef)
        Lag-polynomial coefficients of T, one list per signal channel.
    n_samples : int
    rho : float
        Positive penalty weight; makes K positive definite.
    """

    def __init__(self, channel_coeffs, n_samples, rho):
        C = len(channel_coeffs)
        N = n_samples
        pairs = []
        width = 0
        for ca, coeffs_a in enumerate(channel_coeffs):
            for cb, coeffs_b in enumerate(channel_coeffs):
                for la, va in coeffs_a:
                    for lb, vb in coeffs_b:
                        dt = la - lb  # time offset of the (a, b) entry
                        if dt < 0 or (dt == 0 and cb < ca):
                            continue  # lower triangle, filled by symmetry
                        off = dt * C + (cb - ca)
                        t0, t1 = max(0, -dt), N - 1 - la
                        if t1 < t0:
                            continue
                        pairs.append((ca, cb, dt, off, t0, t1, 2.0 * va * vb))
                        width = max(width, off)

        ab = np.zeros((width + 1, C * N))
        for ca, cb, dt, off, t0, t1, val in pairs:
            j0 = (t0 + dt) * C + cb
            cnt = t1 - t0 + 1
            ab[width - off, j0 : j0 + cnt * C : C] += val
        ab[width, :] += rho

        self.n_channels = C
        self.n_samples = N
        self._perm, self._inv = _interleave_perms(C, N)
        self._factor = sla.cholesky_banded(ab, lower=False, check_finite=False)

    def solve(self, rhs):
        """Solve K w = rhs for channel-major rhs of shape (CN,) or (CN, k)."""
        rhs = np.asarray(rhs, dtype=float)
        rhs_tm = rhs[self._perm]
        out = sla.cho_solve_banded((self._factor, False), rhs_tm,
                                   check_finite=False)
        return out[self._inv]
