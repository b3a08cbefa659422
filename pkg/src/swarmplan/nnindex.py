"""Exact nearest-node search under the baseline planner metric.

The metric over joint states is

    d(a, b) = sqrt(sum_i |dp_i|^2 + w_v |dv_i|^2) + lambda_t |t_a - t_b|

At joint-space dimensionality (4n+1, up to 65 for 16 robots) kd-tree
pruning degenerates to a slow linear walk, so the index is a vectorized
scan instead: a float32 BLAS pass scores all points, everything within a
conservative error band of the best float32 score is re-scored exactly in
float64, and ties break on the lowest node id. The K-candidate pre-filter
used before evaluating learned distances goes through the same path.
"""

from __future__ import annotations

import numpy as np

_F32_EPS = 1.2e-7


class NodeIndex:
    """Append-only index over flat joint states ``[p1, v1, ..., pn, vn, t]``."""

    def __init__(self, n_robots: int, w_v: float = 0.3, lambda_t: float = 0.05, capacity: int = 1024):
        self.n_robots = int(n_robots)
        self.w_v = float(w_v)
        self.lambda_t = float(lambda_t)
        self.dim = 4 * self.n_robots
        scale = np.ones(self.dim)
        scale[2::4] = np.sqrt(self.w_v)
        scale[3::4] = np.sqrt(self.w_v)
        self._scale = scale
        self._size = 0
        self._spatial64 = np.empty((capacity, self.dim))
        self._tau64 = np.empty(capacity)
        self._spatial32 = np.empty((capacity, self.dim), dtype=np.float32)
        self._tau32 = np.empty(capacity, dtype=np.float32)
        self._norms32 = np.empty(capacity, dtype=np.float32)
        self._ids = np.empty(capacity, dtype=np.int64)
        self._max_norm = 0.0

    def __len__(self) -> int:
        return self._size

    def _embed(self, state: np.ndarray) -> tuple[np.ndarray, float]:
        state = np.asarray(state, dtype=float)
        return state[:-1] * self._scale, self.lambda_t * float(state[-1])

    def _grow(self) -> None:
        cap = self._spatial64.shape[0] * 2
        for name in ("_spatial64", "_tau64", "_spatial32", "_tau32", "_norms32", "_ids"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._size] = old[: self._size]
            setattr(self, name, new)

    def insert(self, state: np.ndarray, node_id: int) -> None:
        """Node ids must be inserted in increasing order (tree append order)."""
        if self._size == self._spatial64.shape[0]:
            self._grow()
        s, tau = self._embed(state)
        i = self._size
        self._spatial64[i] = s
        self._tau64[i] = tau
        s32 = s.astype(np.float32)
        self._spatial32[i] = s32
        self._tau32[i] = np.float32(tau)
        norm = float(s32 @ s32)
        self._norms32[i] = norm
        self._max_norm = max(self._max_norm, norm)
        self._ids[i] = node_id
        self._size += 1

    def distance(self, state_a: np.ndarray, state_b: np.ndarray) -> float:
        sa, ta = self._embed(state_a)
        sb, tb = self._embed(state_b)
        return float(np.sqrt(((sa - sb) ** 2).sum()) + abs(ta - tb))

    def _scan32(self, q32: np.ndarray, qt32: np.float32, qn: float) -> np.ndarray:
        m = self._size
        s = self._spatial32[:m] @ q32
        d2 = self._norms32[:m] - 2.0 * s + np.float32(qn)
        return np.sqrt(np.maximum(d2, 0.0)) + np.abs(self._tau32[:m] - qt32)

    def _band(self, qn: float) -> float:
        # conservative bound on the float32 distance error; everything within
        # the band of the float32 best gets an exact float64 re-score
        e2 = (2.0 * self.dim + 8.0) * _F32_EPS * (self._max_norm + qn + 1.0)
        return float(np.sqrt(e2) + 1e-6)

    def _refine(self, cand: np.ndarray, q: np.ndarray, qt: float) -> tuple[np.ndarray, np.ndarray]:
        diff = self._spatial64[cand] - q
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff)) + np.abs(self._tau64[cand] - qt)
        order = np.lexsort((self._ids[cand], d))
        return self._ids[cand[order]], d[order]

    def query_nearest(self, state: np.ndarray) -> tuple[int, float]:
        if not self._size:
            raise ValueError("empty index")
        q, qt = self._embed(state)
        q32 = q.astype(np.float32)
        qn = float(q32 @ q32)
        d32 = self._scan32(q32, np.float32(qt), qn)
        best = float(d32.min())
        cand = np.flatnonzero(d32 <= best + self._band(qn) + 1e-5 * best)
        ids, d = self._refine(cand, q, qt)
        return int(ids[0]), float(d[0])

    def query_knn(self, state: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """The k nearest node ids ordered by (distance, id); fewer when small."""
        if not self._size:
            raise ValueError("empty index")
        k = min(int(k), self._size)
        q, qt = self._embed(state)
        q32 = q.astype(np.float32)
        qn = float(q32 @ q32)
        d32 = self._scan32(q32, np.float32(qt), qn)
        kth = float(np.partition(d32, k - 1)[k - 1])
        cand = np.flatnonzero(d32 <= kth + self._band(qn) + 1e-5 * kth)
        ids, d = self._refine(cand, q, qt)
        return ids[:k], d[:k]
