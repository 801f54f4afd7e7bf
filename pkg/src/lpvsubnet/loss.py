"""Prediction-error objectives built on encoder-initialized subsection rollouts.

Losses are evaluated on normalized outputs. A subsection anchored at ``t``
(0-based) uses the encoder window ``t - n - 1 .. t - 1`` and predicts
``y_t .. y_{t+T-1}``, so admissible anchors are ``n + 1 .. N - T``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import diffnet as dn
from .lpv_model import rollout_graph


@dataclass
class BatchSpec:
    indices: np.ndarray
    T: int

    @property
    def size(self):
        return len(self.indices)


def admissible_starts(N, T, lag):
    first, last = lag + 1, N - T
    if T < 1 or last < first:
        raise ValueError(f"no admissible subsection for N={N}, T={T}, lag={lag}")
    return np.arange(first, last + 1)


def admissible_span(N, lag):
    """Longest horizon: one subsection from the first admissible anchor to the end."""
    return N - lag - 1


class NormalizedData:
    """Normalized arrays of a dataset under a model's statistics (computed once)."""

    def __init__(self, net, u, y, p=None):
        self.U = net.model.normalize_u(u)
        self.Y = net.model.normalize_y(y)
        self.P = None if p is None else np.asarray(p, dtype=np.float64).reshape(len(self.U), -1)

    @classmethod
    def of(cls, net, data):
        if isinstance(data, cls):
            return data
        return cls(net, data.u, data.y, getattr(data, "p", None))

    def __len__(self):
        return len(self.U)


def _sq_error_sum(net, nd, starts, T):
    y_hats, _, _ = rollout_graph(net.model, net.sched, net.enc, net.mode, nd.U, nd.Y, starts, T, P=nd.P)
    idx = (np.asarray(starts)[:, None] + np.arange(T)[None, :])
    target = nd.Y[idx].reshape(len(starts), -1)
    return dn.sum(dn.square(dn.sub(dn.concat(y_hats, axis=1), target)))


def subsection_loss(net, data, starts, T, threads=1):
    """``1/(T |starts|) sum_t sum_k ||y_hat_{t+k|t} - y_{t+k}||^2`` as a graph node."""
    nd = NormalizedData.of(net, data)
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size == 0:
        raise ValueError("empty batch")
    norm = 1.0 / (T * len(starts))
    if threads <= 1 or len(starts) < 2 * threads:
        return dn.scale(_sq_error_sum(net, nd, starts, T), norm)
    chunks = np.array_split(starts, threads)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda c: _sq_error_sum(net, nd, c, T), chunks))
    total = parts[0]
    for part in parts[1:]:
        total = dn.add(total, part)
    return dn.scale(total, norm)


def truncated_loss(net, data, T, threads=1):
    nd = NormalizedData.of(net, data)
    return subsection_loss(net, nd, admissible_starts(len(nd), T, net.enc.lag), T, threads)


def full_prediction_loss(net, data):
    nd = NormalizedData.of(net, data)
    if len(nd) < net.enc.lag + 2:
        raise ValueError(f"dataset needs at least lag + 2 = {net.enc.lag + 2} samples")
    T = admissible_span(len(nd), net.enc.lag)
    return subsection_loss(net, nd, [net.enc.lag + 1], T)


def batch_loss(net, data, batch, threads=1):
    if batch.size == 0:
        raise ValueError("empty batch")
    return subsection_loss(net, data, batch.indices, batch.T, threads)


def sample_batch(rng, N, T, lag, batch_size):
    """Uniform draw of ``batch_size`` distinct admissible anchors."""
    starts = admissible_starts(N, T, lag)
    if not 1 <= batch_size <= len(starts):
        raise ValueError(f"batch size {batch_size} infeasible with {len(starts)} admissible subsections")
    if batch_size == len(starts):
        return BatchSpec(starts.copy(), T)
    return BatchSpec(np.sort(rng.choice(starts, size=batch_size, replace=False)), T)


class EpochSampler:
    """Draws batches without replacement, reshuffling once every admissible anchor has been used."""

    def __init__(self, rng, N, T, lag, batch_size):
        self.rng = rng
        self.starts = admissible_starts(N, T, lag)
        self.T = T
        if not 1 <= batch_size <= len(self.starts):
            raise ValueError(f"batch size {batch_size} infeasible with {len(self.starts)} admissible subsections")
        self.batch_size = batch_size
        self._perm = self.rng.permutation(self.starts)
        self._pos = 0

    def next(self):
        take = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += len(take)
        need = self.batch_size - len(take)
        if need:
            # new epoch: fill from a fresh permutation, the leftover anchors go last
            fresh = self.rng.permutation(self.starts)
            leftover = np.isin(fresh, take)
            head = fresh[~leftover]
            take = np.concatenate([take, head[:need]])
            self._perm = np.concatenate([head[need:], fresh[leftover]])
            self._pos = 0
        return BatchSpec(np.sort(take), self.T)
