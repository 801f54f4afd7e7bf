"""Sub-space encoder: lag window of past I/O -> initial model state."""
from dataclasses import dataclass

import numpy as np

from .diffnet import Mlp, mlp_forward


@dataclass
class LagWindow:
    """``n + 1`` aligned samples of ``u`` and ``y`` preceding the anchor index ``t``."""

    u: np.ndarray
    y: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError(f"window misaligned: {self.u.shape[0]} input vs {self.y.shape[0]} output samples")

    def flat(self):
        return np.concatenate([self.u.ravel(), self.y.ravel()])


class EncoderNet:
    """MLP with linear bypass on the flattened window ``[u_{t-n-1} .. u_{t-1}, y_{t-n-1} .. y_{t-1}]``."""

    def __init__(self, lag, n_u, n_y, n_x, hidden=(64, 64), seed=0):
        if lag < 0:
            raise ValueError("lag must be >= 0")
        self.lag, self.n_u, self.n_y, self.n_x = int(lag), int(n_u), int(n_y), int(n_x)
        self.net = Mlp([self.d_in, *hidden, n_x], bypass=True, seed=seed, name="encoder")

    @property
    def window_len(self):
        return self.lag + 1

    @property
    def d_in(self):
        return self.window_len * (self.n_u + self.n_y)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, z):
        return mlp_forward(self.net, z)


def window_features(u, y, starts, lag):
    """Flattened encoder inputs for anchors ``starts`` of (normalized) series ``u, y``.

    Returns ``(len(starts), (lag + 1) * (n_u + n_y))``; window rows are ``t - lag - 1 .. t - 1``.
    """
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size and starts.min() < lag + 1:
        raise ValueError(f"incomplete lag window: anchor {starts.min()} needs index >= {lag + 1}")
    if starts.size and starts.max() > len(u):
        raise ValueError(f"anchor {starts.max()} beyond data length {len(u)}")
    idx = starts[:, None] + np.arange(-lag - 1, 0)[None, :]
    B = len(starts)
    return np.concatenate([u[idx].reshape(B, -1), y[idx].reshape(B, -1)], axis=1)


def encode(enc, w):
    """Initial state estimate for one :class:`LagWindow` (normalized units)."""
    if w.u.shape[0] != enc.window_len or w.u.shape[1] != enc.n_u or w.y.shape[1] != enc.n_y:
        raise ValueError(
            f"incomplete window: need {enc.window_len} samples of ({enc.n_u}, {enc.n_y}), "
            f"got u{w.u.shape}, y{w.y.shape}"
        )
    return enc(w.flat()).value
