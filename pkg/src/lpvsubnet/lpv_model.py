"""Affine LPV state-space predictor with a partitioned neural scheduling map.

All recursions run on normalized signals: ``u`` and ``y`` are standardized
with the statistics stored in :class:`LpvSsModel` before they reach any
matrix or network, and predictions are mapped back on output.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import diffnet as dn
from .encoder import EncoderNet, window_features
from .seeding import child_seed

NOISE_STRUCTURES = ("innovation", "output_error")
MODES = ("self_scheduled", "external", "oracle")
MODE_ALIASES = {"self": "self_scheduled", "ext": "external"}
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite or exploding state."""

    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"rollout diverged at step {step}{': ' + detail if detail else ''}")


def canonical_mode(mode):
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown scheduling mode {mode!r}; expected one of {MODES}")
    return mode


class AffineMatrixFunction:
    """``M(p) = M_0 + sum_i M_i p_i``; the stack ``[M_0, M_1, ...]`` is one trainable leaf."""

    def __init__(self, rows, cols, n_p, name="M"):
        self.coeffs = dn.parameter(np.zeros((1 + n_p, rows, cols)), name)

    @property
    def n_p(self):
        return self.coeffs.value.shape[0] - 1

    @property
    def shape(self):
        return self.coeffs.value.shape[1:]

    def evaluate(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        if p.shape != (self.n_p,):
            raise dn.DimensionError(f"{self.coeffs.name}: expected {self.n_p} scheduling values, got {p.shape}")
        M = self.coeffs.value
        return M[0] + np.tensordot(p, M[1:], axes=1)

    def apply(self, p, x):
        return dn.affine_matvec(self.coeffs, p, x)


def affine_eval(M, p):
    return M.evaluate(p)


def default_partition(n_p):
    n_px = math.ceil(n_p / 2)
    return n_px, n_p - n_px


def _glorot(rng, rows, cols):
    lim = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-lim, lim, (rows, cols))


class LpvSsModel:
    """Affine LPV-SS predictor matrices and normalization statistics.

    ``A, B, K`` depend on the first ``n_px`` scheduling channels and ``C, D``
    on the remaining ``n_py``. Under ``output_error`` there is no ``K``.
    """

    def __init__(self, n_x, n_u, n_y, n_p=0, n_px=None, noise="output_error", seed=0):
        if noise not in NOISE_STRUCTURES:
            raise ValueError(f"noise structure must be one of {NOISE_STRUCTURES}, got {noise!r}")
        if min(n_x, n_u, n_y) <= 0 or n_p < 0:
            raise ValueError("dimensions must be positive")
        if n_px is None:
            n_px, n_py = default_partition(n_p)
        else:
            n_py = n_p - n_px
            if n_px < 0 or n_py < 0:
                raise ValueError(f"partition n_px={n_px} invalid for n_p={n_p}")
        self.n_x, self.n_u, self.n_y = int(n_x), int(n_u), int(n_y)
        self.n_px, self.n_py = int(n_px), int(n_py)
        self.noise = noise
        self.A = AffineMatrixFunction(n_x, n_x, n_px, "A")
        self.B = AffineMatrixFunction(n_x, n_u, n_px, "B")
        self.C = AffineMatrixFunction(n_y, n_x, n_py, "C")
        self.D = AffineMatrixFunction(n_y, n_u, n_py, "D")
        self.K = AffineMatrixFunction(n_x, n_y, n_px, "K") if noise == "innovation" else None
        self.u_mean, self.u_std = np.zeros(n_u), np.ones(n_u)
        self.y_mean, self.y_std = np.zeros(n_y), np.ones(n_y)
        self._init(seed)

    def _init(self, seed):
        rng = np.random.default_rng(seed)
        A0 = rng.uniform(-1.0, 1.0, (self.n_x, self.n_x))
        radius = np.max(np.abs(np.linalg.eigvals(A0)))
        if radius > 0:
            A0 *= 0.9 / radius
        self.A.coeffs.value[0] = A0
        self.B.coeffs.value[0] = _glorot(rng, self.n_x, self.n_u)
        self.C.coeffs.value[0] = _glorot(rng, self.n_y, self.n_x)

    @property
    def n_p(self):
        return self.n_px + self.n_py

    @property
    def innovation(self):
        return self.noise == "innovation"

    def matrices(self):
        return {k: getattr(self, k) for k in "ABCDK" if getattr(self, k) is not None}

    def parameters(self):
        return [m.coeffs for m in self.matrices().values()]

    def set_normalization(self, u_mean, u_std, y_mean, y_std):
        def clean(std):
            std = np.atleast_1d(np.asarray(std, dtype=np.float64)).copy()
            std[~(std > 0)] = 1.0
            return std

        self.u_mean = np.atleast_1d(np.asarray(u_mean, dtype=np.float64)).copy()
        self.y_mean = np.atleast_1d(np.asarray(y_mean, dtype=np.float64)).copy()
        self.u_std, self.y_std = clean(u_std), clean(y_std)

    def normalize_u(self, u):
        return (np.asarray(u, dtype=np.float64).reshape(-1, self.n_u) - self.u_mean) / self.u_std

    def normalize_y(self, y):
        return (np.asarray(y, dtype=np.float64).reshape(-1, self.n_y) - self.y_mean) / self.y_std

    def denormalize_y(self, y):
        return np.asarray(y) * self.y_std + self.y_mean


class SchedulingNet:
    """Partitioned p-net: ``phi_x`` feeds ``A, B, K`` and ``phi_y`` feeds ``C, D``.

    ``phi_y`` sees ``(x, u)`` only. ``phi_x`` additionally sees ``y`` under
    the innovation noise structure.
    """

    def __init__(self, model, hidden=(64, 64), seed=0):
        self.innovation = model.innovation
        self.n_x, self.n_u, self.n_y = model.n_x, model.n_u, model.n_y
        dx = model.n_x + model.n_u + (model.n_y if self.innovation else 0)
        self.phi_x = (
            dn.Mlp([dx, *hidden, model.n_px], bypass=True, seed=child_seed(seed, "phi_x"), name="phi_x")
            if model.n_px
            else None
        )
        self.phi_y = (
            dn.Mlp([model.n_x + model.n_u, *hidden, model.n_py], bypass=True, seed=child_seed(seed, "phi_y"), name="phi_y")
            if model.n_py
            else None
        )

    def parameters(self):
        out = []
        for net in (self.phi_x, self.phi_y):
            if net is not None:
                out += net.parameters()
        return out

    def eval_y(self, x, u):
        if self.phi_y is None:
            return None
        return self.phi_y(dn.concat([x, u]))

    def eval_x(self, x, u, y=None):
        if self.phi_x is None:
            return None
        if self.innovation:
            if y is None:
                raise ValueError("innovation scheduling map needs the measured output y")
            return self.phi_x(dn.concat([x, u, y]))
        if y is not None:
            raise ValueError("output-error scheduling map must not receive y")
        return self.phi_x(dn.concat([x, u]))


def _cat_p(px, py, B):
    parts = [p.value for p in (px, py) if p is not None]
    return np.concatenate(parts, axis=1) if parts else np.zeros((B, 0))


def _promote(v, d):
    v = np.asarray(v.value if isinstance(v, dn.Node) else v, dtype=np.float64)
    return v.reshape(-1, d)


def scheduling_eval(sched, x, u, y=None):
    """``p_hat = [phi_x; phi_y]`` for a vector or a batch of rows (normalized units)."""
    if sched.innovation and y is None:
        raise ValueError("innovation scheduling map needs the measured output y")
    if not sched.innovation and y is not None:
        raise ValueError("output-error scheduling map must not receive y")
    single = np.ndim(x.value if isinstance(x, dn.Node) else x) == 1
    x, u = _promote(x, sched.n_x), _promote(u, sched.n_u)
    y = None if y is None else _promote(y, sched.n_y)
    with dn.no_grad():
        py = sched.eval_y(x, u)
        px = sched.eval_x(x, u, y)
    p = _cat_p(px, py, x.shape[0])
    return p[0] if single else p


@dataclass
class PredictorStepResult:
    x_next: object
    y_hat: object
    e_hat: object
    p_hat: np.ndarray


def _check_state(x, step):
    v = x.value
    if not np.all(np.isfinite(v)):
        raise DivergenceError(step, "non-finite state")
    if v.size and np.max(np.abs(v)) > DIVERGENCE_LIMIT:
        raise DivergenceError(step, f"|x| exceeded {DIVERGENCE_LIMIT:g}")


def _step(model, x, u, y, px, py, step, simulate=False, sched=None, x_sched=None):
    """One predictor step on batch nodes; computes ``px``/``py`` from ``sched`` when not given."""
    if sched is not None:
        xs = x if x_sched is None else x_sched
        py = sched.eval_y(xs, u)
    y_hat = dn.add(model.C.apply(py, x), model.D.apply(py, u))
    e_hat = None
    if y is not None:
        e_hat = dn.sub(y, y_hat)
    if sched is not None:
        y_for_px = None
        if sched.innovation:
            y_for_px = y_hat if (simulate or y is None) else y
        px = sched.eval_x(xs, u, y_for_px)
    x_next = dn.add(model.A.apply(px, x), model.B.apply(px, u))
    if model.K is not None and not simulate:
        if e_hat is None:
            raise ValueError("innovation predictor step needs the measured output y")
        x_next = dn.add(x_next, model.K.apply(px, e_hat))
    _check_state(x_next, step)
    return x_next, y_hat, e_hat, px, py


def predictor_step(model, sched, x, u, y=None, p=None, step=0):
    """One step of the predictor for a single vector or a batch of rows.

    Pass ``p`` to bypass the scheduling map (oracle scheduling). Values are
    in normalized units; returns numpy arrays.
    """
    single = np.ndim(x.value if isinstance(x, dn.Node) else x) == 1
    xb, ub = _promote(x, model.n_x), _promote(u, model.n_u)
    yb = None if y is None else _promote(y, model.n_y)
    with dn.no_grad():
        if p is None:
            res = _step(model, dn.as_node(xb), dn.as_node(ub), None if yb is None else dn.as_node(yb),
                        None, None, step, sched=sched)
        else:
            pb = _promote(p, model.n_p)
            px = dn.constant(pb[:, : model.n_px]) if model.n_px else None
            py = dn.constant(pb[:, model.n_px:]) if model.n_py else None
            res = _step(model, dn.as_node(xb), dn.as_node(ub), None if yb is None else dn.as_node(yb),
                        px, py, step)
    x_next, y_hat, e_hat, px, py = res
    out = [x_next.value, y_hat.value, None if e_hat is None else e_hat.value, _cat_p(px, py, xb.shape[0])]
    if single:
        out = [None if v is None else v[0] for v in out]
    return PredictorStepResult(*out)


def rollout_graph(model, sched, enc, mode, U, Y, starts, T, P=None, simulate=False, x0=None, record=False):
    """Batched subsection rollouts on normalized data.

    Each subsection ``t`` in ``starts`` is initialized by the encoder on rows
    ``t - lag - 1 .. t - 1`` (or by ``x0``) and propagated ``T`` steps.
    Returns ``(y_hats, xs, ps)``: a list of ``T`` output nodes ``(B, n_y)``
    and, if ``record``, state and scheduling trajectories as arrays.
    """
    mode = canonical_mode(mode)
    starts = np.asarray(starts, dtype=np.int64)
    B = len(starts)
    if B == 0:
        raise ValueError("no subsections to roll out")
    if T < 1 or starts.max() + T > len(U):
        raise ValueError(f"window too short: need {starts.max() + T} samples, have {len(U)}")
    if mode == "oracle" and P is None:
        raise ValueError("oracle scheduling needs the scheduling signal p in the data")
    if x0 is None:
        if enc is None:
            raise ValueError("an encoder is needed to initialize the state")
        x = enc(window_features(U, Y, starts, enc.lag))
    else:
        x = dn.as_node(np.broadcast_to(np.asarray(x0, dtype=np.float64), (B, model.n_x)).copy())

    px_all = py_all = None
    if mode == "external":
        if enc is None:
            raise ValueError("external scheduling needs an encoder")
        anchors = (starts[None, :] + np.arange(T)[:, None]).ravel()
        x_enc = enc(window_features(U, Y, anchors, enc.lag))
        u_all = dn.constant(U[anchors])
        py_all = sched.eval_y(x_enc, u_all)
        if sched.phi_x is not None and sched.innovation:
            px_all = sched.eval_x(x_enc, u_all, dn.constant(Y[anchors]))
        elif sched.phi_x is not None:
            px_all = sched.eval_x(x_enc, u_all)

    y_hats, xs, ps = [], [], []
    for k in range(T):
        idx = starts + k
        u = dn.constant(U[idx])
        y = None if simulate else dn.constant(Y[idx])
        if mode == "self_scheduled":
            step_sched, px, py = sched, None, None
        else:
            step_sched = None
            if mode == "external":
                px = None if px_all is None else dn.rows(px_all, k * B, (k + 1) * B)
                py = None if py_all is None else dn.rows(py_all, k * B, (k + 1) * B)
            else:
                pk = np.asarray(P[idx], dtype=np.float64).reshape(B, -1)
                if pk.shape[1] != model.n_p:
                    raise dn.DimensionError(f"oracle p has {pk.shape[1]} channels, model expects {model.n_p}")
                px = dn.constant(pk[:, : model.n_px]) if model.n_px else None
                py = dn.constant(pk[:, model.n_px:]) if model.n_py else None
        if record:
            xs.append(x.value)
        x, y_hat, _, px, py = _step(model, x, u, y, px, py, k, simulate=simulate, sched=step_sched)
        y_hats.append(y_hat)
        if record:
            ps.append(_cat_p(px, py, B))
    if record:
        xs.append(x.value)
    return y_hats, xs, ps


@dataclass
class RolloutResult:
    """Predicted outputs (data units), normalized states and scheduling, first predicted index."""

    y_hat: np.ndarray
    x_hat: np.ndarray
    p_hat: np.ndarray
    start: int


def _prepare(model, u, y, p):
    U = model.normalize_u(u)
    Y = None if y is None else model.normalize_y(y)
    P = None if p is None else np.asarray(p, dtype=np.float64).reshape(len(U), -1)
    return U, Y, P


def _result(model, y_hats, xs, ps, start):
    yh = np.stack([n.value[0] for n in y_hats])
    return RolloutResult(
        model.denormalize_y(yh), np.stack([v[0] for v in xs]), np.stack([v[0] for v in ps]), start
    )


def rollout(model, sched, enc, u, y, T, mode="self_scheduled", p=None):
    """One ``T``-step prediction subsection anchored at ``t = lag + 1`` of the given window."""
    U, Y, P = _prepare(model, u, y, p)
    if Y is None:
        raise ValueError("prediction rollouts need measured outputs")
    t = enc.lag + 1
    if len(U) < t + T:
        raise ValueError(f"window shorter than lag + 1 + T = {t + T} samples")
    with dn.no_grad():
        y_hats, xs, ps = rollout_graph(model, sched, enc, mode, U, Y, [t], T, P=P, record=True)
    return _result(model, y_hats, xs, ps, t)


def simulate(model, sched, u, mode="self_scheduled", enc=None, y=None, p=None, x0=None):
    """Free-run response with the innovation forced to zero.

    Without ``x0`` the state is encoded from the first ``lag + 1`` samples of
    ``(u, y)`` and simulation starts right after them; ``y`` is not used
    afterwards except as the external scheduling window in ``external`` mode.
    """
    mode = canonical_mode(mode)
    U, Y, P = _prepare(model, u, y, p)
    if x0 is None or mode == "external":
        if enc is None or Y is None:
            raise ValueError(f"{mode} simulation needs an encoder and measured outputs")
        start = enc.lag + 1
    else:
        start = 0
    T = len(U) - start
    with dn.no_grad():
        y_hats, xs, ps = rollout_graph(
            model, sched, enc, mode, U, Y, [start], T, P=P, simulate=True, x0=x0, record=True
        )
    return _result(model, y_hats, xs, ps, start)


class LpvSubnet:
    """Model, scheduling map and encoder estimated jointly, plus the scheduling mode."""

    def __init__(self, model, sched, enc, mode="self_scheduled"):
        self.model, self.sched, self.enc = model, sched, enc
        self.mode = canonical_mode(mode)

    @classmethod
    def build(cls, n_x, n_u, n_y, n_p=0, lag=None, noise="output_error", mode="self_scheduled",
              n_px=None, hidden=(64, 64), encoder_hidden=(64, 64), seed=0):
        lag = n_x if lag is None else lag
        model = LpvSsModel(n_x, n_u, n_y, n_p, n_px=n_px, noise=noise, seed=child_seed(seed, "model"))
        sched = SchedulingNet(model, hidden=hidden, seed=child_seed(seed, "sched"))
        enc = EncoderNet(lag, n_u, n_y, n_x, hidden=encoder_hidden, seed=child_seed(seed, "encoder"))
        return cls(model, sched, enc, mode)

    def parameters(self):
        return self.model.parameters() + self.sched.parameters() + self.enc.parameters()

    def get_state(self):
        return [p.value.copy() for p in self.parameters()]

    def set_state(self, values):
        for p, v in zip(self.parameters(), values):
            p.value[...] = v

    def rollout(self, u, y, T, p=None, mode=None):
        return rollout(self.model, self.sched, self.enc, u, y, T, mode or self.mode, p)

    def simulate(self, u, y=None, p=None, mode=None, x0=None):
        return simulate(self.model, self.sched, u, mode or self.mode, self.enc, y, p, x0)
