"""Adam training of the joint model under the batch prediction loss."""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import diffnet as dn
from .loss import EpochSampler, NormalizedData, admissible_span, batch_loss, subsection_loss
from .lpv_model import DivergenceError
from .metrics import bfr
from .seeding import child_seed, rng_for

log = logging.getLogger(__name__)

TELEMETRY_HEADER = "update,T,batch_loss,val_loss,val_BFR,seconds"


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    batch_size: int = 256
    T_start: int = 5
    T_final: int = 60
    warmup: int = 1000
    max_updates: int = 10_000
    val_period: int = 500
    patience: int = 20
    lr: float = 1e-3
    lr_final: Optional[float] = None  # None: constant lr; else geometric decay after warm-up
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    threads: int = 1
    max_skips: int = 10
    n_starts: int = 1
    screen_updates: int = 1000

    def __post_init__(self):
        if not 1 <= self.T_start <= self.T_final:
            raise ValueError(f"need 1 <= T_start <= T_final, got {self.T_start}, {self.T_final}")
        for name in ("batch_size", "val_period", "patience", "threads", "max_skips", "n_starts", "screen_updates"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_updates < 0 or self.warmup < 0:
            raise ValueError("max_updates and warmup must be non-negative")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise ValueError("learning rates must be positive")
        if self.n_starts > 1 and self.n_starts * self.screen_updates > self.max_updates:
            raise ValueError("n_starts * screen_updates exceeds max_updates")


def schedule_T(update, cfg):
    """Linear ramp ``T_start -> T_final`` over ``cfg.warmup`` updates, rounded half up."""
    if update < 0:
        raise ValueError("update index must be >= 0")
    if cfg.warmup == 0 or update >= cfg.warmup:
        return cfg.T_final
    return int(np.floor(cfg.T_start + (cfg.T_final - cfg.T_start) * update / cfg.warmup + 0.5))


def schedule_lr(update, cfg):
    """Constant ``lr`` during warm-up, then geometric decay reaching ``lr_final`` at the last update."""
    if cfg.lr_final is None or update <= cfg.warmup or cfg.max_updates - 1 <= cfg.warmup:
        return cfg.lr
    frac = min(1.0, (update - cfg.warmup) / (cfg.max_updates - 1 - cfg.warmup))
    return cfg.lr * (cfg.lr_final / cfg.lr) ** frac


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction.

    Returns ``False`` (and leaves params and state untouched) when a gradient
    is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            return False
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return True


@dataclass
class TrainingHistory:
    updates: list = field(default_factory=list)
    T: list = field(default_factory=list)
    batch_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    validations: list = field(default_factory=list)  # (update, val_loss, val_bfr)
    skipped: list = field(default_factory=list)  # (update, reason)
    best_update: int = -1
    best_val_loss: float = float("inf")
    best_val_bfr: float = float("nan")
    stopped_early: bool = False


def evaluate_prediction(net, data):
    """Full-span prediction loss and BFR (data units) on ``data``; ``inf``/0 if the rollout diverges."""
    nd = NormalizedData.of(net, data)
    lag = net.enc.lag
    T = admissible_span(len(nd), lag)
    from .lpv_model import rollout_graph

    try:
        with dn.no_grad():
            y_hats, _, _ = rollout_graph(net.model, net.sched, net.enc, net.mode, nd.U, nd.Y, [lag + 1], T, P=nd.P)
    except DivergenceError:
        return float("inf"), 0.0
    yh = np.concatenate([n.value for n in y_hats])
    y = nd.Y[lag + 1:]
    loss = float(np.sum((yh - y) ** 2) / T)
    m = net.model
    return loss, bfr(m.denormalize_y(y), m.denormalize_y(yh))


def train(net, est, val, cfg, telemetry=None, update_offset=0, incumbent=None):
    """Minimize the batch loss with Adam; returns the history and leaves ``net`` at the best checkpoint.

    Runs the updates ``update_offset .. cfg.max_updates - 1`` of the schedule
    (a nonzero offset continues a run with fresh optimizer moments).
    ``incumbent`` is ``(val_loss, val_bfr, update)`` already achieved by the
    starting parameters; the run only replaces them by something better.
    ``telemetry`` is an optional writable text stream receiving one CSV row per update.
    """
    lag = net.enc.lag
    nd_est, nd_val = NormalizedData.of(net, est), NormalizedData.of(net, val)
    for name, nd in (("estimation", nd_est), ("validation", nd_val)):
        if len(nd) < lag + 1 + cfg.T_final:
            raise ValueError(f"{name} set too short for lag {lag} and T_final {cfg.T_final}")
    params = net.parameters()
    state = AdamState.zeros_like([p.value for p in params])
    rng = rng_for(cfg.seed, "batches" if update_offset == 0 else f"batches@{update_offset}")
    hist = TrainingHistory()
    best_state = net.get_state()
    if incumbent is not None:
        hist.best_val_loss, hist.best_val_bfr, hist.best_update = incumbent
    sampler = None
    since_best = 0
    consecutive_skips = 0
    if telemetry is not None and update_offset == 0:
        telemetry.write(TELEMETRY_HEADER + "\n")

    for update in range(update_offset, cfg.max_updates):
        tic = time.perf_counter()
        T = schedule_T(update, cfg)
        if sampler is None or sampler.T != T:
            sampler = EpochSampler(rng, len(nd_est), T, lag, min(cfg.batch_size, len(nd_est) - T - lag))
        batch = sampler.next()
        for p in params:
            p.grad = None
        reason = None
        try:
            loss = batch_loss(net, nd_est, batch, threads=cfg.threads)
            dn.backward(loss)
            loss_value = float(loss.value)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
            lr = schedule_lr(update, cfg)
            if not adam_step([p.value for p in params], grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps):
                reason = "non-finite gradient"
        except DivergenceError as exc:
            loss_value, reason = float("nan"), str(exc)
        if reason is None:
            consecutive_skips = 0
        else:
            consecutive_skips += 1
            hist.skipped.append((update, reason))
            log.warning("update %d skipped: %s", update, reason)
            if consecutive_skips >= cfg.max_skips:
                raise TrainingAborted(
                    f"{consecutive_skips} consecutive skipped updates (last at {update}: {reason})"
                )

        val_loss = val_bfr = None
        last = update == cfg.max_updates - 1
        if (update + 1) % cfg.val_period == 0 or last:
            val_loss, val_bfr = evaluate_prediction(net, nd_val)
            hist.validations.append((update + 1, val_loss, val_bfr))
            if val_loss < hist.best_val_loss:
                hist.best_val_loss, hist.best_val_bfr, hist.best_update = val_loss, val_bfr, update + 1
                best_state = net.get_state()
                since_best = 0
            else:
                since_best += 1
            log.info("update %d  T=%d  batch %.3e  val %.3e  BFR %.2f%%", update + 1, T, loss_value, val_loss, val_bfr)

        elapsed = time.perf_counter() - tic
        hist.updates.append(update + 1)
        hist.T.append(T)
        hist.batch_loss.append(loss_value)
        hist.seconds.append(elapsed)
        if telemetry is not None:
            vl = "" if val_loss is None else repr(val_loss)
            vb = "" if val_bfr is None else repr(val_bfr)
            telemetry.write(f"{update + 1},{T},{loss_value!r},{vl},{vb},{elapsed!r}\n")
        if val_loss is not None and since_best >= cfg.patience:
            hist.stopped_early = True
            break

    net.set_state(best_state)
    return hist


@dataclass
class MultiStartResult:
    net: object
    history: TrainingHistory
    screening: list  # (start, seed, val_loss, val_bfr) after the screening updates
    chosen: int


def train_multistart(build, est, val, cfg, telemetry=None):
    """Screen ``cfg.n_starts`` initializations, then continue the best one.

    ``build(seed)`` returns a fresh network. Each start gets
    ``cfg.screen_updates`` updates; the start with the lowest validation loss
    continues from update ``n_starts * screen_updates`` to ``cfg.max_updates``,
    so the total number of updates never exceeds the budget. With
    ``n_starts == 1`` this is plain :func:`train` on ``build(cfg.seed)``.
    """
    if cfg.n_starts == 1:
        net = build(cfg.seed)
        return MultiStartResult(net, train(net, est, val, cfg, telemetry), [], 0)
    screen_cfg = replace(cfg, max_updates=cfg.screen_updates, patience=10**9, n_starts=1)
    screening, best = [], None
    for i in range(cfg.n_starts):
        seed = cfg.seed if i == 0 else child_seed(cfg.seed, f"start/{i}")
        net = build(seed)
        try:
            hist = train(net, est, val, screen_cfg)
            loss, fit = hist.best_val_loss, hist.best_val_bfr
        except TrainingAborted as exc:
            log.warning("start %d aborted: %s", i, exc)
            loss, fit = float("inf"), 0.0
        screening.append((i, seed, loss, fit))
        log.info("start %d (seed %d): val loss %.3e  BFR %.2f%%", i, seed, loss, fit)
        if best is None or loss < best[0]:
            best = (loss, i, net)
    _, chosen, net = best
    screened = screening[chosen]
    offset = cfg.n_starts * cfg.screen_updates
    if telemetry is not None:
        telemetry.write(TELEMETRY_HEADER + "\n")
    hist = train(net, est, val, cfg, telemetry, update_offset=offset,
                 incumbent=(screened[2], screened[3], offset))
    return MultiStartResult(net, hist, screening, chosen)


def descent_check(net, data, batch, lr=1e-4):
    """Loss on ``batch`` before and after one plain Adam step (sanity helper)."""
    params = net.parameters()
    for p in params:
        p.grad = None
    loss = subsection_loss(net, data, batch.indices, batch.T)
    dn.backward(loss)
    state = AdamState.zeros_like([p.value for p in params])
    adam_step([p.value for p in params], [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params],
              state, lr=lr)
    with dn.no_grad():
        after = subsection_loss(net, data, batch.indices, batch.T)
    return float(loss.value), float(after.value)
