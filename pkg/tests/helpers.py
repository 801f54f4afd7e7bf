"""Shared test utilities: finite-difference oracle and small model builders."""
import numpy as np

from lpvsubnet import diffnet as dn
from lpvsubnet.lpv_model import LpvSubnet


def flat_grads(params):
    return np.concatenate([(p.grad if p.grad is not None else np.zeros_like(p.value)).ravel() for p in params])


def analytic_grad(loss_fn, params):
    for p in params:
        p.grad = None
    loss = loss_fn()
    dn.backward(loss)
    return flat_grads(params)


def fd_grad(loss_fn, params, step=1e-6):
    """Central differences, one coordinate at a time."""
    out = []
    with dn.no_grad():
        for p in params:
            flat = p.value.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(loss_fn().value)
                flat[i] = orig - step
                fm = float(loss_fn().value)
                flat[i] = orig
                out.append((fp - fm) / (2 * step))
    return np.array(out)


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def randomize(net, rng, scale=0.3):
    """Fill every parameter with random values (matrices scaled to keep rollouts tame)."""
    for p in net.parameters():
        p.value[...] = rng.normal(scale=scale, size=p.value.shape)
    A = net.model.A.coeffs.value
    A[0] = 0.5 * A[0] / max(np.linalg.norm(A[0], 2), 1e-9)  # contraction in the 2-norm
    A[1:] *= 0.3  # scheduling can grow without bound, keep its effect on A mild
    if net.model.K is not None:
        net.model.K.coeffs.value[...] *= 0.3
    return net


def small_net(seed=0, n_x=2, n_p=2, lag=2, noise="innovation", mode="self_scheduled", width=6, n_u=1, n_y=1):
    net = LpvSubnet.build(n_x, n_u, n_y, n_p=n_p, lag=lag, noise=noise, mode=mode,
                          hidden=(width,), encoder_hidden=(width,), seed=seed)
    return randomize(net, np.random.default_rng(seed))


def set_constant_encoder(enc, x0):
    """Make the encoder output ``x0`` for every window."""
    for p in enc.parameters():
        p.value[...] = 0.0
    enc.net.biases[-1].value[...] = x0


def random_io(rng, N, n_u=1, n_y=1, n_p=None):
    u = rng.normal(size=(N, n_u))
    y = rng.normal(size=(N, n_y))
    p = None if n_p is None else rng.uniform(-1, 1, size=(N, n_p))
    return u, y, p
