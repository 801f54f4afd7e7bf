"""Pure numpy implementation of the affine LPV mat-vec kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled kernels are benchmarked and tested against.

Shapes: ``M`` is ``(I, R, C)`` with ``I = 1 + n_p``, ``pe`` is the extended
scheduling ``[1, p]`` of shape ``(B, I)``, ``x`` is ``(B, C)``.
"""
import numpy as np


def affine_matvec_forward(M, pe, x):
    I, R, C = M.shape
    Mx = (x @ M.reshape(I * R, C).T).reshape(x.shape[0], I, R)
    return np.einsum("bi,bir->br", pe, Mx), Mx


def affine_matvec_backward(M, pe, x, Mx, g, need_p):
    I, R, C = M.shape
    G = (pe[:, :, None] * g[:, None, :]).reshape(x.shape[0], I * R)
    dM = (G.T @ x).reshape(I, R, C)
    dx = G @ M.reshape(I * R, C)
    dp = np.einsum("bir,br->bi", Mx[:, 1:, :], g) if need_p else None
    return dM, dx, dp
