"""Compare the compiled and numpy backends of the affine LPV kernel.

Times the raw kernel (forward + backward) at training-like sizes and one
full batch-loss gradient evaluation on the pendulum configuration.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time

import numpy as np

from lpvsubnet import diffnet as dn
from lpvsubnet import kernels
from lpvsubnet.loss import BatchSpec, NormalizedData, batch_loss
from lpvsubnet.lpv_model import LpvSubnet


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - tic)
    return best


def kernel_case(batch, n_i, rows, cols, repeat):
    rng = np.random.default_rng(0)
    M = rng.normal(size=(n_i, rows, cols))
    pe = np.concatenate([np.ones((batch, 1)), rng.normal(size=(batch, n_i - 1))], axis=1)
    x = rng.normal(size=(batch, cols))
    g = rng.normal(size=(batch, rows))

    def run():
        _, Mx = kernels.affine_matvec_forward(M, pe, x)
        kernels.affine_matvec_backward(M, pe, x, Mx, g, True)

    return _best_of(run, repeat)


def loss_case(repeat, T=60, batch=256, n_p=3, n_x=5):
    rng = np.random.default_rng(1)
    net = LpvSubnet.build(n_x, 1, 1, n_p=n_p, lag=5, noise="innovation", hidden=(32, 32),
                          encoder_hidden=(32, 32), seed=0)
    N = 2000
    nd = NormalizedData(net, rng.normal(size=(N, 1)), rng.normal(size=(N, 1)))
    spec = BatchSpec(np.sort(rng.choice(np.arange(6, N - T), batch, replace=False)), T)

    def run():
        for p in net.parameters():
            p.grad = None
        dn.backward(batch_loss(net, nd, spec))

    return _best_of(run, repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = ["python"]
    try:
        kernels.use_backend("cython")
        backends.append("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")
    cases = [(256, 4, 5, 5), (256, 2, 5, 1), (1024, 6, 8, 8)]
    print(f"{'case':<28}" + "".join(f"{b:>12}" for b in backends))
    for batch, n_i, r, c in cases:
        row = []
        for b in backends:
            kernels.use_backend(b)
            row.append(kernel_case(batch, n_i, r, c, args.repeat))
        print(f"{f'kernel B={batch} I={n_i} {r}x{c}':<28}" + "".join(f"{t * 1e6:>10.1f}us" for t in row))
    row = []
    for b in backends:
        kernels.use_backend(b)
        row.append(loss_case(max(2, args.repeat // 5)))
    print(f"{'batch loss + grad (T=60)':<28}" + "".join(f"{t * 1e3:>10.1f}ms" for t in row))


if __name__ == "__main__":
    main()
