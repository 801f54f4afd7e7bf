"""Synthetic data-generating systems, excitation design and dataset files."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .seeding import box_muller, child_seed, rng_for

EXPLOSION_LIMIT = 1e9


class SystemExplosionError(RuntimeError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"system state exploded (|x| > {EXPLOSION_LIMIT:g}) at step {step}")


@dataclass
class NonlinearSystemDef:
    """``x+ = f(x, u, w)``, ``y = h(x, u) + w``, optional oracle scheduling map ``phi(x, u)``."""

    name: str
    n_x: int
    n_u: int
    n_y: int
    f: Callable
    h: Callable
    phi: Optional[Callable] = None
    n_p: int = 0
    ts: float = 0.1
    params: dict = field(default_factory=dict)


@dataclass
class ExcitationConfig:
    amplitude: float = 0.5
    band: tuple = (1.0, 2.0)
    ts: float = 0.01
    sigma_v: float = 1.0 / 3.0
    length: int = 10_000

    def __post_init__(self):
        lo, hi = self.band
        if not (0 < lo < hi):
            raise ValueError(f"excitation band must satisfy 0 < lower < upper, got {self.band}")
        if self.amplitude < 0 or self.ts <= 0 or self.sigma_v < 0 or self.length <= 0:
            raise ValueError("excitation amplitude, ts, sigma_v and length must be positive")


@dataclass
class DataSet:
    u: np.ndarray
    y: np.ndarray
    p: Optional[np.ndarray] = None
    ts: float = 1.0
    seed: Optional[int] = None
    role: str = "data"
    meta: dict = field(default_factory=dict)
    norm: Optional[dict] = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64).reshape(len(self.u), -1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(len(self.y), -1)
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=np.float64).reshape(len(self.p), -1)
        lengths = {len(self.u), len(self.y)} | ({len(self.p)} if self.p is not None else set())
        if len(lengths) != 1:
            raise ValueError(f"unequal sequence lengths {sorted(lengths)}")

    def __len__(self):
        return len(self.u)

    @property
    def n_u(self):
        return self.u.shape[1]

    @property
    def n_y(self):
        return self.y.shape[1]

    def statistics(self):
        return {
            "u_mean": self.u.mean(axis=0), "u_std": self.u.std(axis=0),
            "y_mean": self.y.mean(axis=0), "y_std": self.y.std(axis=0),
        }


def generate_excitation(cfg, rng):
    """``u_k = a sin(omega ts k) + v_k`` with ``omega ~ U(band)`` and white ``v``; returns ``(u, omega)``."""
    omega = rng.uniform(*cfg.band)
    v = box_muller(rng, cfg.length, cfg.sigma_v)
    k = np.arange(cfg.length)
    return (cfg.amplitude * np.sin(omega * cfg.ts * k) + v)[:, None], omega


def simulate_system(sys, u, sigma_e=0.0, rng=None, noise="output_error"):
    """Forward recursion from ``x_0 = 0``; white output noise ``w ~ N(0, sigma_e^2 I)``.

    Under ``innovation`` the same ``w`` also drives ``f``; under
    ``output_error`` ``f`` receives zeros.
    """
    u = np.asarray(u, dtype=np.float64).reshape(len(u), sys.n_u)
    if not np.all(np.isfinite(u)):
        raise ValueError("input contains non-finite samples")
    N = len(u)
    if sigma_e > 0:
        if rng is None:
            raise ValueError("a random generator is needed for noisy simulation")
        w = box_muller(rng, N * sys.n_y, sigma_e).reshape(N, sys.n_y)
    else:
        w = np.zeros((N, sys.n_y))
    x = np.zeros(sys.n_x)
    y = np.empty((N, sys.n_y))
    p = np.empty((N, sys.n_p)) if sys.phi is not None else None
    zero_w = np.zeros(sys.n_y)
    for k in range(N):
        y[k] = sys.h(x, u[k]) + w[k]
        if p is not None:
            p[k] = sys.phi(x, u[k])
        x = sys.f(x, u[k], w[k] if noise == "innovation" else zero_w)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > EXPLOSION_LIMIT:
            raise SystemExplosionError(k)
    return DataSet(u, y, p, ts=sys.ts)


def sigma_for_snr(sys, u, snr_db):
    """Output noise std giving ``20 log10(std(h) / sigma_e) = snr_db`` on a noiseless pilot run."""
    pilot = simulate_system(sys, u)
    return float(np.mean(pilot.y.std(axis=0))) / 10.0 ** (snr_db / 20.0)


def empirical_snr_db(clean_y, noisy_y):
    clean_y, noisy_y = np.asarray(clean_y), np.asarray(noisy_y)
    return 20.0 * np.log10(np.std(clean_y) / np.std(noisy_y - clean_y))


PENDULUM_DEFAULTS = {"omega0_sq": 9.0, "damping": 2.0, "gain": 10.0, "ts": 0.1}


def builtin_pendulum(omega0_sq=None, damping=None, gain=None, ts=None):
    """Forward-Euler forced pendulum with output ``y = x_2``.

    ``x1+ = x1 + ts x2``, ``x2+ = x2 + ts (-omega0^2 sin x1 - d x2 + c u)``.
    The oracle ``p = sinc(x1)`` makes ``-omega0^2 sin x1 = -omega0^2 p x1`` exact.
    """
    prm = dict(PENDULUM_DEFAULTS)
    for key, val in (("omega0_sq", omega0_sq), ("damping", damping), ("gain", gain), ("ts", ts)):
        if val is not None:
            prm[key] = float(val)
    w2, d, c, T = prm["omega0_sq"], prm["damping"], prm["gain"], prm["ts"]

    def f(x, u, w):
        return np.array([x[0] + T * x[1], x[1] + T * (-w2 * np.sin(x[0]) - d * x[1] + c * u[0])])

    def h(x, u):
        return np.array([x[1]])

    def phi(x, u):
        return np.array([np.sinc(x[0] / np.pi)])

    return NonlinearSystemDef("pendulum", 2, 1, 1, f, h, phi, n_p=1, ts=T, params=prm)


def random_stable_lti(seed, n_x=2, n_u=1, n_y=1, radius=0.9):
    """Random ``(A, B, C, D)`` with spectral radius ``radius`` and ``D = 0``."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, (n_x, n_x))
    A *= radius / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(n_x, n_u))
    C = rng.normal(size=(n_y, n_x))
    return A, B, C, np.zeros((n_y, n_u))


def builtin_lti(seed=0, n_x=2, ts=0.1, radius=0.9):
    A, B, C, D = random_stable_lti(seed, n_x, radius=radius)

    def f(x, u, w):
        return A @ x + B @ u

    def h(x, u):
        return C @ x + D @ u

    prm = {"seed": seed, "A": A.tolist(), "B": B.tolist(), "C": C.tolist(), "D": D.tolist()}
    return NonlinearSystemDef("lti", n_x, 1, 1, f, h, ts=ts, params=prm)


SPLIT_ROLES = ("estimation", "validation", "test")


def split_dataset(sys, excitation, n_est, n_val, n_test, master_seed=0, snr_db=None,
                  sigma_e=None, noise="output_error"):
    """Three independent realizations (fresh ``omega`` and noise each).

    The noise level is fixed from the estimation realization (``snr_db``) or
    given directly (``sigma_e``). Normalization statistics of the estimation
    set are copied to all three.
    """
    sizes = dict(zip(SPLIT_ROLES, (n_est, n_val, n_test)))
    if any(int(n) <= 0 for n in sizes.values()):
        raise ValueError(f"split sizes must be positive, got {sizes}")
    out = {}
    for role, n in sizes.items():
        cfg = ExcitationConfig(excitation.amplitude, tuple(excitation.band), excitation.ts,
                               excitation.sigma_v, int(n))
        u, omega = generate_excitation(cfg, rng_for(master_seed, f"excitation/{role}"))
        if sigma_e is None:
            sigma_e = sigma_for_snr(sys, u, snr_db) if snr_db is not None else 0.0
        ds = simulate_system(sys, u, sigma_e, rng_for(master_seed, f"noise/{role}"), noise)
        ds.role = role
        ds.seed = child_seed(master_seed, role)
        ds.meta = {
            "system": sys.name, "system_params": sys.params, "ts": sys.ts, "role": role,
            "master_seed": int(master_seed), "omega": omega, "sigma_e": sigma_e, "snr_db": snr_db,
            "noise": noise, "excitation": {"amplitude": cfg.amplitude, "band": list(cfg.band),
                                           "ts": cfg.ts, "sigma_v": cfg.sigma_v},
        }
        out[role] = ds
    stats = out["estimation"].statistics()
    for ds in out.values():
        ds.norm = {k: v.copy() for k, v in stats.items()}
    return out["estimation"], out["validation"], out["test"]


# -- files -------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_dataset(ds, path):
    """CSV ``k,u_1..,y_1..[,p_1..]`` plus a ``.json`` metadata sidecar."""
    path = Path(path)
    header = ["k"] + [f"u_{i + 1}" for i in range(ds.n_u)] + [f"y_{i + 1}" for i in range(ds.n_y)]
    if ds.p is not None:
        header += [f"p_{i + 1}" for i in range(ds.p.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(ds)):
            vals = list(ds.u[k]) + list(ds.y[k]) + (list(ds.p[k]) if ds.p is not None else [])
            fh.write(str(k) + "," + ",".join(_fmt(v) for v in vals) + "\n")
    meta = dict(ds.meta, ts=ds.ts, role=ds.role, seed=ds.seed, length=len(ds))
    if ds.norm is not None:
        meta["norm"] = {k: np.asarray(v).tolist() for k, v in ds.norm.items()}
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(path):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        cols = {"u": [], "y": [], "p": []}
        for j, name in enumerate(header):
            prefix = name.split("_")[0]
            if prefix in cols:
                cols[prefix].append(j)
        if not cols["u"] or not cols["y"]:
            raise ValueError(f"{path}: header needs u_* and y_* columns, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row") from None
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    norm = meta.pop("norm", None)
    if norm is not None:
        norm = {k: np.asarray(v, dtype=np.float64) for k, v in norm.items()}
    p = data[:, cols["p"]] if cols["p"] else None
    return DataSet(data[:, cols["u"]], data[:, cols["y"]], p, ts=meta.get("ts", 1.0),
                   seed=meta.get("seed"), role=meta.get("role", "data"), meta=meta, norm=norm)
