"""Fit metrics: best fit rate, RMS error and the output-noise BFR ceiling."""
from dataclasses import dataclass

import numpy as np


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(len(a), -1)


def bfr(y, y_hat):
    """Best fit rate in percent, using mean Euclidean norms (not RMS).

    ``max(1 - mean||y - y_hat|| / mean||y - mean(y)||, 0) * 100``.
    """
    y, y_hat = _as_2d(y), _as_2d(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if len(y) < 2:
        raise ValueError("BFR needs at least 2 samples")
    denom = np.mean(np.linalg.norm(y - y.mean(axis=0), axis=1))
    if denom == 0.0:
        raise ValueError("BFR undefined for a constant output sequence")
    num = np.mean(np.linalg.norm(y - y_hat, axis=1))
    return max(1.0 - num / denom, 0.0) * 100.0


def noise_ceiling_bfr(snr_db):
    """BFR of the exact noiseless predictor under additive output noise at amplitude SNR ``snr_db``."""
    snr_db = float(snr_db)
    if np.isnan(snr_db):
        raise ValueError("SNR must not be NaN")
    return (1.0 - 10.0 ** (-snr_db / 20.0)) * 100.0


def rms(seq):
    seq = _as_2d(seq)
    if seq.size == 0:
        raise ValueError("rms of an empty sequence")
    return float(np.sqrt(np.mean(np.sum(seq * seq, axis=1))))


@dataclass
class FitReport:
    bfr: float
    rms: float
    ceiling_bfr: float
    errors: np.ndarray

    CSV_HEADER = "bfr,rms,ceiling_bfr"

    def csv_row(self):
        return f"{self.bfr!r},{self.rms!r},{self.ceiling_bfr!r}"

    def __str__(self):
        return f"BFR {self.bfr:.2f}%  RMS {self.rms:.6g}  ceiling {self.ceiling_bfr:.2f}%"


def fit_report(y, y_hat, snr_db=float("inf")):
    y, y_hat = _as_2d(y), _as_2d(y_hat)
    return FitReport(bfr(y, y_hat), rms(y - y_hat), noise_ceiling_bfr(snr_db), y - y_hat)
