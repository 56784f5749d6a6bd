"""Scalar quality measures for denoised traces."""
from __future__ import annotations

import numpy as np

SNR_CAP_DB = 300.0


def snr(clean, est) -> float:
    """10 log10(|clean|^2 / |est - clean|^2) in dB; exact matches return the 300 dB cap."""
    clean = np.asarray(clean, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    p_sig = float(np.dot(clean, clean))
    if p_sig <= 0:
        raise ValueError("SNR undefined for a zero-power clean signal")
    err = est - clean
    p_err = float(np.dot(err, err))
    if p_err == 0:
        return SNR_CAP_DB
    return float(min(SNR_CAP_DB, 10.0 * np.log10(p_sig / p_err)))


def snr_rows(clean: np.ndarray, est: np.ndarray) -> np.ndarray:
    """Per-row SNR for (n, L) arrays."""
    clean = np.asarray(clean)
    est = np.asarray(est)
    return np.array([snr(c, e) for c, e in zip(clean.reshape(len(clean), -1), est.reshape(len(est), -1))])


def first_diff(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] < 2:
        raise ValueError("first difference needs at least two samples")
    return np.diff(s, axis=-1)


def mean_abs_first_diff(s) -> float:
    return float(np.mean(np.abs(first_diff(s))))
