"""Shared oracles for the test suite: finite differences and synthetic data."""

import numpy as np


def central_diff(f, x, step=1e-5):
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x``."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xflat = x.reshape(-1)
    for i in range(x.size):
        orig = xflat[i]
        xflat[i] = orig + step
        hi = f(x)
        xflat[i] = orig - step
        lo = f(x)
        xflat[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_grad_err(analytic, fd):
    """Max abs deviation normalized by the finite-difference gradient scale."""
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    scale = max(np.max(np.abs(fd)), 1e-12)
    return np.max(np.abs(analytic - fd)) / scale


def rel_l2(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(b), 1e-300)
    return np.linalg.norm(a - b) / denom


def two_formant_envelope(n_bins, sample_rate, centers=(700.0, 2400.0),
                         widths=(0.35, 0.25), gains=(1.0, 0.4), floor=1e-4):
    """Smooth synthetic power envelope: two Gaussians in log frequency."""
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    logf = np.log(np.maximum(freqs, 20.0))
    env = np.full(n_bins, floor)
    for c, w, g in zip(centers, widths, gains):
        env = env + g * np.exp(-0.5 * ((logf - np.log(c)) / w) ** 2)
    return env


def naive_magnitude_spectrogram(x, window):
    """Independent reimplementation: explicit frame loop, numpy FFT."""
    hop = window // 4
    n_frames = -(-len(x) // hop)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / window)
    pad = np.concatenate([np.zeros(window // 2), x,
                          np.zeros((n_frames - 1) * hop + window)])
    mags = np.empty((n_frames, window // 2 + 1))
    for t in range(n_frames):
        seg = pad[t * hop: t * hop + window] * win
        mags[t] = np.abs(np.fft.rfft(seg))
    return mags


def naive_msl(x, y, scales, kappa=1.0, floor=1e-7):
    total = 0.0
    for s in range(1, scales + 1):
        window = 2 ** (5 + s)
        mx = naive_magnitude_spectrogram(x, window)
        my = naive_magnitude_spectrogram(y, window)
        total += np.mean(np.abs(mx - my))
        total += kappa * np.mean(np.abs(np.log(np.maximum(mx, floor))
                                        - np.log(np.maximum(my, floor))))
    return total
