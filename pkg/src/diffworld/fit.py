"""Analysis-by-synthesis: recover compressed features from a target waveform.

The compressed envelope is optimized directly; aperiodicity is parameterized
through a sigmoid so its decompressed form stays inside [0, 1].  The noise
excitation is drawn once from the configured seed and held fixed across
steps, which makes the objective deterministic and lets a fit with a matched
seed drive the loss to the noise-realization floor.

The pitch contour is a fixed input: the excitation spectra are precomputed
once and only the spectral shaping is re-evaluated per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import melcodec
from . import tensor as dt
from .errors import DiffworldError, ValidationError
from .features import CompressedFeatures, Waveform
from .losses import MslConfig, mse_features, msl
from .synth import (FirPostFilter, SynthConfig, interpolate_f0, istft,
                    noise_excitation, pulse_train, stft)


class FitDivergence(DiffworldError):
    """The optimization produced a non-finite loss."""


@dataclass(frozen=True)
class FitConfig:
    steps: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    alpha: float = 0.0          # weight of the feature loss against a reference
    msl: MslConfig = field(default_factory=MslConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")


@dataclass(frozen=True)
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def fresh(cls) -> "AdamState":
        return cls(step=0, m={}, v={})


def adam_step(params: dict, grads: dict, state: AdamState,
              cfg: FitConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for key, value in params.items():
        g = grads[key]
        m = cfg.beta1 * state.m.get(key, 0.0) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(key, 0.0) + (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)
        new_params[key] = value - cfg.learning_rate * update
        new_m[key], new_v[key] = m, v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def smoothed_trace(trace, window: int = 20) -> np.ndarray:
    """Moving-average view of a loss trace (for monotonicity checks)."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.size < window:
        return trace.copy()
    kernel = np.ones(window) / window
    return np.convolve(trace, kernel, mode="valid")


def _default_init(n_frames: int, n_mels: int, ap_bands: int,
                  epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    # log10(eps) exactly would decompress to an all-zero envelope, whose
    # magnitude kink at the origin has zero subgradient everywhere; one
    # decade up keeps the start silent-sounding but alive.
    s0 = np.full((n_frames, n_mels), np.log10(epsilon) + 1.0)
    a0 = np.full((n_frames, ap_bands), 0.5)
    return s0, a0


def _logit(a: np.ndarray) -> np.ndarray:
    a = np.clip(a, 1e-6, 1.0 - 1e-6)
    return np.log(a / (1.0 - a))


def fit(target, f0: np.ndarray, init: CompressedFeatures | None = None,
        cfg: FitConfig = FitConfig(), synth_cfg: SynthConfig | None = None,
        n_mels: int = melcodec.DEFAULT_N_MELS,
        ap_bands: int = melcodec.DEFAULT_AP_BANDS,
        fir: FirPostFilter | None = None,
        reference: CompressedFeatures | None = None,
        ) -> tuple[CompressedFeatures, np.ndarray]:
    """Gradient-descent recovery of compressed features from ``target``.

    ``f0`` is the oracle pitch contour (one value per frame).  Returns the
    fitted features and the per-step loss trace.  If ``fir`` is given its
    free taps are optimized jointly and updated in place.
    """
    if isinstance(target, Waveform):
        if synth_cfg is None:
            synth_cfg = SynthConfig(sample_rate=target.sample_rate)
        elif synth_cfg.sample_rate != target.sample_rate:
            raise ValidationError(
                f"target rate {target.sample_rate} != config rate "
                f"{synth_cfg.sample_rate}")
        target = target.samples
    target = np.asarray(target, dtype=np.float64)
    if target.size == 0:
        raise ValidationError("target waveform is empty")
    if synth_cfg is None:
        synth_cfg = SynthConfig()
    f0 = np.asarray(f0, dtype=np.float64)
    n_frames = f0.shape[0]
    hop = synth_cfg.hop
    n_samples = n_frames * hop
    if not ((n_frames - 1) * hop <= target.shape[0] <= n_samples):
        raise ValidationError(
            f"target length {target.shape[0]} does not match {n_frames} frames "
            f"at hop {hop} (expected ({n_frames - 1} * hop, {n_frames} * hop])")
    if target.shape[0] < n_samples:
        target = np.concatenate([target, np.zeros(n_samples - target.shape[0])])

    if init is not None:
        n_mels, ap_bands = init.n_mels, init.ap_bands
        s0, a0 = init.log_mel.copy(), init.coded_ap.copy()
    else:
        s0, a0 = _default_init(n_frames, n_mels, ap_bands, melcodec.DEFAULT_EPSILON)
    basis = melcodec.MelBasis.build(synth_cfg.sample_rate, synth_cfg.fft_size, n_mels)
    n_bins = synth_cfg.fft_size // 2 + 1

    # the excitation spectra are constant across steps: precompute them
    freq, mask = interpolate_f0(f0, hop, n_samples)
    spec_h = dt.Tensor(stft(pulse_train(freq, mask, synth_cfg),
                            synth_cfg.fft_size, hop, n_frames).data)
    spec_n = dt.Tensor(stft(noise_excitation(n_samples, cfg.seed),
                            synth_cfg.fft_size, hop, n_frames).data)
    target_t = dt.Tensor(target)

    params = {"log_mel": s0, "ap_logit": _logit(a0)}
    if fir is not None:
        params["fir_free"] = fir.free.copy()
    state = AdamState.fresh()
    trace = np.empty(cfg.steps)

    for step in range(cfg.steps):
        s_t = dt.Tensor(params["log_mel"], requires_grad=True)
        z_t = dt.Tensor(params["ap_logit"], requires_grad=True)
        sp = melcodec.decompress_sp(s_t, basis)
        ap = melcodec.decompress_ap(dt.sigmoid(z_t), n_bins)
        root = dt.sqrt(sp)
        gain_h = dt.mul(dt.sub(1.0, ap), root)
        gain_n = dt.mul(ap, root)
        h = istft(dt.mul(spec_h, dt.reshape(gain_h, (n_frames, 1, n_bins))),
                  synth_cfg.fft_size, hop, n_samples)
        n = istft(dt.mul(spec_n, dt.reshape(gain_n, (n_frames, 1, n_bins))),
                  synth_cfg.fft_size, hop, n_samples)
        y = dt.add(dt.mul(synth_cfg.gain_harmonic, h),
                   dt.mul(synth_cfg.gain_noise, n))
        if fir is not None:
            w_t = dt.Tensor(params["fir_free"], requires_grad=True)
            y = dt.add(dt.mul(synth_cfg.gain_dry, y),
                       dt.mul(synth_cfg.gain_fir, fir.apply(y, w_t)))
        loss = msl(target_t, y, cfg.msl)
        if reference is not None and cfg.alpha != 0.0:
            feat_loss = dt.add(mse_features(reference.log_mel, s_t),
                               mse_features(reference.coded_ap, dt.sigmoid(z_t)))
            loss = dt.add(loss, dt.mul(cfg.alpha, feat_loss))
        value = loss.item()
        if not np.isfinite(value):
            raise FitDivergence(f"non-finite loss at step {step}")
        trace[step] = value

        grad_map = dt.backward(loss)
        grads = {"log_mel": grad_map[s_t], "ap_logit": grad_map[z_t]}
        if fir is not None:
            grads["fir_free"] = grad_map.get(w_t, np.zeros_like(params["fir_free"]))
        params, state = adam_step(params, grads, state, cfg)

    if fir is not None:
        fir.free[:] = params["fir_free"]
    fitted = CompressedFeatures(
        f0=f0, log_mel=params["log_mel"],
        coded_ap=1.0 / (1.0 + np.exp(-params["ap_logit"])),
        sample_rate=synth_cfg.sample_rate, hop=hop, fft_size=synth_cfg.fft_size)
    return fitted, trace
