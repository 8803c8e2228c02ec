"""Reconstruction and adversarial loss algebra as pure differentiable functions.

The multi-spectrogram loss compares Hann magnitude spectrograms at a ladder
of resolutions (window ``2 ** (5 + s)`` for scale ``s``, 75% overlap), with an
L1 term on magnitudes and an L1 term on floored log magnitudes.  The
adversarial pieces operate on caller-supplied discriminator scores and
feature maps; no discriminator network ships here.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as dt
from .errors import ValidationError
from .synth import stft


@dataclass(frozen=True)
class MslConfig:
    scales: int = 6
    kappa: float = 1.0
    log_floor: float = 1e-7

    def __post_init__(self):
        if self.scales < 1:
            raise ValidationError("need at least one spectrogram scale")

    @property
    def window_sizes(self) -> tuple[int, ...]:
        return tuple(2 ** (5 + s) for s in range(1, self.scales + 1))


def mse_features(x, y) -> dt.Tensor:
    """Mean over all elements of the squared feature difference."""
    x, y = dt.as_tensor(x), dt.as_tensor(y)
    if x.shape != y.shape:
        raise ValidationError(f"feature shapes differ: {x.shape} vs {y.shape}")
    diff = dt.sub(x, y)
    return dt.mean(dt.mul(diff, diff))


def spectrogram_magnitude(x, window: int) -> dt.Tensor:
    """Hann magnitude spectrogram at 75% overlap for one loss scale."""
    return dt.complex_abs(stft(x, window, window // 4))


def scale_loss(x, y, window: int, kappa: float = 1.0,
               log_floor: float = 1e-7) -> dt.Tensor:
    """Single-resolution term: L1 on magnitudes plus L1 on floored logs."""
    mag_x = spectrogram_magnitude(x, window)
    mag_y = spectrogram_magnitude(y, window)
    linear = dt.mean(dt.abs(dt.sub(mag_x, mag_y)))
    log_x = dt.log(dt.clamp_min(mag_x, log_floor))
    log_y = dt.log(dt.clamp_min(mag_y, log_floor))
    logterm = dt.mean(dt.abs(dt.sub(log_x, log_y)))
    return dt.add(linear, dt.mul(kappa, logterm))


def msl(x, y, cfg: MslConfig = MslConfig()) -> dt.Tensor:
    """Multi-resolution spectrogram loss between two equal-length signals.

    Differentiable with respect to ``y`` (and ``x``, if it is tracked).
    """
    x, y = dt.as_tensor(x), dt.as_tensor(y)
    if x.shape != y.shape:
        raise ValidationError(f"signal lengths differ: {x.shape} vs {y.shape}")
    total = dt.Tensor(0.0)
    for window in cfg.window_sizes:
        total = dt.add(total, scale_loss(x, y, window, cfg.kappa, cfg.log_floor))
    return total


def nll_loss(feats_x, feats_y, audio_x, audio_y, alpha: float = 1.0,
             beta: float = 1.0, cfg: MslConfig = MslConfig()) -> dt.Tensor:
    """Weighted sum of the feature MSE and the multi-spectrogram loss."""
    return dt.add(dt.mul(alpha, mse_features(feats_x, feats_y)),
                  dt.mul(beta, msl(audio_x, audio_y, cfg)))


# ---------------------------------------------------------------------------
# adversarial loss algebra (scores and feature maps supplied by the caller)
# ---------------------------------------------------------------------------

def hinge_generator(scores, mu: float = 1.0) -> dt.Tensor:
    """Generator hinge: ``mu * sum_k mean(-scores_k)``."""
    total = dt.Tensor(0.0)
    for s in scores:
        total = dt.add(total, dt.mean(dt.neg(dt.as_tensor(s))))
    return dt.mul(mu, total)


def feature_matching(real_maps, fake_maps, lam: float = 1.0) -> dt.Tensor:
    """L1 distance between discriminator feature maps, layer-normalized.

    ``real_maps[k][i]`` and ``fake_maps[k][i]`` are the layer-``i`` maps of
    discriminator ``k``; the leading axis of each map tensor counts the maps
    in that layer, and each layer term is divided by that count.
    """
    if len(real_maps) != len(fake_maps):
        raise ValidationError("discriminator counts differ between map lists")
    total = dt.Tensor(0.0)
    for real_layers, fake_layers in zip(real_maps, fake_maps):
        if len(real_layers) != len(fake_layers):
            raise ValidationError("layer counts differ between map lists")
        for real, fake in zip(real_layers, fake_layers):
            real, fake = dt.as_tensor(real), dt.as_tensor(fake)
            if real.shape != fake.shape:
                raise ValidationError(
                    f"feature map shapes differ: {real.shape} vs {fake.shape}")
            n_maps = real.shape[0] if real.ndim > 0 else 1
            term = dt.mean(dt.abs(dt.sub(real, fake)))
            total = dt.add(total, dt.div(term, float(n_maps)))
    return dt.mul(lam, total)


def hinge_discriminator(real_scores, fake_scores, mu: float = 1.0,
                        printed_sign: bool = True) -> dt.Tensor:
    """Discriminator hinge over per-network score tensors.

    ``printed_sign=True`` computes ``sum_k mean(min(0, 1 - D(x))) +
    mean(min(0, 1 + D(x_hat)))`` exactly as stated; the conventional variant
    (``max`` in place of ``min``) is available behind the flag because the
    stated form is non-positive and saturates at zero.
    """
    if len(real_scores) != len(fake_scores):
        raise ValidationError("discriminator counts differ between score lists")
    total = dt.Tensor(0.0)
    for real, fake in zip(real_scores, fake_scores):
        real_margin = dt.sub(1.0, dt.as_tensor(real))
        fake_margin = dt.add(1.0, dt.as_tensor(fake))
        if printed_sign:
            term = dt.add(dt.mean(dt.minimum_with_zero(real_margin)),
                          dt.mean(dt.minimum_with_zero(fake_margin)))
        else:
            term = dt.add(dt.mean(dt.clamp_min(real_margin, 0.0)),
                          dt.mean(dt.clamp_min(fake_margin, 0.0)))
        total = dt.add(total, term)
    return dt.mul(mu, total)


def downsample_audio(x, factor: int) -> dt.Tensor:
    """Average-pool a signal by a power-of-two factor (kernel 4, stride 2).

    Utility for feeding multi-scale discriminator stacks; differentiable.
    Padding samples count toward the average (kernel is always 4).
    """
    x = dt.as_tensor(x)
    if factor < 1 or factor & (factor - 1):
        raise ValidationError(f"downsample factor {factor} is not a power of two")
    while factor > 1:
        n_out = (x.shape[0] + 2 - 4) // 2 + 1
        frames = dt.frame(x, 4, 2, n_out, 1)
        x = dt.mean(frames, axis=1)
        factor //= 2
    return x
