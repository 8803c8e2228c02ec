"""Acoustic feature containers and their binary file formats.

Frame-rate features follow the WORLD convention: per-frame fundamental
frequency ``f0`` (Hz, 0 marks an unvoiced frame), power-spectrum spectral
envelope ``sp`` and aperiodicity ratio ``ap`` over ``fft_size // 2 + 1``
linear-frequency bins.  Compressed features hold the log mel form of the
envelope plus a coarse aperiodicity, together with the same clock metadata.

Framing convention: frame ``t`` is centered on sample ``t * hop``; a clip of
``n`` samples therefore spans ``n // hop + 1`` frames.  Files carry ``hop``
explicitly so any analyzer setting is honored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, ValidationError

WFEAT_MAGIC = b"WFEA"
WFEAT_VERSION = 1
KIND_RAW = 0
KIND_COMPRESSED = 1

_HEADER = struct.Struct("<4sIIIIIIII")


def frames_for_samples(num_samples: int, hop: int) -> int:
    """Frame count of a clip under the centered framing convention."""
    return num_samples // hop + 1


@dataclass(frozen=True)
class Waveform:
    """Mono audio buffer at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class WorldFeatures:
    """Raw frame-rate acoustic features (f0, sp, ap) with clock metadata."""

    f0: np.ndarray        # (T,) Hz, 0 = unvoiced
    sp: np.ndarray        # (T, fft_size // 2 + 1) power spectrum, >= 0
    ap: np.ndarray        # (T, fft_size // 2 + 1) in [0, 1]
    sample_rate: int
    hop: int
    fft_size: int

    @property
    def n_frames(self) -> int:
        return self.f0.shape[0]

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class CompressedFeatures:
    """Log mel envelope plus coarse aperiodicity, with the raw-side metadata.

    ``f0`` rides along uncompressed: synthesis needs a pitch contour and the
    contour is passed through deterministically rather than modeled.
    """

    f0: np.ndarray        # (T,) Hz, 0 = unvoiced
    log_mel: np.ndarray   # (T, n_mels)
    coded_ap: np.ndarray  # (T, ap_bands) in [0, 1]
    sample_rate: int
    hop: int
    fft_size: int

    @property
    def n_frames(self) -> int:
        return self.f0.shape[0]

    @property
    def n_mels(self) -> int:
        return self.log_mel.shape[1]

    @property
    def ap_bands(self) -> int:
        return self.coded_ap.shape[1]


def _first_bad(mask: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def _validated_raw(feats: WorldFeatures) -> WorldFeatures:
    f0 = np.ascontiguousarray(feats.f0, dtype=np.float64)
    sp = np.ascontiguousarray(feats.sp, dtype=np.float64)
    ap = np.ascontiguousarray(feats.ap, dtype=np.float64)
    t = f0.shape[0]
    if f0.ndim != 1 or sp.ndim != 2 or ap.ndim != 2:
        raise ValidationError("raw features must be f0 (T,), sp (T, bins), ap (T, bins)")
    if sp.shape[0] != t or ap.shape[0] != t:
        raise ValidationError(
            f"frame counts differ: f0 has {t}, sp has {sp.shape[0]}, ap has {ap.shape[0]}")
    bins = feats.fft_size // 2 + 1
    if sp.shape[1] != bins or ap.shape[1] != bins:
        raise ValidationError(
            f"expected {bins} bins for fft_size {feats.fft_size}, "
            f"got sp {sp.shape[1]}, ap {ap.shape[1]}")
    for name, arr in (("f0", f0), ("sp", sp), ("ap", ap)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains a non-finite value at "
                                  f"{_first_bad(~np.isfinite(arr))}")
    if np.any(f0 < 0):
        raise ValidationError(f"f0 is negative at frame {_first_bad(f0 < 0)[0]}")
    if np.any(sp < 0):
        frame, bin_ = _first_bad(sp < 0)
        raise ValidationError(f"sp is negative at frame {frame}, bin {bin_}")
    bad = (ap < 0) | (ap > 1)
    if np.any(bad):
        frame, bin_ = _first_bad(bad)
        raise ValidationError(
            f"ap out of [0, 1] at frame {frame}, bin {bin_}: {ap[frame, bin_]}")
    unvoiced = f0 == 0
    if np.any(unvoiced):
        ap = ap.copy()
        ap[unvoiced, :] = 1.0  # unvoiced frames are pure noise by convention
    return replace(feats, f0=f0, sp=sp, ap=ap)


def _validated_compressed(feats: CompressedFeatures) -> CompressedFeatures:
    f0 = np.ascontiguousarray(feats.f0, dtype=np.float64)
    s = np.ascontiguousarray(feats.log_mel, dtype=np.float64)
    a = np.ascontiguousarray(feats.coded_ap, dtype=np.float64)
    if f0.ndim != 1 or s.ndim != 2 or a.ndim != 2:
        raise ValidationError("compressed features must be f0 (T,), log_mel (T, M), "
                              "coded_ap (T, A)")
    t = f0.shape[0]
    if s.shape[0] != t or a.shape[0] != t:
        raise ValidationError(
            f"frame counts differ: f0 has {t}, log_mel has {s.shape[0]}, "
            f"coded_ap has {a.shape[0]}")
    for name, arr in (("f0", f0), ("log_mel", s), ("coded_ap", a)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains a non-finite value at "
                                  f"{_first_bad(~np.isfinite(arr))}")
    if np.any(f0 < 0):
        raise ValidationError(f"f0 is negative at frame {_first_bad(f0 < 0)[0]}")
    bad = (a < 0) | (a > 1)
    if np.any(bad):
        frame, band = _first_bad(bad)
        raise ValidationError(
            f"coded_ap out of [0, 1] at frame {frame}, band {band}: {a[frame, band]}")
    return replace(feats, f0=f0, log_mel=s, coded_ap=a)


def validate_features(feats):
    """Enforce the type invariants (including unvoiced ap coercion for raw)."""
    if isinstance(feats, WorldFeatures):
        return _validated_raw(feats)
    if isinstance(feats, CompressedFeatures):
        return _validated_compressed(feats)
    raise TypeError(f"not a feature container: {type(feats).__name__}")


# ---------------------------------------------------------------------------
# WFEAT binary format
# ---------------------------------------------------------------------------

def write_features(path, feats) -> None:
    """Write features to a WFEAT file (validating them first)."""
    feats = validate_features(feats)
    if isinstance(feats, WorldFeatures):
        kind, m_or_bins, a_bands = KIND_RAW, feats.n_bins, 0
        arrays = (feats.f0, feats.sp, feats.ap)
    else:
        kind, m_or_bins, a_bands = KIND_COMPRESSED, feats.n_mels, feats.ap_bands
        arrays = (feats.f0, feats.log_mel, feats.coded_ap)
    header = _HEADER.pack(WFEAT_MAGIC, WFEAT_VERSION, feats.sample_rate, feats.hop,
                          feats.fft_size, feats.n_frames, kind, m_or_bins, a_bands)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_features(path, expect_sample_rate: int | None = None):
    """Read a WFEAT file, returning validated raw or compressed features."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read {path}: {err}") from err
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, sample_rate, hop, fft_size, t, kind, m_or_bins, a_bands = \
        _HEADER.unpack_from(blob)
    if magic != WFEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != WFEAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if expect_sample_rate is not None and sample_rate != expect_sample_rate:
        raise ValidationError(
            f"{path}: sample rate {sample_rate} does not match expected "
            f"{expect_sample_rate}")
    payload = blob[_HEADER.size:]

    def take(count, offset):
        end = offset + count * 8
        if end > len(payload):
            raise FormatError(f"{path}: truncated payload "
                              f"(need {end} bytes, have {len(payload)})")
        return np.frombuffer(payload, dtype="<f8", count=count, offset=offset), end

    if kind == KIND_RAW:
        bins = fft_size // 2 + 1
        if m_or_bins != bins:
            raise FormatError(f"{path}: bin count {m_or_bins} disagrees with "
                              f"fft_size {fft_size}")
        f0, off = take(t, 0)
        sp, off = take(t * bins, off)
        ap, off = take(t * bins, off)
        feats = WorldFeatures(f0=f0.copy(), sp=sp.reshape(t, bins).copy(),
                              ap=ap.reshape(t, bins).copy(),
                              sample_rate=sample_rate, hop=hop, fft_size=fft_size)
    elif kind == KIND_COMPRESSED:
        f0, off = take(t, 0)
        s, off = take(t * m_or_bins, off)
        a, off = take(t * a_bands, off)
        feats = CompressedFeatures(f0=f0.copy(), log_mel=s.reshape(t, m_or_bins).copy(),
                                   coded_ap=a.reshape(t, a_bands).copy(),
                                   sample_rate=sample_rate, hop=hop, fft_size=fft_size)
    else:
        raise FormatError(f"{path}: unknown feature kind {kind}")
    return validate_features(feats)


# ---------------------------------------------------------------------------
# WAV I/O (mono; 16-bit integer or 32-bit float PCM)
# ---------------------------------------------------------------------------

def read_wav(path, expect_sample_rate: int | None = None) -> Waveform:
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as err:
        raise FormatError(f"cannot read {path}: {err}") from err
    except ValueError as err:
        raise FormatError(f"{path}: unsupported WAV: {err}") from err
    if data.ndim != 1:
        raise ValidationError(
            f"{path}: {data.shape[1]}-channel audio; mono required "
            "(downmix externally before loading)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample codec {data.dtype}; "
                          "use 16-bit integer or 32-bit float PCM")
    if not np.all(np.isfinite(samples)):
        raise ValidationError(f"{path}: non-finite sample at index "
                              f"{_first_bad(~np.isfinite(samples))[0]}")
    if expect_sample_rate is not None and rate != expect_sample_rate:
        raise ValidationError(f"{path}: sample rate {rate} does not match "
                              f"expected {expect_sample_rate}")
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path, wave: Waveform, codec: str = "float32") -> None:
    samples = np.asarray(wave.samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValidationError("mono required: waveform must be 1-D")
    if not np.all(np.isfinite(samples)):
        raise ValidationError(f"non-finite sample at index "
                              f"{_first_bad(~np.isfinite(samples))[0]}")
    if codec == "float32":
        wavfile.write(path, wave.sample_rate, samples.astype(np.float32))
    elif codec == "pcm16":
        clipped = np.clip(samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, wave.sample_rate,
                      np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise FormatError(f"unsupported codec {codec!r}; use 'float32' or 'pcm16'")
