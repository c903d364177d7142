"""WAV I/O, dual-rate framing, analysis/synthesis windows, and overlap-add.

Everything here is a pure function: identical inputs give bit-identical
outputs, so any number of threads may call into this module concurrently.
Only mono 16 kHz audio is supported; anything else fails loudly instead of
silently resampling or downmixing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000

_INT16_SCALE = 32768.0
_FLOAT_CEIL = 1.0 - 2.0 ** -15  # largest amplitude an int16 sample can encode


class WavFormatError(ValueError):
    """A WAV file (or write request) violates the supported format."""


@dataclass
class AudioBuffer:
    """Mono float64 samples at 16 kHz, nominal amplitude range [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected 1-D mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError(
                f"unsupported sample rate {self.sample_rate}, expected {SAMPLE_RATE}"
            )

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FrameGeometry:
    """Window length, hop, and left zero-padding for one framing scheme."""

    window_len: int
    hop: int
    left_pad: int = 0

    def __post_init__(self):
        if not (1 <= self.hop <= self.window_len):
            raise ValueError(
                f"need 1 <= hop <= window_len, got hop={self.hop}, "
                f"window_len={self.window_len}"
            )
        if self.left_pad < 0:
            raise ValueError(f"left_pad must be >= 0, got {self.left_pad}")


def _as_samples(x) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def frame_signal(x, g: FrameGeometry, num_frames: int | None = None) -> np.ndarray:
    """Slice a signal into overlapping frames.

    Frame i is the zero-padded slice x[i*hop - left_pad : i*hop - left_pad + window_len];
    reads outside the signal are zeros. By default the frame count is
    ceil(len(x) / hop), which covers every input sample; callers that need
    extra tail frames (e.g. to complete overlap-add coverage) may pass
    ``num_frames`` explicitly.
    """
    samples = _as_samples(x)
    n = len(samples)
    if n < 1:
        raise ValueError("cannot frame an empty signal")
    if num_frames is None:
        num_frames = -(-n // g.hop)  # ceil division
    span = (num_frames - 1) * g.hop + g.window_len
    right_pad = max(0, span - g.left_pad - n)
    padded = np.concatenate(
        [np.zeros(g.left_pad), samples, np.zeros(right_pad)]
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, g.window_len)
    return windows[:: g.hop][:num_frames].copy()


def make_window(kind: str, length: int) -> np.ndarray:
    """Window coefficients: 'sqrt_hann_periodic' or 'rectangular'.

    The degenerate length-1 window is [1] for both kinds, so sample-level
    framing (window_len == hop == 1) passes audio through unchanged.
    """
    if length < 1:
        raise ValueError(f"window length must be >= 1, got {length}")
    if kind == "rectangular":
        return np.ones(length)
    if kind == "sqrt_hann_periodic":
        if length == 1:
            return np.ones(1)
        n = np.arange(length)
        return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / length))
    raise ValueError(f"unknown window kind {kind!r}")


def overlap_add(frames, hop: int) -> np.ndarray:
    """Sum hop-shifted frames: out[n] = sum_i frames[i][n - i*hop].

    Output length is (num_frames - 1) * hop + window_len; truncating back to
    the original input length is the caller's job. Frames must all share one
    length.
    """
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    arr = [np.asarray(f, dtype=np.float64) for f in frames]
    if not arr:
        raise ValueError("no frames to overlap-add")
    length = arr[0].shape[-1]
    if any(f.shape != (length,) for f in arr):
        raise ValueError("ragged frame lengths in overlap_add")
    stacked = np.stack(arr)
    out = _ola_accumulate(stacked, hop)
    return out


def _ola_accumulate(frames: np.ndarray, hop: int) -> np.ndarray:
    """Vectorized OLA core for frames shaped (..., num_frames, window_len)."""
    *batch, num, length = frames.shape
    out_len = (num - 1) * hop + length
    # Scratch is padded to num*hop + length so every offset chunk reshapes
    # cleanly to (num, hop); chunks at one offset never overlap each other.
    scratch = np.zeros((*batch, num * hop + length))
    for offset in range(0, length, hop):
        width = min(hop, length - offset)
        chunk = frames[..., :, offset : offset + width]
        view = scratch[..., offset : offset + num * hop].reshape(*batch, num, hop)
        view[..., :width] += chunk
    return scratch[..., :out_len].copy()


# --- RIFF/WAVE (mono, 16 kHz, PCM16 or IEEE float32) ---------------------
#
# The stdlib wave module rejects IEEE-float WAVs, so the parser is written
# against the RIFF chunk layout directly.


def read_wav(path) -> AudioBuffer:
    """Read a mono 16 kHz WAV file (PCM 16-bit or IEEE float 32-bit)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_len,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_len]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_len + (chunk_len & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")

    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels != 1:
        raise WavFormatError(f"{path}: unsupported channel count {channels}, expected mono")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: unsupported sample rate {rate}, expected {SAMPLE_RATE}")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2")
        samples = raw.astype(np.float64) / _INT16_SCALE
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported codec (format tag {audio_format}, {bits}-bit); "
            "expected PCM 16-bit or IEEE float 32-bit"
        )
    return AudioBuffer(samples)


def write_wav(path, audio: AudioBuffer | np.ndarray) -> None:
    """Write mono 16 kHz PCM 16-bit, clipping to [-1, 1 - 2**-15]."""
    samples = _as_samples(audio)
    clipped = np.clip(samples, -1.0, _FLOAT_CEIL)
    ints = np.round(clipped * _INT16_SCALE).astype("<i2")
    payload = ints.tobytes()

    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)
