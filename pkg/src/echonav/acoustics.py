"""Source synthesis, image-source binaural RIRs, streaming rendering, and STFT features.

Audio runs at a fixed 16 kHz sample rate with 0.25 s simulation steps
(4,000 samples per step). Reverberation is modeled with a 2-D image-source
expansion confined to the boundary rectangle; interior obstacles only
attenuate the direct path when they block line of sight to the ears.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, get_window, lfilter

from .geometry import Pose, ScenePlan, segment_blocked

SAMPLE_RATE = 16_000
CHUNK_SAMPLES = 4_000
SPEED_OF_SOUND = 343.0
EAR_OFFSET = 0.09        # each ear sits 0.09 m from the head center
DEFAULT_MAX_ORDER = 3
OCCLUSION_FACTOR = 0.3   # extra direct-path attenuation when an obstacle blocks the ears

N_FFT = 512
HOP = 160
N_FRAMES = 1 + (CHUNK_SAMPLES - N_FFT) // HOP  # 22
N_BINS = N_FFT // 2 + 1                        # 257
LOG_EPS = 1e-8

MAX_CATEGORIES = 128

_STFT_WINDOW = get_window("hann", N_FFT, fftbins=True)


# ----------------------------------------------------------------------
# source sounds


@dataclass(frozen=True)
class SourceSound:
    """Synthesized mono source: peak-normalized waveform plus an on/off activity mask."""

    category_id: int
    variant_id: int
    waveform: np.ndarray       # float64, 16 kHz, peak 1.0
    activity_mask: np.ndarray  # uint8, same length

    @property
    def n_samples(self) -> int:
        return self.waveform.shape[0]


def _category_profile(category: int) -> dict:
    rng = np.random.default_rng([17, category])
    # fundamentals spread over [120, 620] Hz by golden-ratio spacing; kept
    # below ~700 Hz so the GCC-PHAT lag window never aliases a pitch period
    frac = (category * 0.6180339887498949) % 1.0
    f0 = 120.0 * (620.0 / 120.0) ** frac * (1.0 + 0.02 * (rng.random() - 0.5))
    duty_roll = rng.random()
    return {
        "f0": f0,
        "n_harmonics": int(rng.integers(6, 15)),
        "decay": 0.5 + rng.random(),
        "am_rate": 0.8 + 6.0 * rng.random(),
        "am_depth": 0.2 + 0.5 * rng.random(),
        "gap_period": 0.9 + 1.4 * rng.random(),
        "duty": 1.0 if duty_roll < 0.3 else 0.78 + 0.17 * rng.random(),
        # breathy broadband floor: keeps inter-channel correlation usable for
        # broadband localizers, like real mechanical/voiced sounds
        "noise_level": 0.04 + 0.08 * rng.random(),
        "noise_pole": 0.55 + 0.35 * rng.random(),
    }


def synth_source(category: int, variant: int, duration_s: float, seed: int = 0) -> SourceSound:
    """Deterministic harmonic-stack source with category timbre and variant detune.

    Same (category, variant, seed) always yields bit-identical waveforms;
    category-dependent silence gaps are encoded in the activity mask and
    already applied to the waveform.
    """
    if not 0 <= category < MAX_CATEGORIES:
        raise ValueError(f"unknown sound category {category}")
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    prof = _category_profile(category)
    rng = np.random.default_rng([23, category, variant, seed])
    detune = 1.0 + 0.03 * (rng.random() - 0.5) * 2.0
    am_rate = prof["am_rate"] * (0.7 + 0.6 * rng.random())
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = prof["f0"] * detune
    wave_sum = np.zeros(n)
    for k in range(1, prof["n_harmonics"] + 1):
        # near-aligned phases keep the crest factor comparable across
        # categories, which the energy-based distance estimator relies on
        phase = rng.uniform(0.0, 0.6)
        wave_sum += k ** (-prof["decay"]) * np.sin(2.0 * math.pi * k * f0 * t + phase)
    am = 1.0 - prof["am_depth"] * 0.5 * (1.0 + np.sin(2.0 * math.pi * am_rate * t + rng.uniform(0, math.tau)))
    noise = lfilter([1.0 - prof["noise_pole"]], [1.0, -prof["noise_pole"]], rng.standard_normal(n))
    signal = (wave_sum + prof["noise_level"] * wave_sum.std() / max(noise.std(), 1e-12) * noise) * am
    mask = np.ones(n, dtype=np.uint8)
    if prof["duty"] < 1.0:
        period = prof["gap_period"]
        phase_off = rng.uniform(0.0, period)
        mask = ((((t + phase_off) / period) % 1.0) < prof["duty"]).astype(np.uint8)
    signal = signal * mask
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal = signal / peak
    return SourceSound(category_id=category, variant_id=variant, waveform=signal, activity_mask=mask)


_PROBE_RMS_CACHE: dict[int, float] = {}


def _bank_median_rms() -> float:
    # representative loudness of a peak-normalized source while it is sounding
    if 0 not in _PROBE_RMS_CACHE:
        rms = []
        for c in range(8):
            s = synth_source(c, 0, 1.0, seed=0)
            active = s.waveform[s.activity_mask.astype(bool)]
            rms.append(float(np.sqrt(np.mean(active**2))))
        _PROBE_RMS_CACHE[0] = float(np.median(rms))
    return _PROBE_RMS_CACHE[0]


def reference_probe(duration_s: float = 0.25) -> np.ndarray:
    """Fixed category-agnostic probe used for per-scene distance calibration.

    A canonical harmonic scaled to the sound bank's median sounding RMS, so
    energy-based ranging is unbiased across categories.
    """
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    sig = np.zeros(n)
    for k in range(1, 9):
        sig += k ** -1.0 * np.sin(2.0 * math.pi * k * 320.0 * t + 0.3)
    return sig * (_bank_median_rms() / float(np.sqrt(np.mean(sig**2))))


# ----------------------------------------------------------------------
# binaural room impulse responses


@dataclass(frozen=True)
class BinauralRir:
    left: np.ndarray
    right: np.ndarray
    order: int

    @property
    def n_taps(self) -> int:
        return self.left.shape[0]


def ear_positions(pose: Pose) -> tuple[tuple[float, float], tuple[float, float]]:
    """World positions of the (left, right) ears, perpendicular to the heading."""
    nx, ny = -math.sin(pose.heading), math.cos(pose.heading)
    left = (pose.x + EAR_OFFSET * nx, pose.y + EAR_OFFSET * ny)
    right = (pose.x - EAR_OFFSET * nx, pose.y - EAR_OFFSET * ny)
    return left, right


def _head_shadow(incidence: float, ear_facing: float) -> float:
    return 0.6 + 0.4 * math.cos(incidence - ear_facing)


def binaural_rir(scene: ScenePlan, src: tuple[float, float], listener: Pose, max_order: int = DEFAULT_MAX_ORDER) -> BinauralRir:
    """Image-source binaural RIR in the boundary rectangle.

    Each image contributes a fractional-delay tap per ear with
    (1 - wall_absorption)^bounces reflection loss, 1/r spreading, and a
    cardioid-like head-shadow gain; the direct path is attenuated by 0.3 when
    an interior obstacle blocks line of sight to either ear.
    """
    if not scene.in_bounds(*src) or scene.inside_obstacle(*src):
        raise ValueError(f"source {src} not in free space")
    if not scene.pose_valid(listener):
        raise ValueError(f"listener at ({listener.x}, {listener.y}) not in free space")
    reflect = 1.0 - scene.wall_absorption
    ears = ear_positions(listener)
    facings = (listener.heading + math.pi / 2, listener.heading - math.pi / 2)
    direct_occluded = any(segment_blocked(scene, src, ear) for ear in ears)

    images: list[tuple[float, float, float]] = []  # (x, y, amplitude scale)
    q_lo, q_hi = -(max_order // 2) - 1, (max_order + 1) // 2 + 1
    for px in (0, 1):
        for qx in range(q_lo, q_hi + 1):
            bx = abs(2 * qx - px)
            if bx > max_order:
                continue
            ix = (1 - 2 * px) * src[0] + 2 * qx * scene.width
            for py in (0, 1):
                for qy in range(q_lo, q_hi + 1):
                    by = abs(2 * qy - py)
                    if bx + by > max_order:
                        continue
                    iy = (1 - 2 * py) * src[1] + 2 * qy * scene.height
                    amp = reflect ** (bx + by)
                    if bx == 0 and by == 0 and direct_occluded:
                        amp *= OCCLUSION_FACTOR
                    images.append((ix, iy, amp))

    taps: list[list[tuple[float, float]]] = [[], []]
    max_delay = 0.0
    for ix, iy, amp in images:
        for e, ((ex, ey), facing) in enumerate(zip(ears, facings)):
            d = math.hypot(ix - ex, iy - ey)
            gain = amp * _head_shadow(math.atan2(iy - ey, ix - ex), facing) / max(d, 1e-3)
            delay = d / SPEED_OF_SOUND * SAMPLE_RATE
            taps[e].append((delay, gain))
            max_delay = max(max_delay, delay)

    n = int(math.ceil(max_delay)) + 2
    out = [np.zeros(n), np.zeros(n)]
    for e in range(2):
        for delay, gain in taps[e]:
            i = int(delay)
            frac = delay - i
            out[e][i] += gain * (1.0 - frac)
            out[e][i + 1] += gain * frac
    return BinauralRir(left=out[0], right=out[1], order=max_order)


# ----------------------------------------------------------------------
# streaming rendering


@dataclass(frozen=True)
class RenderState:
    """Residual reverberation carried past the current step (one per source)."""

    tail_left: np.ndarray
    tail_right: np.ndarray

    @classmethod
    def empty(cls) -> "RenderState":
        return cls(tail_left=np.zeros(0), tail_right=np.zeros(0))


def _convolve_chunk(chunk: np.ndarray, rir: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(chunk)
    if nz.size == 0:
        return np.zeros(CHUNK_SAMPLES)
    if nz.size <= 8:
        # sparse direct path: exact (an impulse reproduces the RIR bit-for-bit)
        out = np.zeros(CHUNK_SAMPLES + rir.shape[0] - 1)
        for i in nz:
            out[i : i + rir.shape[0]] += chunk[i] * rir
        return out
    return fftconvolve(chunk, rir)


def _overlap_add(conv: np.ndarray, tail: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = max(conv.shape[0], tail.shape[0], CHUNK_SAMPLES)
    full = np.zeros(n)
    full[: conv.shape[0]] += conv
    full[: tail.shape[0]] += tail
    frame = full[:CHUNK_SAMPLES]
    new_tail = np.trim_zeros(full[CHUNK_SAMPLES:], "b")
    return frame, new_tail


def render_step(state: RenderState, chunk: np.ndarray, rir: BinauralRir) -> tuple[np.ndarray, RenderState]:
    """Convolve one 4,000-sample chunk with the current RIR and overlap-add the stored tail.

    Returns the 2x4000 binaural frame and the successor state whose tail
    carries the residual response beyond this step.
    """
    chunk = np.asarray(chunk, dtype=float)
    if chunk.shape != (CHUNK_SAMPLES,):
        raise ValueError(f"chunk must have exactly {CHUNK_SAMPLES} samples, got {chunk.shape}")
    frame_l, tail_l = _overlap_add(_convolve_chunk(chunk, rir.left), state.tail_left)
    frame_r, tail_r = _overlap_add(_convolve_chunk(chunk, rir.right), state.tail_right)
    return np.stack([frame_l, frame_r]), RenderState(tail_left=tail_l, tail_right=tail_r)


def mix_sources(frames: list[np.ndarray]) -> np.ndarray:
    """Sample-wise sum of binaural frames (no clipping; float samples)."""
    if not frames:
        return np.zeros((2, CHUNK_SAMPLES))
    shape = frames[0].shape
    for f in frames[1:]:
        if f.shape != shape:
            raise ValueError(f"mismatched frame shapes: {f.shape} vs {shape}")
    out = frames[0].astype(float, copy=True)
    for f in frames[1:]:
        out += f
    return out


# ----------------------------------------------------------------------
# features


@dataclass(frozen=True)
class AudioFeatures:
    """[4 x 22 x 257] tensor: mean magnitude, sin(IPD), cos(IPD), ILD."""

    data: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return self.data[0]

    @property
    def sin_ipd(self) -> np.ndarray:
        return self.data[1]

    @property
    def cos_ipd(self) -> np.ndarray:
        return self.data[2]

    @property
    def ild(self) -> np.ndarray:
        return self.data[3]


def _stft(channel: np.ndarray) -> np.ndarray:
    idx = np.arange(N_FRAMES)[:, None] * HOP + np.arange(N_FFT)[None, :]
    return np.fft.rfft(channel[idx] * _STFT_WINDOW, axis=-1)


def stft_features(frame: np.ndarray) -> AudioFeatures:
    """512-point / hop-160 Hann STFT of a binaural frame, no center padding."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (2, CHUNK_SAMPLES):
        raise ValueError(f"expected a (2, {CHUNK_SAMPLES}) frame, got {frame.shape}")
    spec_l = _stft(frame[0])
    spec_r = _stft(frame[1])
    mag = 0.5 * (np.abs(spec_l) + np.abs(spec_r))
    ipd = np.angle(spec_l) - np.angle(spec_r)
    ild = np.log(np.abs(spec_l) + LOG_EPS) - np.log(np.abs(spec_r) + LOG_EPS)
    return AudioFeatures(data=np.stack([mag, np.sin(ipd), np.cos(ipd), ild]))


# ----------------------------------------------------------------------
# wav export


def write_wav(path: str | Path, stereo: np.ndarray) -> None:
    """Write a (2, n) float array as 16 kHz 16-bit PCM stereo (RIFF little-endian)."""
    if stereo.ndim != 2 or stereo.shape[0] != 2:
        raise ValueError(f"expected a (2, n) array, got {stereo.shape}")
    clipped = np.clip(stereo, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    interleaved = np.empty(pcm.shape[1] * 2, dtype="<i2")
    interleaved[0::2] = pcm[0]
    interleaved[1::2] = pcm[1]
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(interleaved.tobytes())
