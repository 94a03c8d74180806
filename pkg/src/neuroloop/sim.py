"""Deterministic synthetic EEG with scripted attention states.

Each channel carries 1/f^beta background noise; narrowband oscillators with
slowly jittered frequency are added on the posterior (alpha) and frontal
(theta) sets. Because an oscillator of amplitude A contributes A^2/2 of band
power, the whole closed loop can be checked against analytic expectations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np

from . import dsp, protocol
from .errors import (
    ConfigurationError,
    InvalidParameterError,
    ParseError,
    SequencingError,
)

# Scalp montage of the 64-channel cap (10-20 system); the online reference
# FCz is carried as an ordinary (silent) row.
DEFAULT_MONTAGE = (
    "Fp1", "Fz", "F3", "F7", "F9", "FC5", "FC1", "C3", "T7", "CP5", "CP1",
    "Pz", "P3", "P7", "P9", "O1", "Oz", "O2", "P10", "P8", "P4", "CP2",
    "CP6", "T8", "C4", "Cz", "FC2", "FC6", "F10", "F8", "F4", "Fp2", "AF7",
    "AF3", "AFz", "F1", "F5", "FT7", "FC3", "C1", "C5", "TP7", "CP3", "P1",
    "P5", "PO7", "PO3", "Iz", "POz", "PO4", "PO8", "P6", "P2", "CPz", "CP4",
    "TP8", "C6", "C2", "FC4", "FT8", "F6", "F2", "AF4", "AF8", "FCz",
)

MONTAGES = {"default-64": DEFAULT_MONTAGE}

CHUNK_SECONDS = 1.0
FREQ_JITTER_HZ = 0.2


@dataclass(frozen=True)
class StateProfile:
    """Oscillator amplitudes and noise level of one scripted state."""

    name: str
    alpha_amp: float
    theta_amp: float
    alpha_freq: float = 10.5
    theta_freq: float = 6.0
    noise_rms: float = 1.0
    noise_exponent: float = 1.0

    def __post_init__(self):
        if self.alpha_amp < 0 or self.theta_amp < 0:
            raise InvalidParameterError("oscillator amplitudes must be >= 0")
        if self.noise_rms <= 0:
            raise InvalidParameterError("noise level must be positive")


# Internal attention raises alpha and theta amplitudes 30 % over neutral,
# external lowers them 30 %; power scales with the square, clearing the 15 %
# decision threshold decisively.
NEUTRAL_PROFILE = StateProfile("neutral", alpha_amp=2.0, theta_amp=2.0)
INTERNAL_PROFILE = StateProfile("internal", alpha_amp=2.6, theta_amp=2.6)
EXTERNAL_PROFILE = StateProfile("external", alpha_amp=1.4, theta_amp=1.4)

PROFILES = {p.name: p for p in
            (NEUTRAL_PROFILE, INTERNAL_PROFILE, EXTERNAL_PROFILE)}


def profile_for(name: str, overrides: dict | None = None) -> StateProfile:
    """A named profile, optionally with field overrides (custom allowed)."""
    base = PROFILES.get(name.lower())
    if base is None:
        base = replace(NEUTRAL_PROFILE, name=name)
    if overrides:
        base = replace(base, **overrides)
    return base


@dataclass(frozen=True)
class Scenario:
    """An ordered script of (state profile, duration) segments."""

    segments: tuple[tuple[StateProfile, float], ...]
    seed: int
    sample_rate: float = dsp.DEFAULT_SAMPLE_RATE
    channel_labels: tuple[str, ...] = DEFAULT_MONTAGE

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(
            (p, float(d)) for p, d in self.segments))
        if any(d <= 0 for _, d in self.segments):
            raise InvalidParameterError("segment durations must be positive")

    @property
    def duration(self) -> float:
        return sum(d for _, d in self.segments)


def _shaped_noise(rng: np.random.Generator, n_channels: int, n: int,
                  rms: float, exponent: float, fs: float) -> np.ndarray:
    """Independent 1/f^exponent noise per channel, normalized to ``rms``."""
    white = rng.standard_normal((n_channels, n))
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    shaping = np.zeros_like(freqs)
    shaping[1:] = freqs[1:] ** (-exponent / 2.0)
    shaped = np.fft.irfft(spectrum * shaping, n, axis=-1)
    scale = shaped.std(axis=-1, keepdims=True)
    scale[scale == 0] = 1.0
    return shaped / scale * rms


def _oscillator(rng: np.random.Generator, freq: float, amp: float, n: int,
                fs: float) -> np.ndarray:
    """Sinusoid with a slow random-walk frequency jitter within +-0.2 Hz."""
    walk = np.cumsum(rng.standard_normal(n)) * (FREQ_JITTER_HZ / np.sqrt(n))
    inst_freq = freq + np.clip(walk, -FREQ_JITTER_HZ, FREQ_JITTER_HZ)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    phase = phase0 + 2.0 * np.pi * np.cumsum(inst_freq) / fs
    return amp * np.sin(phase)


def generate(profile: StateProfile, duration: float, seed,
             sample_rate: float = dsp.DEFAULT_SAMPLE_RATE,
             channel_labels: tuple[str, ...] = DEFAULT_MONTAGE,
             start_time: float = 0.0,
             posterior: dsp.ChannelSet = dsp.POSTERIOR_ALPHA,
             frontal: dsp.ChannelSet = dsp.FRONTAL_THETA) -> dsp.EegChunk:
    """One deterministic chunk of synthetic EEG for a state profile."""
    if duration < 1.0:
        raise InvalidParameterError("generated duration must be >= 1 s")
    for cs, amp in ((posterior, profile.alpha_amp), (frontal, profile.theta_amp)):
        if amp > 0:
            unknown = [lab for lab in cs.labels if lab not in channel_labels]
            if unknown:
                raise ConfigurationError(
                    f"{cs.role} labels missing from the montage: {unknown}")

    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    samples = _shaped_noise(rng, len(channel_labels), n, profile.noise_rms,
                            profile.noise_exponent, sample_rate)
    index = {lab: i for i, lab in enumerate(channel_labels)}
    if profile.alpha_amp > 0:
        wave = _oscillator(rng, profile.alpha_freq, profile.alpha_amp, n,
                           sample_rate)
        samples[[index[lab] for lab in posterior.labels]] += wave
    if profile.theta_amp > 0:
        wave = _oscillator(rng, profile.theta_freq, profile.theta_amp, n,
                           sample_rate)
        samples[[index[lab] for lab in frontal.labels]] += wave
    return dsp.EegChunk(start_time, sample_rate, channel_labels, samples)


def run_scenario(scenario: Scenario) -> Iterator[tuple[dsp.EegChunk, str]]:
    """Yield (chunk, ground-truth state) pairs in 1 s quanta.

    State transitions fall exactly on segment boundaries; the chunk clock is
    continuous across the whole scenario.
    """
    seeds = np.random.SeedSequence(scenario.seed).spawn(len(scenario.segments))
    t = 0.0
    for (profile, seg_duration), seg_seed in zip(scenario.segments, seeds):
        chunk = generate(profile, seg_duration, seg_seed,
                         sample_rate=scenario.sample_rate,
                         channel_labels=scenario.channel_labels, start_time=t)
        step = int(round(CHUNK_SECONDS * scenario.sample_rate))
        for start in range(0, chunk.n_samples, step):
            piece = chunk.samples[:, start:start + step]
            yield (dsp.EegChunk(t + start / scenario.sample_rate,
                                scenario.sample_rate,
                                scenario.channel_labels, piece),
                   profile.name)
        t += seg_duration


def load_scenario(path) -> Scenario:
    """Read a scenario description from its JSON file format."""
    with open(path) as fh:
        payload = json.load(fh)
    montage = payload.get("montage", "default-64")
    if isinstance(montage, str):
        if montage not in MONTAGES:
            raise ConfigurationError(f"unknown montage {montage!r}")
        labels = MONTAGES[montage]
    else:
        labels = tuple(montage)
    segments = tuple(
        (profile_for(seg["state"], seg.get("overrides")), float(seg["duration_s"]))
        for seg in payload["segments"])
    return Scenario(segments=segments, seed=int(payload.get("seed", 0)),
                    sample_rate=float(payload.get("sample_rate",
                                                  dsp.DEFAULT_SAMPLE_RATE)),
                    channel_labels=labels)


def load_replay(path) -> Iterator[dsp.EegChunk]:
    """Stream chunks back from a JSON-lines record file.

    Lines must be ``eeg`` messages in timestamp order with a consistent rate
    and montage; violations raise with the offending line number.
    """
    last_end_us = None
    reference: tuple[float, tuple[str, ...]] | None = None
    with open(path, "rb") as fh:
        for line_number, raw in enumerate(fh, start=1):
            stripped = raw.strip()
            if not stripped:
                continue
            try:
                message = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})",
                                 line_number=line_number) from None
            try:
                chunk = protocol.chunk_from_message(message)
            except (KeyError, TypeError, ValueError, InvalidParameterError) as exc:
                raise ParseError(f"invalid eeg record ({exc})",
                                 line_number=line_number) from None
            if reference is None:
                reference = (chunk.sample_rate, chunk.channel_labels)
            elif (chunk.sample_rate, chunk.channel_labels) != reference:
                raise ConfigurationError(
                    f"line {line_number}: sample rate or montage differs "
                    "from the first record")
            start_us = round(chunk.start_time * 1e6)
            if last_end_us is not None and start_us < last_end_us:
                raise SequencingError(
                    f"line {line_number}: chunk at {chunk.start_time:.6f} s "
                    "precedes the end of the previous chunk")
            last_end_us = round(chunk.end_time * 1e6)
            yield chunk


def record_chunks(path, chunks: Iterable[dsp.EegChunk],
                  session_id: str = "record") -> int:
    """Write chunks to the JSON-lines record format; returns the count."""
    count = 0
    with open(path, "w") as fh:
        for chunk in chunks:
            fh.write(protocol.encode_message(
                protocol.chunk_to_message(chunk, session_id)).decode())
            count += 1
    return count
