"""Session plumbing: config resolution, streaming pipeline, block orchestration.

A session pipeline chains the streaming filters, tumbling 20 s analysis
windows and the adaptation engine; the orchestrator runs the experiment's
block structure on top (IAF calibration feeding individual bands, resting
baseline, fixed-stream monitoring, adaptive blocks).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import classify, dsp, iaf
from .adapt import (
    AdaptationDecision,
    AdaptationEngine,
    BandPowerWindow,
    DEFAULT_THRESHOLD,
    Policy,
    STREAM_CEILING,
    STREAM_FLOOR,
    STREAM_INITIAL,
    StreamState,
    WINDOW_SECONDS,
)
from .errors import ConfigurationError, ProtocolError
from .sim import DEFAULT_MONTAGE, MONTAGES

VISUAL_MONITORING_STREAM = 334


class Block(str, enum.Enum):
    IAF = "iaf"
    RESTING = "resting"
    VISUAL_MONITORING = "visual-monitoring"
    NBACK_NO_ADAPT = "nback-no-adapt"
    NBACK_POSITIVE = "nback-positive"
    NBACK_NEGATIVE = "nback-negative"


ADAPTIVE_BLOCKS = {Block.NBACK_POSITIVE, Block.NBACK_NEGATIVE}

_BLOCK_POLICY = {
    Block.NBACK_POSITIVE: Policy.POSITIVE,
    Block.NBACK_NEGATIVE: Policy.NEGATIVE,
}


@dataclass(frozen=True)
class BlockSpec:
    block: Block
    duration_s: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigurationError("block duration must be positive")


@dataclass(frozen=True)
class SessionConfig:
    """Resolved per-session parameters of the closed loop."""

    policy: Policy | None = None
    threshold: float = DEFAULT_THRESHOLD
    window_seconds: float = WINDOW_SECONDS
    stream_initial: int = STREAM_INITIAL
    stream_floor: int = STREAM_FLOOR
    stream_ceiling: int = STREAM_CEILING
    sample_rate: float = dsp.DEFAULT_SAMPLE_RATE
    montage: tuple[str, ...] = DEFAULT_MONTAGE
    bands: iaf.IndividualBands | None = None
    allow_fallback_bands: bool = True
    posterior: dsp.ChannelSet = dsp.POSTERIOR_ALPHA
    frontal: dsp.ChannelSet = dsp.FRONTAL_THETA
    notch_freq: float = dsp.NOTCH_FREQ
    notch_q: float = dsp.NOTCH_Q
    bandpass_low: float = dsp.BANDPASS_LOW
    bandpass_high: float = dsp.BANDPASS_HIGH
    bandpass_order: int = dsp.BANDPASS_ORDER

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ConfigurationError("window_seconds must be positive")
        if self.threshold <= 0:
            raise ConfigurationError("threshold must be positive")

    def resolved_bands(self) -> iaf.IndividualBands:
        if self.bands is not None:
            return self.bands
        if self.allow_fallback_bands:
            return iaf.fallback_bands()
        raise ConfigurationError(
            "no individual bands available and fallback is disabled")

    def initial_stream(self) -> StreamState:
        return StreamState(current=self.stream_initial,
                           floor=self.stream_floor,
                           ceiling=self.stream_ceiling,
                           initial=self.stream_initial)

    def to_payload(self) -> dict:
        bands = self.resolved_bands() if (self.bands or self.allow_fallback_bands) else None
        return {
            "policy": self.policy.value if self.policy else "none",
            "threshold": self.threshold,
            "window_seconds": self.window_seconds,
            "stream_initial": self.stream_initial,
            "stream_floor": self.stream_floor,
            "stream_ceiling": self.stream_ceiling,
            "sample_rate": self.sample_rate,
            "montage": list(self.montage),
            "bands": None if bands is None else {
                "theta": [bands.theta.low, bands.theta.high],
                "alpha": [bands.alpha.low, bands.alpha.high],
            },
        }

    def with_overrides(self, overrides: Mapping) -> "SessionConfig":
        """Apply hello-payload overrides; unknown keys are a protocol error."""
        known = {
            "policy", "threshold", "window_seconds", "stream_initial",
            "stream_floor", "stream_ceiling", "montage", "session_id",
        }
        unknown = set(overrides) - known
        if unknown:
            raise ProtocolError(f"unknown config keys: {sorted(unknown)}")
        changes: dict = {}
        if "policy" in overrides:
            changes["policy"] = parse_policy(overrides["policy"])
        for key in ("threshold", "window_seconds"):
            if key in overrides:
                changes[key] = float(overrides[key])
        for key in ("stream_initial", "stream_floor", "stream_ceiling"):
            if key in overrides:
                changes[key] = int(overrides[key])
        if "montage" in overrides:
            montage = overrides["montage"]
            if isinstance(montage, str):
                if montage not in MONTAGES:
                    raise ProtocolError(f"unknown montage {montage!r}")
                changes["montage"] = MONTAGES[montage]
            else:
                changes["montage"] = tuple(montage)
        return replace(self, **changes)


def parse_policy(value) -> Policy | None:
    if value is None:
        return None
    text = str(value).lower()
    if text in ("none", ""):
        return None
    try:
        return Policy(text)
    except ValueError:
        raise ProtocolError(f"unknown policy {value!r}") from None


class FilterChain:
    """Session-scoped notch + band-pass with carried streaming state."""

    def __init__(self, config: SessionConfig):
        fs = config.sample_rate
        self._stages = [
            dsp.StreamingFilter(dsp.design_filter(
                "notch", {"center": config.notch_freq, "q": config.notch_q}, fs)),
            dsp.StreamingFilter(dsp.design_filter(
                "bandpass", {"low": config.bandpass_low,
                             "high": config.bandpass_high,
                             "order": config.bandpass_order}, fs)),
        ]

    def process(self, chunk: dsp.EegChunk) -> dsp.EegChunk:
        for stage in self._stages:
            chunk = stage.process(chunk)
        return chunk


class WindowAccumulator:
    """Carves a filtered sample stream into tumbling analysis windows."""

    def __init__(self, config: SessionConfig):
        self.config = config
        self.bands = config.resolved_bands()
        self.windows: list[BandPowerWindow] = []
        self._pieces: list[np.ndarray] = []
        self._buffered = 0
        self._t0: float | None = None
        self._win_n = int(round(config.window_seconds * config.sample_rate))

    def feed(self, chunk: dsp.EegChunk) -> list[BandPowerWindow]:
        if self._t0 is None:
            self._t0 = chunk.start_time
        self._pieces.append(chunk.samples)
        self._buffered += chunk.n_samples
        completed = []
        while self._buffered >= self._win_n:
            completed.append(self._pop_window())
        return completed

    def _pop_window(self) -> BandPowerWindow:
        data = np.concatenate(self._pieces, axis=-1)
        window_samples = data[:, :self._win_n]
        remainder = data[:, self._win_n:]
        self._pieces = [remainder] if remainder.size else []
        self._buffered -= self._win_n

        index = len(self.windows)
        start = self._t0 + index * (self._win_n / self.config.sample_rate)
        window_chunk = dsp.EegChunk(start, self.config.sample_rate,
                                    self.config.montage, window_samples)
        psd = dsp.welch_psd(window_chunk)
        window = BandPowerWindow(
            index=index, start_time=start,
            duration=self._win_n / self.config.sample_rate,
            alpha_power=dsp.band_power(psd, self.bands.alpha,
                                       self.config.posterior),
            theta_power=dsp.band_power(psd, self.bands.theta,
                                       self.config.frontal))
        self.windows.append(window)
        return window


class SessionPipeline:
    """Filter -> window -> decide for one continuous adaptive session."""

    def __init__(self, config: SessionConfig):
        self.config = config
        self.filters = FilterChain(config)
        self.accumulator = WindowAccumulator(config)
        self.engine = None
        if config.policy is not None:
            self.engine = AdaptationEngine(policy=config.policy,
                                           threshold=config.threshold,
                                           stream=config.initial_stream())
        self.decisions: list[AdaptationDecision] = []

    @property
    def windows(self) -> list[BandPowerWindow]:
        return self.accumulator.windows

    def feed(self, chunk: dsp.EegChunk) -> list[AdaptationDecision]:
        self._validate(chunk)
        filtered = self.filters.process(chunk)
        decisions = []
        for window in self.accumulator.feed(filtered):
            if self.engine is None:
                continue
            decision = self.engine.step(window)
            if decision is not None:
                decisions.append(decision)
        self.decisions.extend(decisions)
        return decisions

    def _validate(self, chunk: dsp.EegChunk) -> None:
        if chunk.sample_rate != self.config.sample_rate:
            raise ConfigurationError(
                f"chunk sampled at {chunk.sample_rate} Hz, session expects "
                f"{self.config.sample_rate} Hz")
        if chunk.channel_labels != self.config.montage:
            if chunk.n_channels != len(self.config.montage):
                raise ConfigurationError(
                    f"chunk has {chunk.n_channels} channels, session expects "
                    f"{len(self.config.montage)}")
            raise ConfigurationError(
                "chunk channel labels do not match the session montage")


@dataclass
class SessionResult:
    """Everything the orchestrated block plan produced."""

    events: list[dict] = field(default_factory=list)
    decisions: list[AdaptationDecision] = field(default_factory=list)
    iaf_estimate: iaf.IafEstimate | None = None
    bands: iaf.IndividualBands | None = None
    resting_means: dict[str, float] | None = None

    def log_records(self) -> list[dict]:
        """Events and decisions merged in time order for the session log."""
        records = [dict(e) for e in self.events]
        records.extend(d.as_dict() for d in self.decisions)
        records.sort(key=lambda r: (r.get("t", 0.0), "event" in r))
        return records


def orchestrate_session(chunks: Iterable[dsp.EegChunk],
                        plan: Sequence[BlockSpec],
                        config: SessionConfig) -> SessionResult:
    """Run a block plan over a chunk stream.

    Adaptation runs only in the adaptive blocks (fresh stream per block);
    the IAF block's estimate supplies the individual bands for every later
    block, the resting block yields per-band baseline means, and the visual
    monitoring block pins the stream at its fixed value. Block transitions
    are recorded as events on the chunk clock.
    """
    _check_bands_available(plan, config)
    result = SessionResult()
    filters = FilterChain(config)
    runner = _BlockRunner(config, result)

    plan_iter = iter(plan)
    current = next(plan_iter, None)
    if current is None:
        raise ConfigurationError("block plan is empty")
    remaining = int(round(current.duration_s * config.sample_rate))
    started = False

    for chunk in chunks:
        filtered = filters.process(chunk)
        while filtered is not None:
            if not started:
                runner.start_block(current, filtered.start_time)
                started = True
            if filtered.n_samples <= remaining:
                remaining -= filtered.n_samples
                runner.feed(filtered)
                boundary_time = filtered.end_time
                filtered = None
            else:
                head, filtered = _split_chunk(filtered, remaining)
                remaining = 0
                runner.feed(head)
                boundary_time = head.end_time
            if remaining == 0:
                runner.end_block(boundary_time)
                started = False
                current = next(plan_iter, None)
                if current is None:
                    if filtered is not None:
                        raise ConfigurationError(
                            "chunk stream extends past the end of the block plan")
                    return result
                remaining = int(round(current.duration_s * config.sample_rate))
    if started:
        runner.end_block(runner.last_time)
    return result


def _split_chunk(chunk: dsp.EegChunk, n: int) -> tuple[dsp.EegChunk, dsp.EegChunk]:
    head = dsp.EegChunk(chunk.start_time, chunk.sample_rate,
                        chunk.channel_labels, chunk.samples[:, :n])
    tail = dsp.EegChunk(chunk.start_time + n / chunk.sample_rate,
                        chunk.sample_rate, chunk.channel_labels,
                        chunk.samples[:, n:])
    return head, tail


def _check_bands_available(plan: Sequence[BlockSpec],
                           config: SessionConfig) -> None:
    bands_ready = config.bands is not None or config.allow_fallback_bands
    for spec in plan:
        if spec.block is Block.IAF:
            bands_ready = True
        elif spec.block in ADAPTIVE_BLOCKS and not bands_ready:
            raise ConfigurationError(
                f"adaptive block {spec.block.value!r} requested before IAF "
                "bands are available and fallback is disabled")


class _BlockRunner:
    """Per-block state of the orchestrator."""

    def __init__(self, config: SessionConfig, result: SessionResult):
        self.config = config
        self.result = result
        self.block: BlockSpec | None = None
        self.last_time = 0.0
        self._accumulator: WindowAccumulator | None = None
        self._engine: AdaptationEngine | None = None
        self._collected: list[dsp.EegChunk] = []

    def _current_config(self) -> SessionConfig:
        if self.result.bands is not None:
            return replace(self.config, bands=self.result.bands)
        return self.config

    def start_block(self, spec: BlockSpec, t: float) -> None:
        self.block = spec
        self._collected = []
        self._accumulator = None
        self._engine = None
        event = {"event": "block-start", "block": spec.block.value, "t": t}
        if spec.block is Block.VISUAL_MONITORING:
            event["stream"] = VISUAL_MONITORING_STREAM
        if spec.block in ADAPTIVE_BLOCKS:
            cfg = replace(self._current_config(),
                          policy=_BLOCK_POLICY[spec.block])
            cfg.resolved_bands()  # adaptive blocks need bands now
            self._accumulator = WindowAccumulator(cfg)
            self._engine = AdaptationEngine(policy=cfg.policy,
                                            threshold=cfg.threshold,
                                            stream=cfg.initial_stream())
        elif spec.block in (Block.VISUAL_MONITORING, Block.NBACK_NO_ADAPT):
            self._accumulator = WindowAccumulator(self._current_config())
        self.result.events.append(event)

    def feed(self, chunk: dsp.EegChunk) -> None:
        self.last_time = chunk.end_time
        if self.block is None:
            return
        if self.block.block in (Block.IAF, Block.RESTING):
            self._collected.append(chunk)
            return
        if self._accumulator is None:
            return
        for window in self._accumulator.feed(chunk):
            if self._engine is not None:
                decision = self._engine.step(window)
                if decision is not None:
                    self.result.decisions.append(decision)

    def end_block(self, t: float) -> None:
        if self.block is None:
            return
        if self.block.block is Block.IAF and self._collected:
            recording = _concat_chunks(self._collected)
            trimmed = iaf.trim_edges(recording)
            estimate = iaf.estimate_iaf(trimmed, posterior=self.config.posterior)
            self.result.iaf_estimate = estimate
            self.result.bands = iaf.derive_bands(estimate)
        elif self.block.block is Block.RESTING and self._collected:
            self.result.resting_means = self._resting_means()
        self.result.events.append(
            {"event": "block-end", "block": self.block.block.value, "t": t})
        self.block = None

    def _resting_means(self) -> dict[str, float]:
        recording = _concat_chunks(self._collected)
        cfg = self._current_config()
        bands = cfg.resolved_bands()
        epoch_n = int(round(classify.EPOCH_SECONDS * cfg.sample_rate))
        sums = {name: 0.0 for name in classify.FEATURE_ORDER}
        count = 0
        for start in range(0, recording.n_samples - epoch_n + 1, epoch_n):
            epoch = dsp.EegChunk(
                recording.start_time + start / cfg.sample_rate,
                cfg.sample_rate, cfg.montage,
                recording.samples[:, start:start + epoch_n])
            powers = classify.extract_features(epoch, bands)
            for name, value in powers.items():
                sums[name] += value
            count += 1
        if count == 0:
            raise ConfigurationError(
                "resting block shorter than one analysis epoch")
        return {name: total / count for name, total in sums.items()}


def _concat_chunks(chunks: Sequence[dsp.EegChunk]) -> dsp.EegChunk:
    first = chunks[0]
    samples = np.concatenate([c.samples for c in chunks], axis=-1)
    return dsp.EegChunk(first.start_time, first.sample_rate,
                        first.channel_labels, samples)
