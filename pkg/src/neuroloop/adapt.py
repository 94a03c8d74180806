"""Closed-loop adaptation: window pairing, trend classification, policies.

Mean alpha/theta powers of consecutive 20 s windows are compared as relative
changes against a 15 % threshold; the policy matrix maps the joint trend to a
visual-complexity action (+16 / -8 / hold) applied to the clamped NPC stream.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

from .errors import DegenerateBaselineError, InvalidParameterError, SequencingError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.15
WINDOW_SECONDS = 20.0

STREAM_INITIAL = 115
STREAM_FLOOR = 8
STREAM_CEILING = 400

INCREASE = 16
DECREASE = -8
HOLD = 0

# w1 powers at or below this are treated as a degenerate baseline.
BASELINE_EPS = 1e-12

_TIME_TOL = 1e-6


class Significance(str, enum.Enum):
    UP = "up"
    DOWN = "down"
    NEUTRAL = "neutral"


class Policy(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class BandPowerWindow:
    """Mean alpha/theta power over one analysis window."""

    index: int
    start_time: float
    duration: float
    alpha_power: float
    theta_power: float

    def __post_init__(self):
        if self.duration <= 0:
            raise InvalidParameterError("window duration must be positive")
        if self.alpha_power < 0 or self.theta_power < 0:
            raise InvalidParameterError("band powers must be non-negative")

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


@dataclass(frozen=True)
class BandTrend:
    """Relative changes of both bands and their per-band significance."""

    delta_alpha: float
    delta_theta: float
    alpha_sig: Significance
    theta_sig: Significance
    threshold: float = DEFAULT_THRESHOLD


@dataclass(frozen=True)
class StreamState:
    """The NPC stream value with its clamping bounds."""

    current: int = STREAM_INITIAL
    floor: int = STREAM_FLOOR
    ceiling: int = STREAM_CEILING
    initial: int = STREAM_INITIAL

    def __post_init__(self):
        if self.floor <= 0:
            raise InvalidParameterError("stream floor must be positive")
        if not (self.floor <= self.current <= self.ceiling):
            raise InvalidParameterError(
                f"stream {self.current} outside [{self.floor}, {self.ceiling}]")


@dataclass(frozen=True)
class AdaptationDecision:
    """One per-window verdict of the closed loop."""

    t: float
    window_index: int
    trend: BandTrend
    policy: Policy
    action: int
    stream_after: int

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "window_index": self.window_index,
            "delta_alpha": self.trend.delta_alpha,
            "delta_theta": self.trend.delta_theta,
            "alpha_sig": self.trend.alpha_sig.value,
            "theta_sig": self.trend.theta_sig.value,
            "policy": self.policy.value,
            "action": self.action,
            "stream_after": self.stream_after,
        }


def relative_change(w1: BandPowerWindow, w2: BandPowerWindow,
                    band: str) -> float:
    """Relative change (p2 - p1) / p1 of one band between two windows."""
    attr = f"{band}_power"
    p1 = getattr(w1, attr)
    p2 = getattr(w2, attr)
    if p1 <= BASELINE_EPS:
        raise DegenerateBaselineError(
            f"{band} baseline power {p1} is at or below {BASELINE_EPS}")
    return (p2 - p1) / p1


def _significance(delta: float, threshold: float) -> Significance:
    if delta >= threshold:
        return Significance.UP
    if delta <= -threshold:
        return Significance.DOWN
    return Significance.NEUTRAL


def classify_trend(delta_alpha: float, delta_theta: float,
                   threshold: float = DEFAULT_THRESHOLD) -> BandTrend:
    """Classify both bands' changes; |delta| equal to the threshold counts."""
    if threshold <= 0:
        raise InvalidParameterError("threshold must be positive")
    return BandTrend(delta_alpha=delta_alpha, delta_theta=delta_theta,
                     alpha_sig=_significance(delta_alpha, threshold),
                     theta_sig=_significance(delta_theta, threshold),
                     threshold=threshold)


# Action tables keyed by (alpha trend, theta trend); any combination with a
# neutral band holds under both policies (action requires both bands).
_POSITIVE_TABLE = {
    (Significance.UP, Significance.UP): INCREASE,
    (Significance.DOWN, Significance.DOWN): DECREASE,
    (Significance.DOWN, Significance.UP): DECREASE,
    (Significance.UP, Significance.DOWN): INCREASE,
}
_NEGATIVE_TABLE = {
    (Significance.UP, Significance.UP): INCREASE,
    (Significance.DOWN, Significance.DOWN): INCREASE,
    (Significance.DOWN, Significance.UP): INCREASE,
    (Significance.UP, Significance.DOWN): DECREASE,
}


def decide(trend: BandTrend, policy: Policy) -> int:
    """Map a joint alpha/theta trend to a stream action under a policy."""
    key = (trend.alpha_sig, trend.theta_sig)
    if Significance.NEUTRAL in key:
        return HOLD
    table = _POSITIVE_TABLE if policy is Policy.POSITIVE else _NEGATIVE_TABLE
    return table[key]


def apply_action(state: StreamState, action: int) -> StreamState:
    """New stream state with ``current`` moved by ``action`` and clamped."""
    clamped = min(max(state.current + action, state.floor), state.ceiling)
    return replace(state, current=clamped)


@dataclass
class AdaptationEngine:
    """Per-session decision loop over tumbling band-power windows.

    Windows must arrive back to back; the first one is the baseline and
    produces no decision, after which every completed window is compared to
    its immediate predecessor and yields exactly one decision.
    """

    policy: Policy
    threshold: float = DEFAULT_THRESHOLD
    stream: StreamState = field(default_factory=StreamState)
    log: list[AdaptationDecision] = field(default_factory=list)
    _previous: BandPowerWindow | None = None

    def step(self, window: BandPowerWindow) -> AdaptationDecision | None:
        prev = self._previous
        if prev is not None:
            if window.index != prev.index + 1:
                raise SequencingError(
                    f"window index {window.index} after {prev.index}")
            if abs(window.start_time - prev.end_time) > _TIME_TOL:
                raise SequencingError(
                    f"window at {window.start_time:.6f} s does not abut the "
                    f"previous window ending at {prev.end_time:.6f} s")
        self._previous = window
        if prev is None:
            return None

        trend = self._trend(prev, window)
        action = decide(trend, self.policy)
        self.stream = apply_action(self.stream, action)
        decision = AdaptationDecision(
            t=window.end_time, window_index=window.index, trend=trend,
            policy=self.policy, action=action, stream_after=self.stream.current)
        self.log.append(decision)
        return decision

    def _trend(self, w1: BandPowerWindow, w2: BandPowerWindow) -> BandTrend:
        deltas = {}
        for band in ("alpha", "theta"):
            try:
                deltas[band] = relative_change(w1, w2, band)
            except DegenerateBaselineError:
                # Hold instead of failing the session on a dead baseline.
                logger.warning(
                    "degenerate %s baseline in window %d; holding",
                    band, w2.index)
                deltas[band] = 0.0
        return classify_trend(deltas["alpha"], deltas["theta"], self.threshold)
