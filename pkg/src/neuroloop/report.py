"""Session-log reporting: delimited decision tables plus rendered figures.

Reads the JSONL session log (decision records interleaved with block
events) and writes a CSV of the decisions next to matplotlib figures of the
stream trajectory and the per-window band trends.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .adapt import DEFAULT_THRESHOLD
from .errors import ParseError

DECISION_FIELDS = ("t", "window_index", "delta_alpha", "delta_theta",
                   "alpha_sig", "theta_sig", "policy", "action",
                   "stream_after")

INCREASE_COLOR = "#c44e52"
DECREASE_COLOR = "#4c72b0"
HOLD_COLOR = "#8c8c8c"


def load_session_log(path) -> tuple[list[dict], list[dict]]:
    """Split a session log into (decisions, events)."""
    decisions: list[dict] = []
    events: list[dict] = []
    with open(path) as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed session log ({exc.msg})",
                                 line_number=line_number) from None
            if "event" in record:
                events.append(record)
            else:
                missing = [f for f in DECISION_FIELDS if f not in record]
                if missing:
                    raise ParseError(
                        f"decision record missing fields {missing}",
                        line_number=line_number)
                decisions.append(record)
    return decisions, events


def write_decisions_csv(decisions: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DECISION_FIELDS,
                                extrasaction="ignore")
        writer.writeheader()
        writer.writerows(decisions)


def render_stream_figure(decisions: list[dict], path,
                         events: list[dict] | None = None) -> None:
    """Step plot of the stream value with per-decision action markers."""
    fig, ax = plt.subplots(figsize=(9, 4))
    if decisions:
        t = [d["t"] for d in decisions]
        stream = [d["stream_after"] for d in decisions]
        ax.step(t, stream, where="post", color="#55a868", lw=1.8,
                label="stream")
        for color, pred, label in (
                (INCREASE_COLOR, lambda a: a > 0, "increase"),
                (DECREASE_COLOR, lambda a: a < 0, "decrease"),
                (HOLD_COLOR, lambda a: a == 0, "hold")):
            xs = [d["t"] for d in decisions if pred(d["action"])]
            ys = [d["stream_after"] for d in decisions if pred(d["action"])]
            if xs:
                ax.scatter(xs, ys, s=18, color=color, zorder=3, label=label)
    for event in events or []:
        if event.get("event") == "block-start":
            ax.axvline(event["t"], color="0.8", lw=0.8, zorder=0)
    ax.set_xlabel("session time [s]")
    ax.set_ylabel("stream [NPCs/min]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trend_figure(decisions: list[dict], path,
                        threshold: float = DEFAULT_THRESHOLD) -> None:
    """Per-window relative band changes against the decision threshold."""
    fig, ax = plt.subplots(figsize=(9, 4))
    if decisions:
        t = [d["t"] for d in decisions]
        ax.plot(t, [d["delta_alpha"] for d in decisions], marker="o", ms=3,
                lw=1.0, color="#4c72b0", label="alpha change")
        ax.plot(t, [d["delta_theta"] for d in decisions], marker="s", ms=3,
                lw=1.0, color="#dd8452", label="theta change")
        ax.axhspan(-threshold, threshold, color="0.92", zorder=0)
    ax.axhline(threshold, color="0.6", lw=0.8, ls="--")
    ax.axhline(-threshold, color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("session time [s]")
    ax.set_ylabel("relative change")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def generate_report(session_path, out_dir,
                    threshold: float = DEFAULT_THRESHOLD) -> dict[str, Path]:
    """Write the decision CSV and both figures; returns the output paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    decisions, events = load_session_log(session_path)
    paths = {
        "decisions_csv": out / "decisions.csv",
        "stream_figure": out / "stream.png",
        "trends_figure": out / "band_trends.png",
    }
    write_decisions_csv(decisions, paths["decisions_csv"])
    render_stream_figure(decisions, paths["stream_figure"], events)
    render_trend_figure(decisions, paths["trends_figure"], threshold)
    return paths
