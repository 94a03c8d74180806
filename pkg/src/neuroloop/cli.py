"""Command-line front end: serve, simulate, replay, iaf, classify, bench, report."""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import classify, dsp, iaf, protocol, report, sim
from .errors import NeuroloopError
from .server import serve
from .session import SessionConfig, SessionPipeline, parse_policy


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuroloop",
        description="Closed-loop EEG attention adaptation toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_serve = sub.add_parser("serve", help="run the TCP stream bridge")
    p_serve.add_argument("--bind", default="127.0.0.1:8765",
                         help="host:port to listen on")
    p_serve.add_argument("--log-dir", default=None,
                         help="session log directory (or $NEUROLOOP_LOG_DIR)")
    _add_session_flags(p_serve)

    p_sim = sub.add_parser("simulate",
                           help="run a scripted scenario through the loop")
    p_sim.add_argument("--scenario", required=True, help="scenario JSON file")
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_sim.add_argument("--out", default=None,
                       help="decision log JSONL output path")
    p_sim.add_argument("--record", default=None,
                       help="also record the generated chunks as JSONL")
    _add_session_flags(p_sim)

    p_replay = sub.add_parser("replay",
                              help="re-run a recorded chunk file offline")
    p_replay.add_argument("--in", dest="infile", required=True,
                          help="chunk record JSONL")
    p_replay.add_argument("--out", default=None,
                          help="decision log JSONL output path")
    _add_session_flags(p_replay)

    p_iaf = sub.add_parser("iaf",
                           help="estimate the individual alpha frequency")
    p_iaf.add_argument("--in", dest="infile", required=True,
                       help="eyes-closed recording as chunk JSONL")
    p_iaf.add_argument("--trim", type=float, default=iaf.EDGE_TRIM_SECONDS,
                       help="seconds to drop from both ends")

    p_cls = sub.add_parser("classify",
                           help="train or evaluate the attention classifier")
    cls_sub = p_cls.add_subparsers(dest="classify_command", metavar="action")
    p_train = cls_sub.add_parser("train", help="train on a feature CSV")
    p_train.add_argument("--features", required=True)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--ratios", default="12,5,5",
                         help="train,val,test participant ratios")
    p_train.add_argument("--shrinkage", type=float,
                         default=classify.DEFAULT_SHRINKAGE)
    p_train.add_argument("--model-out", default=None,
                         help="where to write the trained model JSON")
    p_eval = cls_sub.add_parser("eval", help="evaluate a trained model")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--features", required=True)

    p_bench = sub.add_parser("bench",
                             help="measure per-window processing latency")
    p_bench.add_argument("--window-seconds", type=float, default=20.0)
    p_bench.add_argument("--channels", type=int, default=64)
    p_bench.add_argument("--repeats", type=int, default=10)
    p_bench.add_argument("--sample-rate", type=float,
                         default=dsp.DEFAULT_SAMPLE_RATE)

    p_report = sub.add_parser("report",
                              help="render figures and CSV from a session log")
    p_report.add_argument("--session", required=True,
                          help="session log JSONL")
    p_report.add_argument("--out-dir", required=True)
    p_report.add_argument("--threshold", type=float, default=0.15)

    return parser


def _add_session_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--policy",
                        choices=["positive", "negative", "none"],
                        default=None)
    parser.add_argument("--threshold", type=float, default=None)
    parser.add_argument("--window-seconds", type=float, default=None)
    parser.add_argument("--stream-initial", type=int, default=None)
    parser.add_argument("--stream-floor", type=int, default=None)
    parser.add_argument("--stream-ceiling", type=int, default=None)
    parser.add_argument("--montage", default=None,
                        help="montage name (default: default-64)")


def _session_config(args) -> SessionConfig:
    overrides = {}
    if args.policy is not None:
        overrides["policy"] = args.policy
    for flag, key in (("threshold", "threshold"),
                      ("window_seconds", "window_seconds"),
                      ("stream_initial", "stream_initial"),
                      ("stream_floor", "stream_floor"),
                      ("stream_ceiling", "stream_ceiling"),
                      ("montage", "montage")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    return SessionConfig().with_overrides(overrides)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "classify" and args.classify_command is None:
        parser.parse_args(["classify", "--help"])
        return 2
    try:
        return _dispatch(args, parser)
    except NeuroloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, parser) -> int:
    if args.command == "serve":
        host, _, port = args.bind.rpartition(":")
        serve(_session_config(args), bind=(host or "127.0.0.1", int(port)),
              log_dir=args.log_dir)
        return 0
    if args.command == "simulate":
        return _cmd_simulate(args)
    if args.command == "replay":
        return _cmd_replay(args)
    if args.command == "iaf":
        return _cmd_iaf(args)
    if args.command == "classify":
        return _cmd_classify(args)
    if args.command == "bench":
        return _cmd_bench(args)
    if args.command == "report":
        return _cmd_report(args)
    parser.print_usage(sys.stderr)
    return 2


def _run_pipeline(chunks, config, out_path) -> int:
    pipeline = SessionPipeline(config)
    count = 0
    sink = open(out_path, "w") if out_path else sys.stdout
    try:
        for chunk in chunks:
            for decision in pipeline.feed(chunk):
                sink.write(json.dumps(decision.as_dict(),
                                      separators=(",", ":")) + "\n")
                count += 1
    finally:
        if out_path:
            sink.close()
    return count


def _cmd_simulate(args) -> int:
    scenario = sim.load_scenario(args.scenario)
    if args.seed is not None:
        scenario = sim.Scenario(segments=scenario.segments, seed=args.seed,
                                sample_rate=scenario.sample_rate,
                                channel_labels=scenario.channel_labels)
    config = _session_config(args)
    if config.policy is None:
        print("note: no --policy given, decisions will not be produced",
              file=sys.stderr)

    recorder = None
    if args.record:
        recorder = open(args.record, "w")

    def chunks():
        for chunk, _state in sim.run_scenario(scenario):
            if recorder is not None:
                recorder.write(protocol.encode_message(
                    protocol.chunk_to_message(chunk, "sim")).decode())
            yield chunk

    try:
        count = _run_pipeline(chunks(), config, args.out)
    finally:
        if recorder is not None:
            recorder.close()
    print(f"simulated {scenario.duration:.0f} s, {count} decisions",
          file=sys.stderr)
    return 0


def _cmd_replay(args) -> int:
    config = _session_config(args)
    count = _run_pipeline(sim.load_replay(args.infile), config, args.out)
    print(f"replayed {args.infile}, {count} decisions", file=sys.stderr)
    return 0


def _cmd_iaf(args) -> int:
    chunks = list(sim.load_replay(args.infile))
    if not chunks:
        print("error: recording file contains no chunks", file=sys.stderr)
        return 1
    recording = dsp.EegChunk(
        chunks[0].start_time, chunks[0].sample_rate,
        chunks[0].channel_labels,
        np.concatenate([c.samples for c in chunks], axis=-1))
    trimmed = iaf.trim_edges(recording, trim=args.trim)
    fs = trimmed.sample_rate
    notch = dsp.design_filter("notch", {"center": dsp.NOTCH_FREQ,
                                        "q": dsp.NOTCH_Q}, fs)
    band = dsp.design_filter("bandpass", {"low": dsp.BANDPASS_LOW,
                                          "high": dsp.BANDPASS_HIGH}, fs)
    filtered = dsp.apply_filter(dsp.apply_filter(trimmed, notch,
                                                 prime_seconds=2.0),
                                band, prime_seconds=2.0)
    estimate = iaf.estimate_iaf(filtered)
    print(json.dumps(estimate.as_dict()))
    return 0


def _cmd_classify(args) -> int:
    rows = classify.read_features_csv(args.features)
    if args.classify_command == "train":
        ratios = tuple(int(r) for r in args.ratios.split(","))
        if len(ratios) != 3:
            raise NeuroloopError("--ratios must be three integers")
        ids = sorted({r.participant_id for r in rows})
        plan = classify.split_participants(ids, ratios=ratios, seed=args.seed)
        model = classify.train_lda(
            classify.rows_for_participants(rows, plan.train_ids),
            shrinkage=args.shrinkage)
        metrics = classify.evaluate(
            model, classify.rows_for_participants(rows, plan.test_ids))
        metrics["split"] = plan.as_dict()
        if args.model_out:
            classify.save_model(model, args.model_out)
        print(json.dumps(metrics, indent=2))
        return 0
    model = classify.load_model(args.model)
    metrics = classify.evaluate(model, rows)
    print(json.dumps(metrics, indent=2))
    return 0


def _cmd_bench(args) -> int:
    from .adapt import AdaptationEngine, BandPowerWindow, Policy

    fs = args.sample_rate
    config = SessionConfig(policy=Policy.POSITIVE,
                           montage=tuple(f"ch{i}" if i >= len(sim.DEFAULT_MONTAGE)
                                         else sim.DEFAULT_MONTAGE[i]
                                         for i in range(args.channels)),
                           window_seconds=args.window_seconds,
                           sample_rate=fs)
    rng = np.random.default_rng(0)
    win_n = int(round(args.window_seconds * fs))
    notch = dsp.design_filter("notch", {"center": 50.0, "q": 30.0}, fs)
    bandpass = dsp.design_filter("bandpass", {"low": 1.0, "high": 70.0}, fs)
    bands = config.resolved_bands()
    engine = AdaptationEngine(policy=Policy.POSITIVE)

    timings = []
    for i in range(args.repeats):
        window = dsp.EegChunk(i * args.window_seconds, fs, config.montage,
                              rng.standard_normal((args.channels, win_n)))
        start = time.perf_counter()
        filtered = dsp.apply_filter(dsp.apply_filter(window, notch), bandpass)
        psd = dsp.welch_psd(filtered)
        alpha = dsp.band_power(psd, bands.alpha, config.posterior)
        theta = dsp.band_power(psd, bands.theta, config.frontal)
        engine.step(BandPowerWindow(index=i, start_time=i * args.window_seconds,
                                    duration=args.window_seconds,
                                    alpha_power=alpha, theta_power=theta))
        timings.append(time.perf_counter() - start)

    mean = statistics.fmean(timings)
    worst = max(timings)
    print(f"window: {args.window_seconds:.0f} s x {args.channels} channels "
          f"@ {fs:.0f} Hz, {args.repeats} repeats")
    print(f"latency mean {mean * 1e3:.1f} ms  max {worst * 1e3:.1f} ms  "
          f"({args.window_seconds / mean:.0f}x real time)")
    return 0


def _cmd_report(args) -> int:
    paths = report.generate_report(args.session, args.out_dir,
                                   threshold=args.threshold)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
