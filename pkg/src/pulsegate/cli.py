"""Command-line entry point: ``pulsegate <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error.  The
effective configuration of every run is echoed as one JSON line on stderr
and embedded (without file paths) in every report, so reports are
byte-identical across runs with the same settings.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import IO, Sequence

from .core import Detection, GroupKey, Rule, bin_messages
from .corpus import BinAssembler, Game, group_series, load_corpus, prepare
from .detection import (DetectorConfig, StreamingDetector, StreamingTemperature,
                        TemperatureConfig, detect_offline, temperature_detect)
from .evaluation import (DetectorSpec, MatchPolicy, SweepGrid, auc, auto_thresholds, loocv,
                         roc_curve, runs_for, sweep)
from .grouping import Markers
from .ingest import KeywordFilter, RateCap, SourceError, parse_stream, replay
from .synth import ConfigError, CorpusConfig, generate_corpus, validate_calibration
from .templates import DEFAULT_GROUPS, TemplateError, TemplateSet

SUBCOMMANDS = ("generate", "templates", "detect", "stream", "sweep", "roc", "loocv", "calibrate", "serve")
RULE_CHOICES = tuple(r.value for r in Rule)
# keys that locate inputs/outputs; left out of reports so they stay path-independent
IO_KEYS = {"corpus", "out", "stream", "templates", "config", "keywords", "port", "bind", "log"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag values; explicit flags win")
    p.add_argument("--out", help="output path ('-' for stdout)")


def _detector_flags(p: argparse.ArgumentParser, multi_window: bool = False) -> None:
    p.add_argument("--rule", help="single[:group], max, mean, product, delay or temperature")
    p.add_argument("--groups", help="comma-separated groups for the fused rules")
    p.add_argument("--window", help="comma-separated window sizes (s)" if multi_window else "window size (s)")
    p.add_argument("--match-window", type=float, dest="match_window", help="detection-event matching window (s)")


def _input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--keywords", help="keyword file, or comma-separated keywords")
    p.add_argument("--cap", type=int, help="rate cap, messages per second")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pulsegate", description="Matched-filter event detection over message streams.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic labelled corpus")
    _common(p)
    p.add_argument("--games", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("templates", help="build event templates from a corpus")
    _common(p)
    _input_flags(p)
    _detector_flags(p)

    for name, text in (("detect", "batch detection"), ("stream", "replayed streaming detection")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _input_flags(p)
        _detector_flags(p)
        p.add_argument("--stream", help="NDJSON message source: path, '-' or tcp://host:port")
        p.add_argument("--templates", help="template JSON (default: fit on --corpus)")
        p.add_argument("--threshold", type=float)
        p.add_argument("--start-ms", type=int, dest="start_ms", help="first bin start (default: first message)")
        p.add_argument("--end-ms", type=int, dest="end_ms", help="end of the last bin (default: after last message)")
        if name == "stream":
            p.add_argument("--speed", type=float, help="replay speed factor (default: unpaced)")

    for name, text in (("sweep", "window/threshold sweep"), ("roc", "ROC curve"),
                       ("loocv", "leave-one-game-out evaluation")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _input_flags(p)
        _detector_flags(p, multi_window=name != "roc")
        p.add_argument("--thresholds", help="comma-separated thresholds (default: automatic grid)")

    p = sub.add_parser("calibrate", help="check generator calibration on a corpus")
    _common(p)
    _input_flags(p)

    p = sub.add_parser("serve", help="replay corpus games into the HTTP API")
    _common(p)
    _input_flags(p)
    _detector_flags(p)
    p.add_argument("--templates")
    p.add_argument("--threshold", type=float)
    p.add_argument("--speed", type=float)
    p.add_argument("--bind")
    p.add_argument("--port", type=int)
    p.add_argument("--log", help="append detections as NDJSON to this file")
    return parser


DEFAULTS = {
    "games": 18, "seed": 42, "rule": "mean", "groups": ",".join(g.value for g in DEFAULT_GROUPS),
    "window": "30", "match_window": 180.0, "threshold": 8.0, "cap": None, "speed": None,
    "bind": "127.0.0.1", "port": None, "thresholds": None,
}
SWEEP_WINDOWS = "20,30,45,60"


def effective_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """Defaults, then the --config file, then explicit flags."""
    cfg = {k: v for k, v in DEFAULTS.items() if k in parser_defaults}
    if args.command in ("sweep", "loocv"):
        cfg["window"] = SWEEP_WINDOWS
    if args.command == "roc" and args.rule == "temperature":
        cfg["window"] = "60"
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for k, v in loaded.items():
            k = k.replace("-", "_")
            if k not in parser_defaults and k != "synth":
                raise ConfigError(f"unknown config key for {args.command}: {k}")
            cfg[k] = v
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        cfg[k] = v
    cfg["command"] = args.command
    return cfg


def _report_config(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items()) if k not in IO_KEYS}


def _groups(cfg: dict) -> tuple[GroupKey, ...]:
    return tuple(GroupKey.parse(g.strip()) for g in str(cfg["groups"]).split(",") if g.strip())


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (int, float)):
        return (int(text),)
    if isinstance(text, list):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _floats(text) -> tuple[float, ...] | None:
    if text is None:
        return None
    if isinstance(text, list):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _keywords(cfg: dict) -> KeywordFilter | None:
    kw = cfg.get("keywords")
    if not kw:
        return None
    if Path(kw).is_file():
        return KeywordFilter.from_file(kw)
    return KeywordFilter([k.strip() for k in str(kw).split(",") if k.strip()])


def _cap(cfg: dict) -> RateCap | None:
    return RateCap(cfg["cap"]) if cfg.get("cap") is not None else None


def _spec(cfg: dict) -> DetectorSpec:
    return DetectorSpec.parse(cfg["rule"], _groups(cfg))


def _corpus(cfg: dict) -> list[Game]:
    if not cfg.get("corpus"):
        raise UsageError("--corpus is required")
    return load_corpus(cfg["corpus"], _keywords(cfg), _cap(cfg))


def _policy(cfg: dict) -> MatchPolicy:
    return MatchPolicy(float(cfg["match_window"]))


class _Output:
    """Context manager for --out: a file path, or stdout for '-'/missing."""

    def __init__(self, path: str | None):
        self.path = path

    def __enter__(self) -> IO[str]:
        if self.path in (None, "-"):
            self.fh = sys.stdout
        else:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(self.path, "w", encoding="utf-8", newline="\n")
        return self.fh

    def __exit__(self, *exc) -> None:
        if self.fh is not sys.stdout:
            self.fh.close()
        else:
            self.fh.flush()


def _clean(obj):
    """JSON-safe copy: NaN and infinities become null."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_report(cfg: dict, report: dict) -> None:
    body = _clean({"config": _report_config(cfg), **report})
    text = json.dumps(body, indent=1, sort_keys=True, allow_nan=False) + "\n"
    with _Output(cfg.get("out")) as fh:
        fh.write(text)


def _say(cfg: dict, text: str) -> None:
    """Human summary: stdout, unless stdout carries the machine output."""
    stream = sys.stderr if cfg.get("out") in (None, "-") else sys.stdout
    print(text, file=stream)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg: dict) -> int:
    if not cfg.get("out"):
        raise UsageError("--out is required")
    synth = CorpusConfig.from_json(cfg.get("synth", {}))
    m = generate_corpus(int(cfg["games"]), int(cfg["seed"]), cfg["out"], synth)
    print(f"wrote {m['n_games']} games, {m['total_events']} events, "
          f"{sum(g['n_messages'] for g in m['games'])} messages")
    return 0


def cmd_templates(cfg: dict) -> int:
    games = _corpus(cfg)
    spec = _spec(cfg)
    if spec.is_temperature:
        raise ConfigError("the temperature baseline has no templates")
    window = _ints(cfg["window"])[0]
    ts = spec.build_templates(games, window)
    text = json.dumps(ts.to_json(), indent=1, sort_keys=True) + "\n"
    with _Output(cfg.get("out")) as fh:
        fh.write(text)
    _say(cfg, f"templates W={window} for {', '.join(g.value for g in ts.groups)} from {len(games)} games")
    return 0


def _detector_setup(cfg: dict, games: list[Game] | None) -> tuple[DetectorSpec, DetectorConfig | TemperatureConfig, TemplateSet | None]:
    spec = _spec(cfg)
    window = _ints(cfg["window"])[0]
    if spec.is_temperature:
        tc = TemperatureConfig(spec.temperature.min_window_s, max(window, spec.temperature.min_window_s),
                               spec.temperature.pct_increase_threshold, float(cfg["threshold"]))
        return spec, tc, None
    dcfg = DetectorConfig(window, float(cfg["threshold"]), spec.refractory_s, spec.rule, spec.groups)
    if cfg.get("templates"):
        ts = TemplateSet.load(cfg["templates"])
    elif games:
        ts = spec.build_templates(games, window)
    else:
        raise UsageError("--templates or --corpus is required")
    missing = [g for g in dcfg.filter_groups if g not in ts.per_group]
    if missing:
        raise ConfigError(f"templates lack groups: {', '.join(g.value for g in missing)}")
    if ts.window_s != window:
        raise ConfigError(f"template window {ts.window_s} s does not match --window {window}")
    return spec, dcfg, ts


def _inputs(cfg: dict) -> list[tuple[str | None, list, int, int]]:
    """(game_id, messages, start_ms, end_ms) per input stream."""
    if cfg.get("stream"):
        msgs, skipped = parse_stream(cfg["stream"])
        if skipped:
            print(f"skipped {skipped} malformed lines", file=sys.stderr)
        msgs = prepare(msgs, _keywords(cfg), _cap(cfg))
        if not msgs and (cfg.get("start_ms") is None or cfg.get("end_ms") is None):
            return []
        start = cfg.get("start_ms")
        start = int(start) if start is not None else msgs[0].ts_ms - msgs[0].ts_ms % 1000
        end = cfg.get("end_ms")
        end = int(end) if end is not None else msgs[-1].ts_ms - msgs[-1].ts_ms % 1000 + 1000
        return [(None, msgs, start, end)]
    return [(g.game_id, g.messages, g.start_ms, g.end_ms) for g in _corpus(cfg)]


def _emit(fh: IO[str], game_id: str | None, d: Detection) -> None:
    obj = d.to_dict() if game_id is None else {"game_id": game_id, **d.to_dict()}
    fh.write(json.dumps(obj) + "\n")


def cmd_detect(cfg: dict, streaming: bool = False) -> int:
    games = _corpus(cfg) if cfg.get("corpus") and not cfg.get("templates") else None
    spec, dcfg, ts = _detector_setup(cfg, games)
    markers = Markers.load()
    n = 0
    with _Output(cfg.get("out")) as fh:
        for gid, msgs, start, end in _inputs(cfg):
            if streaming:
                dets = _run_stream(msgs, start, end, spec, dcfg, ts, markers, cfg.get("speed"),
                                   lambda d, gid=gid: _emit(fh, gid, d))
            else:
                if spec.is_temperature:
                    dets = temperature_detect(bin_messages(msgs, start, end), dcfg)
                else:
                    dets = detect_offline(group_series(msgs, start, end, markers), ts, dcfg)
                for d in dets:
                    _emit(fh, gid, d)
            n += len(dets)
    _say(cfg, f"{n} detections")
    return 0


def _run_stream(msgs, start, end, spec, dcfg, ts, markers, speed, on_detection) -> list[Detection]:
    if spec.is_temperature:
        det = StreamingTemperature(dcfg)
        groups = {GroupKey.ALL}
        step = lambda t, c: det.push(t, c[GroupKey.ALL])
    else:
        det = StreamingDetector(ts, dcfg)
        groups = set(dcfg.filter_groups)
        step = det.push
    asm = BinAssembler(start, groups, markers, end_ms=end)
    out: list[Detection] = []

    def feed(bins) -> None:
        for t, c in bins:
            d = step(t, c)
            if d is not None:
                out.append(d)
                on_detection(d)

    replay(msgs, float(speed) if speed else math.inf, lambda m: feed(asm.push(m)))
    feed(asm.flush(end))
    return out


def _grid(cfg: dict) -> SweepGrid:
    return SweepGrid(_ints(cfg["window"]), _floats(cfg.get("thresholds")))


def cmd_sweep(cfg: dict) -> int:
    games = _corpus(cfg)
    res = sweep(games, _grid(cfg), _spec(cfg), _policy(cfg))
    best = res.best()
    _write_report(cfg, {"rows": [asdict(r) for r in res.rows], "pareto": [asdict(r) for r in res.pareto],
                        "best": asdict(best) if best else None})
    if best:
        _say(cfg, f"best W={best.window_s} threshold={best.threshold:.4g} tpr={best.tpr:.3f} "
                  f"fpr={best.fpr:.3f} mean_delay={best.mean_delay:.1f}s")
    return 0


def cmd_roc(cfg: dict) -> int:
    games = _corpus(cfg)
    spec = _spec(cfg)
    window = _ints(cfg["window"])[0]
    runs = runs_for(games, spec.scorer(games, window))
    th = _floats(cfg.get("thresholds"))
    if th is None:
        th = auto_thresholds(runs, lo_quantile=0.0 if spec.is_temperature else 0.5)
    pts = roc_curve(runs, th, _policy(cfg), spec.refractory_s)
    area = auc(pts)
    _write_report(cfg, {"rule": spec.name, "window_s": window, "auc": area,
                        "points": [asdict(p) for p in pts]})
    _say(cfg, f"{spec.name} W={window}: AUC {area:.4f} over {len(pts)} thresholds")
    return 0


def cmd_loocv(cfg: dict) -> int:
    games = _corpus(cfg)
    res = loocv(games, _grid(cfg), _spec(cfg), _policy(cfg))
    _write_report(cfg, {"rule": _spec(cfg).name, **res.to_json()})
    r = res.report
    st = r.delay_stats()
    _say(cfg, f"LOOCV over {len(games)} games: tpr={r.tpr:.3f} fpr={r.fpr:.3f} "
              f"mean_delay={st.get('mean', float('nan')):.1f}s")
    return 0


def cmd_calibrate(cfg: dict) -> int:
    games = _corpus(cfg)
    res = validate_calibration(games)
    _write_report(cfg, res)
    for c in res["checks"]:
        _say(cfg, f"{c['name']:<32} {c['value']:8.3f}  {'ok' if c['passed'] else 'FAIL'}")
    return 0 if res["passed"] else 2


def cmd_serve(cfg: dict) -> int:
    from .service import GameRegistry, LivePipeline, make_server

    games = _corpus(cfg)
    spec, dcfg, ts = _detector_setup(cfg, games)
    if spec.is_temperature:
        raise ConfigError("serve runs matched-filter rules only")
    log = open(cfg["log"], "a", encoding="utf-8") if cfg.get("log") else None
    registry = GameRegistry(log)
    port = cfg.get("port")
    server = make_server(registry, cfg["bind"], int(port) if port is not None else None)
    speed = float(cfg["speed"]) if cfg.get("speed") else 1.0
    for g in games:
        LivePipeline.for_game(g, ts, dcfg, registry).start(speed)
    host, bound = server.server_address[:2]
    print(f"serving {len(games)} games on http://{host}:{bound}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        if log:
            log.close()
    return 0


HANDLERS = {
    "generate": cmd_generate, "templates": cmd_templates, "detect": cmd_detect,
    "stream": lambda c: cmd_detect(c, streaming=True), "sweep": cmd_sweep, "roc": cmd_roc,
    "loocv": cmd_loocv, "calibrate": cmd_calibrate, "serve": cmd_serve,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        flags = {a.dest for a in sub._actions if a.dest != "help"}
        cfg = effective_config(args, flags)
        print(json.dumps({"effective_config": cfg}, sort_keys=True), file=sys.stderr)
        return HANDLERS[args.command](cfg)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, TemplateError, SourceError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
