"""Write gnuplot-ready data for the accuracy and delay tradeoffs.

Outputs, one whitespace-separated file each, under --out:

* roc_<rule>.dat           threshold, tpr, fpr per rule (templates fitted on all games)
* delay_vs_window.dat      window, best-row tpr, fpr and mean delay per window
* loocv_delay_cdf.dat      sorted LOOCV delays with their empirical CDF
* response_<group>.dat     per-group mean event response (calibration curves)
* summary.json             AUCs, LOOCV totals and calibration checks

Usage: python3 scripts/reproduce_figures.py --out figures [--corpus DIR] [--seed 42]
"""
import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from pulsegate.core import GroupKey
from pulsegate.corpus import load_corpus
from pulsegate.evaluation import (DetectorSpec, SweepGrid, auc, auto_thresholds, loocv, roc_curve,
                                  runs_for, sweep)
from pulsegate.synth import generate_corpus, validate_calibration

RULES = [("mean", 30), ("max", 30), ("product", 30), ("delay", 30), ("single:all", 30), ("temperature", 60)]
SWEEP_WINDOWS = (20, 30, 45, 60, 90)
RESPONSE_S = 180


def write_table(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for r in rows:
            fh.write(" ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r) + "\n")


def mean_response(games, group: GroupKey) -> np.ndarray:
    segs = []
    for g in games:
        s = g.series[group]
        for e in g.truth:
            i = s.bin_index(e.ts_ms)
            if i + RESPONSE_S <= len(s):
                segs.append(s.counts[i:i + RESPONSE_S])
    return np.mean(segs, axis=0)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--corpus", help="existing corpus (default: generate 18 games)")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tmp = None
    corpus = args.corpus
    if corpus is None:
        tmp = tempfile.TemporaryDirectory()
        corpus = tmp.name
        generate_corpus(18, args.seed, corpus)
    games = load_corpus(corpus)
    summary = {"n_games": len(games), "n_events": sum(len(g.truth) for g in games), "auc": {}}

    for rule, window in RULES:
        t0 = time.perf_counter()
        spec = DetectorSpec.parse(rule)
        runs = runs_for(games, spec.scorer(games, window))
        pts = roc_curve(runs, auto_thresholds(runs, lo_quantile=0.0 if spec.is_temperature else 0.5),
                        refractory_s=spec.refractory_s)
        write_table(out / f"roc_{rule.replace(':', '_')}.dat", "threshold tpr fpr mean_delay_s",
                    [(p.threshold, p.tpr, p.fpr, p.mean_delay) for p in pts])
        summary["auc"][rule] = auc(pts)
        print(f"{rule:<12} W={window:<3} AUC {auc(pts):.4f}  ({time.perf_counter() - t0:.1f} s)", file=sys.stderr)

    rows = []
    for w in SWEEP_WINDOWS:
        best = sweep(games, SweepGrid((w,)), DetectorSpec.parse("mean")).best()
        rows.append((w, best.threshold, best.tpr, best.fpr, best.mean_delay))
    write_table(out / "delay_vs_window.dat", "window_s threshold tpr fpr mean_delay_s", rows)

    res = loocv(games, SweepGrid((20, 30, 45, 60)), DetectorSpec.parse("mean"))
    d = np.sort(np.asarray(res.report.delays_s))
    write_table(out / "loocv_delay_cdf.dat", "delay_s cdf",
                [(float(x), (i + 1) / len(d)) for i, x in enumerate(d)])
    summary["loocv"] = res.report.to_json(with_games=False)

    for g in (GroupKey.ALL, GroupKey.MOBILE, GroupKey.NON_MOBILE, GroupKey.ACTIVE, GroupKey.INACTIVE,
              GroupKey.SHORT, GroupKey.LONG):
        r = mean_response(games, g)
        write_table(out / f"response_{g.value}.dat", "seconds_after_event mean_count",
                    [(i, float(v)) for i, v in enumerate(r)])
    summary["calibration"] = validate_calibration(games)

    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True, default=float) + "\n")
    print(f"wrote {out}", file=sys.stderr)
    if tmp is not None:
        tmp.cleanup()
    return 0


if __name__ == "__main__":
    sys.exit(main())
