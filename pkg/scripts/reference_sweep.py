"""Seeded reference sweep: tau x obfuscation x domain x mode on the default corpus.

Writes results.csv, results.json and plot-data files, then prints the
directional checks.

    python3 scripts/reference_sweep.py --out out/reference
"""

import argparse
from pathlib import Path

from faceless.harness import emit_report
from faceless.harness.reference import SWEEP_MODES, directional_checks, run_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/reference")
    ap.add_argument("--modes", default=",".join(SWEEP_MODES))
    args = ap.parse_args()

    def show(r):
        c = r.config
        tag = f"tau={c['tau']:g}" if c["scenario"] == "S1" else c["obfuscation"]
        print(f"{c['scenario']:4s} {tag:9s} {c['domain']:6s} {c['mode']:16s} acc={r.accuracy:.4f} "
              f"naive={r.naive_baseline_accuracy:.4f}", flush=True)

    results, secs = run_reference(modes=tuple(args.modes.split(",")), progress=show)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(results, out / "results.csv", "csv")
    emit_report(results, out / "results.json", "json")
    tau_runs = [r for r in results if r.config["scenario"] == "S1"]
    emit_report(tau_runs, out / "tau_sweep.csv", "csv")
    print(f"\n{len(results)} runs in {secs:.0f}s -> {out}")
    for name, (ok, bad) in directional_checks(results).items():
        print(f"{'ok  ' if ok else 'FAIL'} {name}" + ("" if ok else ": " + "; ".join(bad)))


if __name__ == "__main__":
    main()
