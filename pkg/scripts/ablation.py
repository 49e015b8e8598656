"""Alpha and beta ablations of joint inference on one scenario.

    python3 scripts/ablation.py --scenario S1 --tau 2.5 --domain across --out out/ablation
"""

import argparse
import dataclasses
from pathlib import Path

from faceless.harness import ExperimentConfig, Workbench, emit_report, run_scenario

ALPHAS = (0.0, 0.1, 1.0, 10.0, 100.0, 1000.0)
BETAS = (0.0, 0.25, 0.5, 0.75, 0.9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="S1")
    ap.add_argument("--tau", type=float, default=2.5)
    ap.add_argument("--obfuscation", default="black")
    ap.add_argument("--domain", default="within")
    ap.add_argument("--mode", default="joint_tree")
    ap.add_argument("--out", default="out/ablation")
    args = ap.parse_args()

    base = ExperimentConfig(scenario=args.scenario, tau=args.tau, obfuscation=args.obfuscation,
                            domain=args.domain, mode=args.mode)
    bench = Workbench()
    unary = run_scenario(base.replace(mode="unary_only"), bench).accuracy
    print(f"unary_only accuracy {unary:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, values, field in (("alpha", ALPHAS, "inference"), ("beta", BETAS, "pruning")):
        results = []
        for v in values:
            cfg = base.replace(**{field: dataclasses.replace(getattr(base, field), **{name: v})})
            r = run_scenario(cfg, bench)
            results.append(r)
            print(f"{name}={v:<7g} accuracy={r.accuracy:.4f} edges={r.graph['after_negative_pruning']}")
        emit_report(results, out / f"{name}.csv", "csv")


if __name__ == "__main__":
    main()
