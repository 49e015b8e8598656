"""The seeded reference sweep and the directional checks run over it.

Visible-head reference for the obfuscated scenarios is S1 at the tag rate
that tags every split0 instance, which is the visible twin of S2/S3.
"""

from __future__ import annotations

import time
from collections import defaultdict

from ..corpus import GeneratorConfig
from .config import ExperimentConfig
from .pipeline import Workbench, run_scenario

TAUS = (1.25, 2.5, 5.0, 10.0)
OBFUSCATIONS = ("blur", "black", "white")
DOMAINS = ("within", "across")
SWEEP_MODES = ("unary_only", "joint_tree", "joint_oracle")
# Domain shift is an appearance effect; with ground-truth pairwise the
# within/across gap only reflects how many clique-mates each split keeps.
INFORMATIONAL = ("within_ge_across_oracle",)


def reference_base() -> ExperimentConfig:
    return ExperimentConfig(generator=GeneratorConfig(n_identities=100, instances_per_identity=20))


def reference_configs(base: ExperimentConfig | None = None, modes=SWEEP_MODES):
    base = base or reference_base()
    for domain in DOMAINS:
        for mode in modes:
            for tau in TAUS:
                yield base.replace(scenario="S1", tau=tau, domain=domain, mode=mode)
            for scenario in ("S2", "S3"):
                for obf in OBFUSCATIONS:
                    yield base.replace(scenario=scenario, obfuscation=obf, domain=domain, mode=mode)


def run_reference(base=None, modes=SWEEP_MODES, bench=None, progress=None):
    bench = bench or Workbench()
    results = []
    start = time.perf_counter()
    for cfg in reference_configs(base, modes):
        r = run_scenario(cfg, bench)
        results.append(r)
        if progress:
            progress(r)
    return results, time.perf_counter() - start


def _key(r):
    c = r.config
    obf = "visible" if c["scenario"] in ("S0", "S1") else c["obfuscation"]
    return c["scenario"], c["tau"] if c["scenario"] == "S1" else None, obf, c["domain"], c["mode"]


def directional_checks(results) -> dict:
    """name -> (passed, list of violations) for every directional property."""
    acc = {_key(r): r.accuracy for r in results}
    naive = {_key(r): r.naive_baseline_accuracy for r in results}
    modes = sorted({k[4] for k in acc})
    top_tau = max(TAUS)
    checks = defaultdict(list)

    def get(*k):
        return acc.get(k)

    for domain in DOMAINS:
        for mode in modes:
            seq = [get("S1", t, "visible", domain, mode) for t in TAUS]
            for t0, t1, a0, a1 in zip(TAUS, TAUS[1:], seq, seq[1:]):
                if a0 is not None and a1 is not None and a1 < a0:
                    checks["tau_monotone"].append(f"{domain}/{mode}: tau {t0}->{t1} {a0:.4f}->{a1:.4f}")
            for scenario in ("S2", "S3"):
                vis = get("S1", top_tau, "visible", domain, mode)
                blur, black, white = (get(scenario, None, o, domain, mode) for o in OBFUSCATIONS)
                if None in (vis, blur, black, white):
                    continue
                if not vis >= blur >= black:
                    checks["visible_blur_black"].append(
                        f"{scenario}/{domain}/{mode}: {vis:.4f} {blur:.4f} {black:.4f}")
                if abs(black - white) > 0.03:
                    checks["black_white_3pt"].append(f"{scenario}/{domain}/{mode}: {black:.4f} vs {white:.4f}")
            for obf in OBFUSCATIONS:
                s1 = get("S1", top_tau, "visible", domain, mode)
                s2, s3 = get("S2", None, obf, domain, mode), get("S3", None, obf, domain, mode)
                if None not in (s1, s2, s3) and not s1 >= s2 >= s3:
                    checks["s1_s2_s3"].append(f"{obf}/{domain}/{mode}: {s1:.4f} {s2:.4f} {s3:.4f}")
    for k, a in acc.items():
        if k[3] == "within":
            other = acc.get(k[:3] + ("across",) + k[4:])
            if other is not None and other > a:
                name = "within_ge_across_oracle" if k[4] == "joint_oracle" else "within_ge_across"
                checks[name].append(f"{k}: within {a:.4f} < across {other:.4f}")
        if k[4] == "unary_only":
            oracle = acc.get(k[:4] + ("joint_oracle",))
            if oracle is not None and oracle < a:
                checks["oracle_ge_unary"].append(f"{k}: oracle {oracle:.4f} < unary {a:.4f}")
            tree = acc.get(k[:4] + ("joint_tree",))
            if tree is not None and tree < a - 0.01:
                checks["joint_ge_unary_minus_1pt"].append(f"{k}: joint {tree:.4f} < unary {a:.4f} - 0.01")
            if k[0] == "S2":
                s3 = acc.get(("S3",) + k[1:])
                if s3 is not None and s3 != a:
                    checks["s2_s3_unary_identical"].append(f"{k}: S2 {a} != S3 {s3}")
        if k[2] == "visible" and k[3] == "within" and not a > 5 * naive[k]:
            checks["above_5x_naive"].append(f"{k}: {a:.4f} <= 5 x {naive[k]:.4f}")
    names = ("tau_monotone", "visible_blur_black", "black_white_3pt", "within_ge_across", "s2_s3_unary_identical",
             "oracle_ge_unary", "above_5x_naive", "s1_s2_s3", "joint_ge_unary_minus_1pt", "within_ge_across_oracle")
    return {n: (not checks[n], checks[n]) for n in names}
