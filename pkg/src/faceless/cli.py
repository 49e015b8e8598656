"""Command line entry point: ``faceless <subcommand> [flags]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .corpus import (
    BlurParams,
    DomainMode,
    GeneratorConfig,
    Obfuscation,
    SplitAssignment,
    generate_corpus,
    load_corpus,
    make_splits,
    obfuscate_instance,
    sample_tags,
    save_corpus,
)
from .errors import ConfigError, DataError, FacelessError
from .harness import ExperimentConfig, Seeds, Workbench, emit_report, evaluate, load_results, run_scenario
from .pairwise import PairDataset, eval_matcher, pair_regime, score_pairs, train_matcher, within_album_pairs, \
    write_pair_scores
from .unary import predict_unary, train_unary

log = logging.getLogger("faceless")


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def build_config(args) -> ExperimentConfig:
    """Config file (or defaults) with command-line overrides applied."""
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    for name in ("scenario", "tau", "obfuscation", "domain", "mode"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "corpus", None):
        changes["corpus_path"] = args.corpus
        changes["generator"] = None
    if getattr(args, "alpha", None) is not None:
        changes["inference"] = dataclasses.replace(cfg.inference, alpha=args.alpha)
    if getattr(args, "beta", None) is not None:
        changes["pruning"] = dataclasses.replace(cfg.pruning, beta=args.beta)
    if getattr(args, "seed", None) is not None:
        s = args.seed
        changes["seeds"] = Seeds(corpus=s, splits=s, tags=s, training=s)
    if getattr(args, "trace", False):
        changes["trace"] = True
    try:
        return cfg.replace(**changes) if changes else cfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _load_splits(path):
    try:
        return SplitAssignment.from_dict(json.loads(Path(path).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read splits {path}: {exc}") from None


def _corpus_for(args, cfg):
    if args.corpus:
        return load_corpus(args.corpus)
    return generate_corpus(cfg.generator, cfg.seeds.corpus)


def cmd_generate(args):
    cfg = build_config(args)
    gen = cfg.generator or GeneratorConfig()
    if args.identities is not None or args.instances is not None:
        gen = dataclasses.replace(gen, n_identities=args.identities or gen.n_identities,
                                  instances_per_identity=args.instances or gen.instances_per_identity)
    corpus = generate_corpus(gen, cfg.seeds.corpus)
    out = Path(args.out) / "corpus.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    print(f"wrote {len(corpus)} instances to {out}")


def cmd_split(args):
    cfg = build_config(args)
    corpus = _corpus_for(args, cfg)
    splits = make_splits(corpus, cfg.domain, cfg.seeds.splits)
    out = Path(args.out) / "splits.json"
    _write_json(out, splits.to_dict())
    print(f"split0={len(splits.split0)} split1={len(splits.split1)} -> {out}")


def _splits_for(args, cfg, corpus):
    if args.splits:
        return _load_splits(args.splits)
    return make_splits(corpus, cfg.domain, cfg.seeds.splits)


def _obf_views(cfg, corpus, instances):
    obf = Obfuscation.parse(cfg.obfuscation, cfg.blur_strength)
    params = BlurParams(mean=corpus.head_mean, sigma=cfg.blur_sigma)
    return obf, [obfuscate_instance(i, obf, params, cfg.seeds.corpus) for i in instances]


def cmd_train_unary(args):
    cfg = build_config(args)
    corpus = _corpus_for(args, cfg)
    splits = _splits_for(args, cfg, corpus)
    tags = sample_tags(corpus, splits, cfg.tau, cfg.seeds.tags)
    ids = sorted(tags.instance_ids, key=corpus.index.get)
    train = [corpus[i] for i in ids]
    queries = [corpus[i] for i in splits.split1]
    obf_name = "visible"
    if args.obfuscated:
        obf, train = _obf_views(cfg, corpus, train)
        _, queries = _obf_views(cfg, corpus, queries)
        obf_name = obf.kind.value
    model = train_unary(np.stack([i.features for i in train]), [i.identity for i in train],
                        dataclasses.replace(cfg.unary, seed=cfg.seeds.training), trained_on=obf_name)
    out = Path(args.out) / "unary.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    P = predict_unary(model, np.stack([q.features for q in queries]))
    pred = [model.labels[k] for k in P.argmax(axis=1)]
    acc = float(np.mean([p == q.identity for p, q in zip(pred, queries)]))
    print(f"trained on {len(train)} tags ({obf_name}); split1 accuracy {acc:.4f} -> {out}")


def _pair_dataset(left, right):
    i, j, y = within_album_pairs([x.album_id for x in left], [x.identity for x in left])
    return PairDataset(np.stack([x.features for x in left]), np.stack([x.features for x in right]), i, j, y)


def cmd_train_matcher(args):
    cfg = build_config(args)
    corpus = _corpus_for(args, cfg)
    splits = _splits_for(args, cfg, corpus)
    regime = pair_regime(args.obfuscated, args.obfuscated)
    views = {}
    for side, ids in (("train", splits.split0), ("test", splits.split1)):
        insts = [corpus[i] for i in ids]
        views[side] = (_obf_views(cfg, corpus, insts)[1] if args.obfuscated else insts)
    pairs = _pair_dataset(views["train"], views["train"])
    mc = dataclasses.replace(cfg.matcher, seed=cfg.seeds.training)
    model = train_matcher(pairs, mc, steps=mc.pretrain_steps + mc.finetune_steps, regime=regime)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "matcher.json")
    test = views["test"]
    i, j, y = within_album_pairs([x.album_id for x in test], [x.identity for x in test])
    scores = score_pairs(model, [test[k] for k in i], [test[k] for k in j])
    write_pair_scores(out / "pair_scores.csv",
                      [(test[a].instance_id, test[b].instance_id, s, lab) for a, b, s, lab in zip(i, j, scores, y)])
    roc = eval_matcher(scores, y)
    print(f"{regime} matcher: {len(pairs)} training pairs; held-out eer_accuracy {roc.eer_accuracy:.4f}")


def cmd_run(args):
    cfg = build_config(args)
    result = run_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.to_json(timings=False) + "\n")
    _write_json(out / "timings.json", result.timings)
    metrics = evaluate(result)
    print(f"{cfg.scenario} {cfg.domain} {cfg.mode}: accuracy {metrics['accuracy']:.4f} "
          f"(naive {metrics['naive_baseline_accuracy']:.4f}, x{metrics['chance_multiple']:.1f})")


def sweep_configs(base: ExperimentConfig, args):
    grids = {
        "scenario": args.scenarios or [base.scenario],
        "tau": args.taus or [base.tau],
        "obfuscation": args.obfuscations or [base.obfuscation],
        "domain": args.domains or [base.domain],
        "mode": args.modes or [base.mode],
        "alpha": args.alphas or [base.inference.alpha],
        "beta": args.betas or [base.pruning.beta],
    }
    seen = set()
    for combo in itertools.product(*grids.values()):
        p = dict(zip(grids, combo))
        if p["scenario"] in ("S0", "S1"):
            p["obfuscation"] = base.obfuscation if base.obfuscation != "visible" else "black"
        if p["scenario"] != "S1":
            p["tau"] = base.tau
        cfg = base.replace(scenario=p["scenario"], tau=p["tau"], obfuscation=p["obfuscation"],
                           domain=p["domain"], mode=p["mode"],
                           inference=dataclasses.replace(base.inference, alpha=p["alpha"]),
                           pruning=dataclasses.replace(base.pruning, beta=p["beta"]))
        key = json.dumps(cfg.to_dict(), sort_keys=True)
        if key not in seen:
            seen.add(key)
            yield cfg


def cmd_sweep(args):
    base = build_config(args)
    bench = Workbench()
    results = []
    for cfg in sweep_configs(base, args):
        r = run_scenario(cfg, bench)
        results.append(r)
        print(f"{cfg.scenario:5s} tau={cfg.tau:<5g} {cfg.obfuscation:7s} {cfg.domain:6s} {cfg.mode:16s} "
              f"alpha={cfg.inference.alpha:<6g} beta={cfg.pruning.beta:<4g} acc={r.accuracy:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(results, out / "results.json", "json")
    emit_report(results, out / "results.csv", "csv")
    print(f"{len(results)} runs -> {out}")


def cmd_report(args):
    results = []
    for path in args.results:
        try:
            results.extend(load_results(path))
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read results {path}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"report.{args.format}"
    emit_report(results, path, args.format)
    print(f"{len(results)} results -> {path}")


def make_parser():
    p = argparse.ArgumentParser(prog="faceless", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--config", help="JSON file mirroring ExperimentConfig")
        sp.add_argument("--seed", type=int, help="sets every seed (corpus, splits, tags, training)")
        sp.add_argument("--scenario")
        sp.add_argument("--tau", type=float)
        sp.add_argument("--obfuscation", choices=("visible", "blur", "black", "white"))
        sp.add_argument("--domain", choices=[m.value for m in DomainMode])
        sp.add_argument("--mode")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--corpus", help="corpus JSONL instead of the generator")
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("generate", help="write a synthetic corpus")
    common(sp)
    sp.add_argument("--identities", type=int)
    sp.add_argument("--instances", type=int, help="instances per identity")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("split", help="assign instances to split0/split1")
    common(sp)
    sp.set_defaults(func=cmd_split)

    for name, func, what in (("train-unary", cmd_train_unary, "unary identity classifier"),
                             ("train-matcher", cmd_train_matcher, "pair matcher")):
        sp = sub.add_parser(name, help=f"train the {what}")
        common(sp)
        sp.add_argument("--splits", help="splits.json from the split command")
        sp.add_argument("--obfuscated", action="store_true", help="train on obfuscated heads")
        sp.set_defaults(func=func)

    sp = sub.add_parser("run", help="run one scenario end to end")
    common(sp)
    sp.add_argument("--trace", action="store_true", help="attach per-query inference traces")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a grid of scenarios")
    common(sp)
    sp.add_argument("--scenarios", type=_csv_list(str))
    sp.add_argument("--taus", type=_csv_list(float))
    sp.add_argument("--obfuscations", type=_csv_list(str))
    sp.add_argument("--domains", type=_csv_list(str))
    sp.add_argument("--modes", type=_csv_list(str))
    sp.add_argument("--alphas", type=_csv_list(float))
    sp.add_argument("--betas", type=_csv_list(float))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="tabulate saved results")
    sp.add_argument("results", nargs="+", help="result.json / results.json files")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out", default="out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except FacelessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
