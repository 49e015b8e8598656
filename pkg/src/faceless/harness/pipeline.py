"""End-to-end scenario runs: corpus -> splits -> tags -> models -> graph -> per-query inference."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..corpus import (
    BlurParams,
    Corpus,
    GeneratorConfig,
    Obfuscation,
    TagSet,
    generate_corpus,
    load_corpus,
    make_splits,
    obfuscate_instance,
    plan_obfuscation,
    sample_tags,
)
from ..errors import EvaluationError, FacelessError, StageError
from ..graph import PruningConfig, build_graph, graph_stats, prune_negative_edges, structural_stats
from ..inference import (
    InferenceParams,
    make_problem,
    max_product,
    star_scores,
    _first_max,
)
from ..pairwise import (
    MatcherModel,
    PairDataset,
    eval_matcher,
    pair_regime,
    score_pairs,
    train_matcher,
    within_album_pairs,
)
from ..seeding import derive_seed
from ..unary import naive_baseline, predict_unary, train_unary
from .config import ExperimentConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    album_id: str
    true_identity: str
    predicted: str
    mode: str
    trace: dict | None = None

    def to_dict(self):
        d = {"query_id": self.query_id, "album_id": self.album_id, "true_identity": self.true_identity,
             "predicted": self.predicted, "mode": self.mode}
        if self.trace is not None:
            d["trace"] = self.trace
        return d


@dataclass
class ExperimentResult:
    config: dict
    records: list
    accuracy: float
    naive_baseline_accuracy: float
    eer_accuracy: float | None
    graph: dict
    timings: dict = field(default_factory=dict)

    @property
    def cfg(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)

    def to_dict(self, timings=True):
        d = {
            "config": self.config,
            "accuracy": self.accuracy,
            "naive_baseline_accuracy": self.naive_baseline_accuracy,
            "eer_accuracy": self.eer_accuracy,
            "graph": self.graph,
            "records": [r.to_dict() for r in self.records],
        }
        if timings:
            d["timings"] = self.timings
        return d

    def to_json(self, timings=False):
        return json.dumps(self.to_dict(timings=timings), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        records = [QueryRecord(**r) for r in d["records"]]
        return cls(d["config"], records, d["accuracy"], d["naive_baseline_accuracy"], d["eer_accuracy"],
                   d["graph"], d.get("timings", {}))


def _key(obj):
    return json.dumps(obj, sort_keys=True, default=str)


class Workbench:
    """Caches corpora, splits, tags and trained models across runs.

    Every cached artefact is a deterministic function of its key, so sharing a
    workbench between runs never changes their results.
    """

    def __init__(self):
        self._cache = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # -- data
    def corpus(self, cfg: ExperimentConfig) -> Corpus:
        if cfg.corpus_path is not None:
            return self._get(("corpus", cfg.corpus_path), lambda: load_corpus(cfg.corpus_path))
        return self._get(("corpus", _key(cfg.generator.to_dict()), cfg.seeds.corpus),
                         lambda: generate_corpus(cfg.generator, cfg.seeds.corpus))

    def corpus_key(self, cfg):
        if cfg.corpus_path is not None:
            return cfg.corpus_path
        return _key([cfg.generator.to_dict(), cfg.seeds.corpus])

    def pretrain_corpus(self, cfg: ExperimentConfig) -> Corpus | None:
        """Disjoint-identity corpus for matcher pretraining."""
        if cfg.pretrain_corpus_path is not None:
            return self._get(("corpus", cfg.pretrain_corpus_path), lambda: load_corpus(cfg.pretrain_corpus_path))
        if cfg.generator is None:
            return None
        seed = derive_seed(cfg.seeds.corpus, "pretrain-corpus")
        gen = dataclasses.replace(cfg.generator, n_identities=cfg.pretrain_identities)
        return self._get(("pretrain", _key(gen.to_dict()), seed), lambda: generate_corpus(gen, seed))

    def splits(self, cfg, corpus):
        return self._get(("splits", self.corpus_key(cfg), cfg.domain, cfg.seeds.splits),
                         lambda: make_splits(corpus, cfg.domain, cfg.seeds.splits))

    def tags(self, cfg, corpus, splits) -> TagSet:
        if cfg.scenario == "S0":
            key, build = "all", lambda: TagSet(frozenset(splits.split_of), float("nan"))
        elif cfg.scenario == "S1":
            key, build = cfg.tau, lambda: sample_tags(corpus, splits, cfg.tau, cfg.seeds.tags)
        else:
            key, build = "split0", lambda: TagSet(frozenset(splits.split0), float("nan"))
        return self._get(("tags", self.corpus_key(cfg), cfg.domain, cfg.seeds.splits, cfg.seeds.tags, key), build)

    def obfuscated(self, cfg, corpus, obf: Obfuscation):
        """Obfuscated copy of every instance (blur noise keyed by instance id)."""
        def build():
            params = BlurParams(mean=corpus.head_mean, sigma=cfg.blur_sigma)
            return {inst.instance_id: obfuscate_instance(inst, obf, params, cfg.seeds.corpus)
                    for inst in corpus.instances}
        return self._get(("obf", self.corpus_key(cfg), obf.kind.value, obf.strength, cfg.blur_sigma), build)

    # -- models
    def unary(self, cfg, corpus, tags, obf: Obfuscation, tag_key):
        def build():
            ids = sorted(tags.instance_ids)
            view = self.obfuscated(cfg, corpus, obf) if not obf.visible else None
            X = np.stack([(view[i] if view else corpus[i]).features for i in ids])
            y = [corpus[i].identity for i in ids]
            train_cfg = cfg.unary.__class__(**{**cfg.unary.__dict__,
                                               "seed": derive_seed(cfg.seeds.training, "unary", obf.kind.value)})
            return train_unary(X, y, train_cfg, trained_on=obf.kind.value)
        return self._get(("unary", tag_key, obf.kind.value, obf.strength, cfg.blur_sigma,
                          _key(cfg.unary.__dict__), cfg.seeds.training), build)

    @staticmethod
    def _pairs(instances_a, instances_b):
        i, j, y = within_album_pairs([inst.album_id for inst in instances_a],
                                     [inst.identity for inst in instances_a])
        A = np.stack([inst.features for inst in instances_a])
        B = np.stack([inst.features for inst in instances_b])
        return PairDataset(A, B, i, j, y)

    def _regime_views(self, cfg, corpus, instances, obf, regime):
        """(left, right) instance views of ``instances`` for a pair regime."""
        if regime == "visible-pair":
            return instances, instances
        view = self.obfuscated(cfg, corpus, obf)
        obf_list = [view[i.instance_id] for i in instances]
        if regime == "obfuscated-pair":
            return obf_list, obf_list
        return obf_list, instances

    def pretrained_matcher(self, cfg, obf: Obfuscation, regime):
        def build():
            pre = self.pretrain_corpus(cfg)
            if pre is None:
                return None
            left, right = self._regime_views_for(cfg, pre, obf, regime)
            pairs = self._pairs(left, right)
            mc = cfg.matcher.__class__(**{**cfg.matcher.__dict__,
                                          "seed": derive_seed(cfg.seeds.training, "pretrain", regime)})
            return train_matcher(pairs, mc, regime=regime)
        return self._get(("pretrain-matcher", self.corpus_key(cfg), cfg.pretrain_corpus_path,
                          cfg.pretrain_identities, obf.kind.value,
                          obf.strength, cfg.blur_sigma, regime, _key(cfg.matcher.__dict__), cfg.seeds.training),
                         build)

    def _regime_views_for(self, cfg, corpus, obf, regime):
        instances = list(corpus.instances)
        if regime == "visible-pair":
            return instances, instances
        params = BlurParams(mean=corpus.head_mean, sigma=cfg.blur_sigma)
        obf_list = [obfuscate_instance(i, obf, params, cfg.seeds.corpus) for i in instances]
        if regime == "obfuscated-pair":
            return obf_list, obf_list
        return obf_list, instances

    def matcher(self, cfg, corpus, tags, obf: Obfuscation, regime, tag_key, finetune=True):
        """Pretrained on disjoint identities, then fine-tuned on tagged split0 pairs."""
        def build():
            base = self.pretrained_matcher(cfg, obf, regime)
            if not finetune:
                return base
            tagged = [corpus[i] for i in sorted(tags.instance_ids)]
            left, right = self._regime_views(cfg, corpus, tagged, obf, regime)
            pairs = self._pairs(left, right)
            if len(pairs) == 0 or pairs.labels.min() == pairs.labels.max():
                return base
            mc = cfg.matcher.__class__(**{**cfg.matcher.__dict__,
                                          "seed": derive_seed(cfg.seeds.training, "finetune", regime)})
            if base is None:
                return train_matcher(pairs, mc, steps=mc.pretrain_steps + mc.finetune_steps, regime=regime)
            return train_matcher(pairs, mc, init=base, regime=regime)
        return self._get(("matcher", tag_key, obf.kind.value, obf.strength, cfg.blur_sigma, regime, finetune,
                          cfg.pretrain_corpus_path, cfg.pretrain_identities, _key(cfg.matcher.__dict__), cfg.seeds.training), build)


@contextmanager
def _stage(name, timings):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (FacelessError, ValueError, KeyError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


class _Views:
    """Per-node presentation: obfuscated or visible view, unary input, matcher regime."""

    def __init__(self, cfg, bench, corpus, tags, plan, obf, tag_key):
        self.cfg, self.bench, self.corpus, self.tags = cfg, bench, corpus, tags
        self.plan, self.obf, self.tag_key = plan, obf, tag_key
        self.obf_view = bench.obfuscated(cfg, corpus, obf) if not obf.visible else None
        self.tags_obfuscated = any(not plan.of(i).visible for i in tags.instance_ids)
        self._matchers = {}

    def view(self, iid, obfuscated=None):
        obfuscated = (not self.plan.of(iid).visible) if obfuscated is None else obfuscated
        return self.obf_view[iid] if obfuscated else self.corpus[iid]

    def unary_model(self, obfuscated_node):
        # an obfuscated side anywhere means the obfuscation-adapted model is used
        if obfuscated_node or self.tags_obfuscated:
            return self.bench.unary(self.cfg, self.corpus, self.tags, self.obf, self.tag_key)
        return self.bench.unary(self.cfg, self.corpus, self.tags, Obfuscation(), self.tag_key)

    def unary_rows(self, ids, obfuscated=None):
        """Unary distributions; adapted nodes are scored on their obfuscated view."""
        groups = defaultdict(list)
        for k, iid in enumerate(ids):
            obf = (not self.plan.of(iid).visible) if obfuscated is None else obfuscated
            groups[bool(obf or self.tags_obfuscated) and not self.obf.visible].append(k)
        out = None
        for adapted, ks in sorted(groups.items()):
            X = np.stack([self.view(ids[k], adapted).features for k in ks])
            P = predict_unary(self.unary_model(adapted), X)
            if out is None:
                out = np.zeros((len(ids), P.shape[1]))
            out[ks] = P
        return out

    def matcher_for(self, regime):
        if regime not in self._matchers:
            if self.cfg.mode == "joint_oracle":
                self._matchers[regime] = MatcherModel("oracle", regime=regime)
            else:
                finetune = regime == "obfuscated-pair" or not self.tags_obfuscated
                self._matchers[regime] = self.bench.matcher(self.cfg, self.corpus, self.tags, self.obf, regime,
                                                            self.tag_key, finetune=finetune)
        return self._matchers[regime]

    def score(self, left, right):
        """Pair scorer routing each pair to the model for its obfuscation regime."""
        out = np.zeros(len(left))
        groups = defaultdict(list)
        for k, (a, b) in enumerate(zip(left, right)):
            groups[pair_regime(not a.obfuscation.visible, not b.obfuscation.visible)].append(k)
        for regime, ks in groups.items():
            model = self.matcher_for(regime)
            out[ks] = score_pairs(model, [left[k] for k in ks], [right[k] for k in ks])
        return out


def run_scenario(config: ExperimentConfig, bench: Workbench | None = None) -> ExperimentResult:
    bench = bench or Workbench()
    cfg = config
    timings = {}
    obf = cfg.head_obfuscation
    with _stage("corpus", timings):
        corpus = bench.corpus(cfg)
    with _stage("splits", timings):
        splits = bench.splits(cfg, corpus)
    with _stage("tags", timings):
        tags = bench.tags(cfg, corpus, splits)
        tag_key = (bench.corpus_key(cfg), cfg.domain, cfg.seeds.splits, cfg.seeds.tags,
                   "all" if cfg.scenario == "S0" else (cfg.tau if cfg.scenario == "S1" else "split0"))
        labels = tuple(sorted({corpus[i].identity for i in tags.instance_ids}))
        label_index = {lab: k for k, lab in enumerate(labels)}
    with _stage("obfuscation", timings):
        per_query = cfg.scenario == "S2"
        base_scenario = "S1" if per_query else cfg.scenario
        plan = plan_obfuscation(base_scenario, splits, tags, obfuscation=obf)
        views = _Views(cfg, bench, corpus, tags, plan, obf, tag_key)

    queries = [iid for iid in splits.split_of if splits.split_of[iid] == 1]
    node_ids = sorted(set(queries) | set(tags.instance_ids), key=corpus.index.get)
    joint = cfg.mode != "unary_only"

    with _stage("unary", timings):
        free_ids = [i for i in node_ids if i not in tags.instance_ids]
        unary = {}
        if free_ids:
            rows = views.unary_rows(free_ids)
            unary.update(zip(free_ids, rows))
        q_obf_rows = {}
        if per_query:
            obf_rows = views.unary_rows(queries, obfuscated=True)
            q_obf_rows = dict(zip(queries, obf_rows))

    with _stage("pairwise", timings):
        nodes = [views.view(i) for i in node_ids]
        if joint:
            full = build_graph(nodes, views.score, PruningConfig(cfg.pruning.album_pruning, 0.0))
            graph = prune_negative_edges(full, cfg.effective_beta)
            stats = graph_stats(graph)
        else:
            full = None
            stats = structural_stats([n.album_id for n in nodes])
            stats["after_negative_pruning"] = None

    with _stage("inference", timings):
        records, eer_scores, eer_labels = _infer_all(cfg, corpus, tags, views, node_ids, queries, unary,
                                                     q_obf_rows, full, label_index, labels, per_query)

    with _stage("evaluate", timings):
        correct = sum(r.predicted == r.true_identity for r in records)
        accuracy = correct / len(records)
        naive = naive_baseline([corpus[i].identity for i in sorted(tags.instance_ids)],
                               [corpus[q].identity for q in queries])
        eer_acc = None
        if joint and cfg.mode != "joint_oracle" and eer_labels and 0 < sum(eer_labels) < len(eer_labels):
            eer_acc = eval_matcher(eer_scores, eer_labels).eer_accuracy
    return ExperimentResult(cfg.to_dict(), records, accuracy, naive, eer_acc, stats, timings)


def _infer_all(cfg, corpus, tags, views, node_ids, queries, unary, q_obf_rows, full, label_index, labels,
               per_query):
    params = cfg.inference
    beta = cfg.effective_beta
    pos = {iid: k for k, iid in enumerate(node_ids)}
    units = full.units() if full is not None else None
    unit_of = {}
    if units is not None:
        for name, members in units.items():
            for k in members:
                unit_of[k] = name
    n_labels = len(labels)
    tagged = tags.instance_ids

    def row(iid):
        if iid in tagged:
            r = np.zeros(n_labels)
            r[label_index[corpus[iid].identity]] = 1.0
            return r
        return unary[iid]

    # dense pre-pruning weights per unit
    dense = {}
    if full is not None:
        for name, members in units.items():
            local = {g: k for k, g in enumerate(members)}
            W = np.full((len(members), len(members)), -1.0)
            dense[name] = (members, local, W)
        for (a, b), w in zip(full.edges, full.weights):
            name = unit_of[a]
            members, local, W = dense[name]
            W[local[a], local[b]] = W[local[b], local[a]] = w

    def problem(name, override=None):
        members, local, W = dense[name]
        ids = [node_ids[g] for g in members]
        U = np.stack([row(i) for i in ids])
        W = W.copy()
        if override is not None:
            q, urow, wrow = override
            U[q] = urow
            mask = W[q] >= 0
            W[q, mask] = wrow[mask]
            W[mask, q] = wrow[mask]
        a, b = np.triu_indices(len(ids), k=1)
        keep = (W[a, b] >= 0) & (W[a, b] >= beta)
        clamp = [label_index[corpus[i].identity] if i in tagged else -1 for i in ids]
        return make_problem(U, np.column_stack([a[keep], b[keep]]), W[a, b][keep], clamp), ids

    records, eer_scores, eer_labels = [], [], []

    def record(q, label, trace=None):
        inst = corpus[q]
        records.append(QueryRecord(q, inst.album_id, inst.identity, labels[label], cfg.mode,
                                   trace if cfg.trace else None))

    if cfg.mode == "unary_only":
        for q in queries:
            if q in tagged:
                record(q, label_index[corpus[q].identity])
                continue
            r = q_obf_rows[q] if per_query else unary[q]
            record(q, _first_max(r))
        return records, eer_scores, eer_labels

    tree = cfg.mode in ("joint_tree", "joint_oracle")
    query_set = set(queries)
    if not per_query:
        for name, (members, local, W) in dense.items():
            prob, ids = problem(name)
            n_edges = prob.n_edges
            a, b = np.triu_indices(len(ids), k=1)
            present = W[a, b] >= 0
            eer_scores.extend(W[a, b][present].tolist())
            eer_labels.extend(int(corpus[ids[x]].identity == corpus[ids[y]].identity)
                              for x, y in zip(a[present], b[present]))
            lab = None if tree else max_product(prob, params)
            for k, iid in enumerate(ids):
                if iid not in query_set:
                    continue
                if tree:
                    s = star_scores(k, prob, params.alpha)
                    y = int(prob.clamped[k]) if prob.clamped[k] >= 0 else _first_max(s)
                    trace = {"clique": name, "mode": cfg.mode, "iterations": 0, "converged": True,
                             "objective_value": float(s.max()), "predicted": labels[y], "edges": n_edges}
                else:
                    y = lab.labels[k]
                    trace = {"clique": name, "mode": cfg.mode, "iterations": lab.iterations,
                             "converged": lab.converged, "objective_value": lab.objective_value,
                             "predicted": labels[y], "edges": n_edges}
                record(iid, y, trace)
        order = {q: k for k, q in enumerate(queries)}
        records.sort(key=lambda r: order[r.query_id])
        return records, eer_scores, eer_labels

    # S2: one obfuscated query at a time; its unary row and incident edges change.
    for q in queries:
        name = unit_of[pos[q]]
        members, local, W = dense[name]
        ids = [node_ids[g] for g in members]
        kq = local[pos[q]]
        others = [k for k in range(len(ids)) if k != kq]
        wrow = np.full(len(ids), -1.0)
        if others:
            qv = views.view(q, obfuscated=True)
            ov = [views.view(ids[k]) for k in others]
            wrow[others] = views.score([qv] * len(ov), ov)
            present = W[kq][others] >= 0
            eer_scores.extend(wrow[others][present].tolist())
            eer_labels.extend(int(corpus[ids[k]].identity == corpus[q].identity)
                              for k, p in zip(others, present) if p)
        prob, _ = problem(name, (kq, q_obf_rows[q], wrow))
        if tree:
            s = star_scores(kq, prob, params.alpha)
            y = _first_max(s)
            trace = {"clique": name, "mode": cfg.mode, "iterations": 0, "converged": True,
                     "objective_value": float(s.max()), "predicted": labels[y], "edges": prob.n_edges}
        else:
            lab = max_product(prob, params)
            y = lab.labels[kq]
            trace = {"clique": name, "mode": cfg.mode, "iterations": lab.iterations, "converged": lab.converged,
                     "objective_value": lab.objective_value, "predicted": labels[y], "edges": prob.n_edges}
        record(q, y, trace)
    return records, eer_scores, eer_labels


def evaluate(result: ExperimentResult) -> dict:
    """Accuracy, multiple of the naive baseline, and per-album accuracy."""
    if not result.records:
        raise EvaluationError("no per-query records to evaluate")
    correct = sum(r.predicted == r.true_identity for r in result.records)
    accuracy = correct / len(result.records)
    per_album = defaultdict(lambda: [0, 0])
    for r in result.records:
        per_album[r.album_id][0] += r.predicted == r.true_identity
        per_album[r.album_id][1] += 1
    naive = result.naive_baseline_accuracy
    return {
        "accuracy": accuracy,
        "naive_baseline_accuracy": naive,
        "chance_multiple": accuracy / naive if naive > 0 else float("inf"),
        "per_album": {a: c / n for a, (c, n) in sorted(per_album.items())},
        "n_queries": len(result.records),
    }
