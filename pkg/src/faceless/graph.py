"""Recognition graph over query instances, with album and negative-edge pruning."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import Instance
from .errors import ConfigError
from .pairwise import MatcherModel, score_pairs

MATERIALIZE_LIMIT = 5000


@dataclass(frozen=True)
class PruningConfig:
    album_pruning: bool = True
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")


def full_edge_count(n: int) -> int:
    """Edges of the complete graph on n nodes, in exact integer arithmetic."""
    n = int(n)
    return n * (n - 1) // 2


@dataclass(frozen=True, eq=False)
class RecognitionGraph:
    node_ids: tuple
    albums: tuple
    edges: np.ndarray  # (m, 2) node indices, i < j
    weights: np.ndarray  # (m,)
    pruning_log: dict = field(default_factory=dict)
    album_pruning: bool = True

    @property
    def n_nodes(self):
        return len(self.node_ids)

    @property
    def n_edges(self):
        return len(self.weights)

    def units(self):
        """Inference units: album groups, or the whole graph without album pruning."""
        if not self.album_pruning:
            return {"*": list(range(self.n_nodes))}
        groups = defaultdict(list)
        for k, album in enumerate(self.albums):
            groups[album].append(k)
        return dict(groups)


def _scorer(matcher):
    if isinstance(matcher, MatcherModel):
        return lambda left, right: score_pairs(matcher, left, right)
    if callable(matcher):
        return matcher
    raise ConfigError("matcher must be a MatcherModel or a callable(left, right) -> scores")


def _pairs_within(groups):
    out_i, out_j = [], []
    for members in groups:
        if len(members) < 2:
            continue
        members = np.asarray(members)
        a, b = np.triu_indices(len(members), k=1)
        out_i.append(members[a])
        out_j.append(members[b])
    if not out_i:
        return np.zeros((0, 2), dtype=int)
    return np.column_stack([np.concatenate(out_i), np.concatenate(out_j)])


def build_graph(nodes: Sequence[Instance], matcher: MatcherModel | Callable,
                pruning: PruningConfig = PruningConfig(), materialize_limit: int = MATERIALIZE_LIMIT) -> RecognitionGraph:
    """Score candidate edges and apply both pruning stages.

    With album pruning only same-album pairs are ever scored; the full-graph
    count is arithmetic. Without it every pair is materialised, which is refused
    above ``materialize_limit`` nodes.
    """
    if len(nodes) < 1:
        raise ConfigError("graph needs at least one node")
    node_ids = tuple(inst.instance_id for inst in nodes)
    albums = tuple(inst.album_id for inst in nodes)
    if pruning.album_pruning:
        groups = defaultdict(list)
        for k, album in enumerate(albums):
            groups[album].append(k)
        edges = _pairs_within(groups[a] for a in sorted(groups))
    else:
        if len(nodes) >= materialize_limit:
            raise ConfigError(f"refusing to materialise the full graph on {len(nodes)} nodes "
                              f"(limit {materialize_limit})")
        edges = _pairs_within([list(range(len(nodes)))])
    score = _scorer(matcher)
    weights = np.asarray(score([nodes[i] for i in edges[:, 0]], [nodes[j] for j in edges[:, 1]]),
                         dtype=float).reshape(-1)
    if len(weights) and (weights.min() < 0 or weights.max() > 1):
        raise ConfigError("matcher produced weights outside [0, 1]")
    log = {
        "full_edge_count": full_edge_count(len(nodes)),
        "after_album_pruning": int(len(edges)),
        "after_negative_pruning": int(len(edges)),
    }
    graph = RecognitionGraph(node_ids, albums, edges, weights, log, pruning.album_pruning)
    return prune_negative_edges(graph, pruning.beta)


def prune_negative_edges(graph: RecognitionGraph, beta: float) -> RecognitionGraph:
    """Keep edges with weight >= beta (inclusive)."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    keep = graph.weights >= beta
    log = dict(graph.pruning_log)
    log["after_negative_pruning"] = int(keep.sum())
    return replace(graph, edges=graph.edges[keep], weights=graph.weights[keep], pruning_log=log)


def graph_stats(graph: RecognitionGraph) -> dict:
    sizes = [len(m) for m in graph.units().values()]
    return {
        "nodes": graph.n_nodes,
        "albums": len(set(graph.albums)),
        "full_edge_count": graph.pruning_log.get("full_edge_count", full_edge_count(graph.n_nodes)),
        "after_album_pruning": graph.pruning_log.get("after_album_pruning", graph.n_edges),
        "after_negative_pruning": graph.pruning_log.get("after_negative_pruning", graph.n_edges),
        "largest_clique": max(sizes) if sizes else 0,
    }


def structural_stats(albums: Sequence) -> dict:
    """Graph stats from the album histogram alone, without scoring any edge."""
    counts = defaultdict(int)
    for a in albums:
        counts[a] += 1
    within = sum(full_edge_count(c) for c in counts.values())
    return {
        "nodes": len(albums),
        "albums": len(counts),
        "full_edge_count": full_edge_count(len(albums)),
        "after_album_pruning": within,
        "after_negative_pruning": within,
        "largest_clique": max(counts.values()) if counts else 0,
    }


def dump_graph(graph: RecognitionGraph, csv_path, stats_path=None):
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight"])
        for (a, b), w in zip(graph.edges, graph.weights):
            writer.writerow([graph.node_ids[a], graph.node_ids[b], repr(float(w))])
    if stats_path is not None:
        with open(stats_path, "w") as fh:
            json.dump(graph_stats(graph), fh, indent=2, sort_keys=True)
