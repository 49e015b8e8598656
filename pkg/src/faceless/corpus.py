"""Data model, synthetic corpus generation, splits, tags and head obfuscation.

Instances carry feature vectors, not pixels. A corpus is either generated from a
latent identity/event model or ingested from a JSON Lines file produced by an
external feature extractor.
"""

from __future__ import annotations

import dataclasses
import enum
import gzip
import io
import itertools
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, PlanError, SplitError
from .seeding import derive_rng

RECORD_KEYS = (
    "instance_id",
    "photo_id",
    "album_id",
    "event_id",
    "identity",
    "head_features",
    "context_features",
)


class ObfuscationType(str, enum.Enum):
    VISIBLE = "visible"
    BLUR = "blur"
    BLACK = "black"
    WHITE = "white"


@dataclass(frozen=True)
class Obfuscation:
    kind: ObfuscationType = ObfuscationType.VISIBLE
    strength: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ObfuscationType(self.kind))
        if self.kind is ObfuscationType.BLUR and not 0.0 <= self.strength <= 1.0:
            raise ConfigError(f"blur strength must lie in [0, 1], got {self.strength}")

    @classmethod
    def parse(cls, value, blur_strength=0.6):
        if isinstance(value, Obfuscation):
            return value
        kind = value if isinstance(value, ObfuscationType) else ObfuscationType(str(value).lower())
        return cls(kind, blur_strength if kind is ObfuscationType.BLUR else 0.0)

    @property
    def visible(self):
        return self.kind is ObfuscationType.VISIBLE

    def __str__(self):
        return self.kind.value


VISIBLE = Obfuscation()


@dataclass(frozen=True, eq=False)
class Instance:
    instance_id: str
    photo_id: str
    album_id: str
    event_id: str
    identity: str
    head_features: np.ndarray
    context_features: np.ndarray
    obfuscation: Obfuscation = VISIBLE

    @property
    def features(self):
        return np.concatenate([self.head_features, self.context_features])

    def record(self):
        return {
            "instance_id": self.instance_id,
            "photo_id": self.photo_id,
            "album_id": self.album_id,
            "event_id": self.event_id,
            "identity": self.identity,
            "head_features": [float(v) for v in self.head_features],
            "context_features": [float(v) for v in self.context_features],
        }


@dataclass(frozen=True)
class GeneratorConfig:
    n_identities: int = 100
    instances_per_identity: int = 20
    events_per_identity: int = 4
    albums_per_event: int = 1
    group_size: int = 5
    head_dim: int = 16
    context_dim: int = 32
    identity_weight: float = 1.0
    event_weight: float = 1.0
    noise_sigma: float = 0.2

    def __post_init__(self):
        for name in ("n_identities", "instances_per_identity", "events_per_identity",
                     "albums_per_event", "group_size", "head_dim", "context_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.identity_weight < 0 or self.event_weight < 0:
            raise ConfigError("signal weights must be non-negative")
        if not self.noise_sigma > 0:
            raise ConfigError(f"noise_sigma must be positive, got {self.noise_sigma}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**data)


class Corpus:
    """Immutable collection of instances with uniform feature dimensions."""

    def __init__(self, instances: Sequence[Instance], provenance: Mapping | None = None):
        instances = tuple(instances)
        if not instances:
            raise ConfigError("corpus has no instances")
        dh = len(instances[0].head_features)
        dc = len(instances[0].context_features)
        if dh < 1 or dc < 1:
            raise ConfigError("feature dimensions must be >= 1")
        seen = set()
        album_of_photo, event_of_album = {}, {}
        for inst in instances:
            if inst.instance_id in seen:
                raise ConfigError(f"duplicate instance_id {inst.instance_id!r}")
            seen.add(inst.instance_id)
            if len(inst.head_features) != dh or len(inst.context_features) != dc:
                raise ConfigError(f"ragged feature dimension at {inst.instance_id!r}")
            if album_of_photo.setdefault(inst.photo_id, inst.album_id) != inst.album_id:
                raise ConfigError(f"photo {inst.photo_id!r} spans several albums")
            if event_of_album.setdefault(inst.album_id, inst.event_id) != inst.event_id:
                raise ConfigError(f"album {inst.album_id!r} spans several events")
        counts = Counter(inst.identity for inst in instances)
        lonely = sorted(k for k, n in counts.items() if n < 2)
        if lonely:
            raise ConfigError(f"identities with fewer than 2 instances: {lonely[:5]}")
        self.instances = instances
        self.feature_dims = (dh, dc)
        self.provenance = dict(provenance or {})
        self.index = {inst.instance_id: i for i, inst in enumerate(instances)}

    def __len__(self):
        return len(self.instances)

    def __getitem__(self, instance_id):
        return self.instances[self.index[instance_id]]

    @cached_property
    def identities(self):
        return tuple(sorted({inst.identity for inst in self.instances}))

    @cached_property
    def by_identity(self):
        groups = defaultdict(list)
        for inst in self.instances:
            groups[inst.identity].append(inst.instance_id)
        return dict(groups)

    @cached_property
    def albums(self):
        groups = defaultdict(list)
        for inst in self.instances:
            groups[inst.album_id].append(inst.instance_id)
        return dict(groups)

    @cached_property
    def head_matrix(self):
        m = np.stack([inst.head_features for inst in self.instances])
        m.flags.writeable = False
        return m

    @cached_property
    def context_matrix(self):
        m = np.stack([inst.context_features for inst in self.instances])
        m.flags.writeable = False
        return m

    @cached_property
    def head_mean(self):
        return self.head_matrix.mean(axis=0)

    def equals(self, other):
        if len(self) != len(other) or self.feature_dims != other.feature_dims:
            return False
        for a, b in zip(self.instances, other.instances):
            if a.record() != b.record():
                return False
        return True


def _unit_vectors(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_corpus(config: GeneratorConfig, seed: int) -> Corpus:
    """Sample a synthetic social-photo corpus.

    Identities are grouped into social circles of ``group_size``; each circle
    shares ``events_per_identity`` events, each event holds ``albums_per_event``
    albums. An identity's instances are spread evenly over its circle's events.

    head    = w_id * u_head(identity)                       + noise
    context = w_id * u_ctx(identity) + w_ev * v(event)      + noise
    """
    if not isinstance(config, GeneratorConfig):
        raise ConfigError("generate_corpus expects a GeneratorConfig")
    rng = np.random.default_rng(seed)
    n_id = config.n_identities
    n_groups = math.ceil(n_id / config.group_size)
    n_events = n_groups * config.events_per_identity
    u_head = _unit_vectors(rng, n_id, config.head_dim)
    u_ctx = _unit_vectors(rng, n_id, config.context_dim)
    v_event = _unit_vectors(rng, n_events, config.context_dim)

    width = len(str(n_id - 1))
    rows = []  # (identity index, event index, album id)
    for ident in range(n_id):
        group = ident // config.group_size
        events = group * config.events_per_identity + np.arange(config.events_per_identity)
        offset = rng.integers(config.events_per_identity)
        order = rng.permutation(config.instances_per_identity)
        for k in order:
            ev = int(events[(k + offset) % config.events_per_identity])
            album = int(rng.integers(config.albums_per_event))
            rows.append((ident, ev, f"a{ev:04d}_{album:02d}"))

    by_album = defaultdict(list)
    for r, (_, _, album) in enumerate(rows):
        by_album[album].append(r)
    photo_of = {}
    for album in sorted(by_album):
        members = list(by_album[album])
        rng.shuffle(members)
        for pos, r in enumerate(members):
            photo_of[r] = f"{album}_p{pos // 3:03d}"

    noise_h = rng.standard_normal((len(rows), config.head_dim)) * config.noise_sigma
    noise_c = rng.standard_normal((len(rows), config.context_dim)) * config.noise_sigma
    instances = []
    for r, (ident, ev, album) in enumerate(rows):
        head = config.identity_weight * u_head[ident] + noise_h[r]
        ctx = config.identity_weight * u_ctx[ident] + config.event_weight * v_event[ev] + noise_c[r]
        head.flags.writeable = False
        ctx.flags.writeable = False
        instances.append(Instance(
            instance_id=f"i{r:06d}",
            photo_id=photo_of[r],
            album_id=album,
            event_id=f"e{ev:04d}",
            identity=f"p{ident:0{width}d}",
            head_features=head,
            context_features=ctx,
        ))
    return Corpus(instances, provenance={"synthetic": {"seed": int(seed), "config": config.to_dict()}})


def _open_text(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save_corpus(corpus: Corpus, path) -> None:
    # mtime=0 keeps gzip output byte-stable
    path = Path(path)
    lines = "".join(json.dumps(inst.record()) + "\n" for inst in corpus.instances)
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(lines.encode("utf-8"))
    else:
        path.write_text(lines, encoding="utf-8")


def _as_vector(value, name, line):
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ParseError(f"{name} must be an array of numbers", line)
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{name} contains non-finite values", line)
    arr.flags.writeable = False
    return arr


def load_corpus(path) -> Corpus:
    instances, seen = [], set()
    dims = None
    try:
        fh = _open_text(path, "r")
    except OSError as exc:
        raise DataError(f"cannot open corpus {path}: {exc.strerror or exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", lineno)
            for key in RECORD_KEYS:
                if key not in rec:
                    raise ParseError(f"missing field {key!r}", lineno)
            head = _as_vector(rec["head_features"], "head_features", lineno)
            ctx = _as_vector(rec["context_features"], "context_features", lineno)
            if dims is None:
                dims = (len(head), len(ctx))
                if min(dims) < 1:
                    raise ParseError("feature vectors must be non-empty", lineno)
            elif (len(head), len(ctx)) != dims:
                raise ParseError(
                    f"ragged feature dimension: got ({len(head)}, {len(ctx)}), expected {dims}", lineno)
            iid = str(rec["instance_id"])
            if iid in seen:
                raise ParseError(f"duplicate instance_id {iid!r}", lineno)
            seen.add(iid)
            instances.append(Instance(
                instance_id=iid,
                photo_id=str(rec["photo_id"]),
                album_id=str(rec["album_id"]),
                event_id=str(rec["event_id"]),
                identity=str(rec["identity"]),
                head_features=head,
                context_features=ctx,
            ))
    if not instances:
        raise ParseError("no instances")
    try:
        return Corpus(instances, provenance={"ingested": str(path)})
    except ConfigError as exc:
        raise ParseError(str(exc)) from None


# ---------------------------------------------------------------- splits / tags


class DomainMode(str, enum.Enum):
    WITHIN = "within"
    ACROSS = "across"


@dataclass(frozen=True)
class SplitAssignment:
    split_of: Mapping[str, int]
    domain_mode: DomainMode

    def members(self, side):
        return [iid for iid, s in self.split_of.items() if s == side]

    @property
    def split0(self):
        return self.members(0)

    @property
    def split1(self):
        return self.members(1)

    def to_dict(self):
        return {"domain_mode": self.domain_mode.value, "split_of": dict(self.split_of)}

    @classmethod
    def from_dict(cls, data):
        return cls(dict(data["split_of"]), DomainMode(data["domain_mode"]))


def _best_event_partition(sizes, target):
    """Subset of event indices whose size sum is closest to ``target``.

    Both sides non-empty; ties prefer sums at or above the target.
    """
    n = len(sizes)
    best, best_key = None, None
    if n <= 16:
        for r in range(1, n):
            for combo in itertools.combinations(range(n), r):
                total = sum(sizes[i] for i in combo)
                key = (abs(total - target), total < target)
                if best_key is None or key < best_key:
                    best, best_key = combo, key
        return set(best)
    chosen, total = set(), 0
    for i in sorted(range(n), key=lambda i: -sizes[i]):
        if total + sizes[i] <= target or not chosen:
            chosen.add(i)
            total += sizes[i]
    if len(chosen) == n:
        chosen.discard(min(chosen, key=lambda i: sizes[i]))
    return chosen


def make_splits(corpus: Corpus, domain_mode, seed: int) -> SplitAssignment:
    """Halve every identity into split0/split1 (odd counts round up into split0).

    ``across`` assigns whole events to one side, so an identity's split0 and
    split1 events are disjoint.
    """
    mode = DomainMode(domain_mode)
    split_of = {}
    offenders = []
    for identity in sorted(corpus.by_identity):
        ids = sorted(corpus.by_identity[identity])
        if len(ids) < 2:
            raise SplitError(f"identity {identity!r} has fewer than 2 instances")
        rng = derive_rng(seed, "split", identity)
        target = math.ceil(len(ids) / 2)
        if mode is DomainMode.WITHIN:
            perm = rng.permutation(len(ids))
            for rank, k in enumerate(perm):
                split_of[ids[k]] = 0 if rank < target else 1
            continue
        events = defaultdict(list)
        for iid in ids:
            events[corpus[iid].event_id].append(iid)
        if len(events) < 2:
            offenders.append(identity)
            continue
        names = sorted(events)
        names = [names[k] for k in rng.permutation(len(names))]
        chosen = _best_event_partition([len(events[e]) for e in names], target)
        for k, ev in enumerate(names):
            for iid in events[ev]:
                split_of[iid] = 0 if k in chosen else 1
    if offenders:
        raise SplitError(f"identities with a single event cannot be split across events: {offenders}")
    ordered = {inst.instance_id: split_of[inst.instance_id] for inst in corpus.instances}
    return SplitAssignment(ordered, mode)


@dataclass(frozen=True)
class TagSet:
    instance_ids: frozenset
    tau: float

    def labels(self, corpus):
        return {iid: corpus[iid].identity for iid in self.instance_ids}

    def realized_rate(self, corpus):
        per_id = Counter(corpus[iid].identity for iid in self.instance_ids)
        return sum(per_id.values()) / max(len(per_id), 1)


def sample_tags(corpus: Corpus, splits: SplitAssignment, tau: float, seed: int) -> TagSet:
    """Tag split0 instances at an average rate of ``tau`` per identity.

    An identity with n split0 instances receives round_stochastic(tau * n / mean_n)
    tags, clipped to [1, n].
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    pool = defaultdict(list)
    for iid, side in splits.split_of.items():
        if side == 0:
            pool[corpus[iid].identity].append(iid)
    missing = [ident for ident in corpus.identities if ident not in pool]
    if missing:
        raise ConfigError(f"identities without split0 instances: {missing[:5]}")
    mean_n = sum(len(v) for v in pool.values()) / len(pool)
    if tau > mean_n + 1e-9:
        raise ConfigError(f"tau={tau} exceeds mean split0 size {mean_n:g}")
    tagged = set()
    for identity in sorted(pool):
        ids = sorted(pool[identity])
        rng = derive_rng(seed, "tags", identity)
        target = tau * len(ids) / mean_n
        base = math.floor(target + 1e-12)
        frac = target - base
        count = base + int(frac > 1e-12 and rng.random() < frac)
        count = min(max(count, 1), len(ids))
        pick = rng.choice(len(ids), size=count, replace=False)
        tagged.update(ids[k] for k in pick)
    return TagSet(frozenset(tagged), float(tau))


# ---------------------------------------------------------------- obfuscation

BLACK_FILL = -1.0
WHITE_FILL = 1.0


@dataclass(frozen=True)
class BlurParams:
    mean: np.ndarray | None = None
    sigma: float = 0.2


def apply_obfuscation(head_features, obfuscation: Obfuscation, params: BlurParams | None = None, seed: int = 0):
    """Transform head features (a vector or a row matrix). Context is never touched."""
    obfuscation = Obfuscation.parse(obfuscation)
    x = np.asarray(head_features, dtype=float)
    kind = obfuscation.kind
    if kind is ObfuscationType.VISIBLE:
        return x.copy()
    if kind is ObfuscationType.BLACK:
        return np.full_like(x, BLACK_FILL)
    if kind is ObfuscationType.WHITE:
        return np.full_like(x, WHITE_FILL)
    s = obfuscation.strength
    if s == 0.0:
        return x.copy()
    params = params or BlurParams()
    mu = np.zeros(x.shape[-1]) if params.mean is None else np.asarray(params.mean, dtype=float)
    noise = np.random.default_rng(seed).standard_normal(x.shape) * (s * params.sigma)
    return (1.0 - s) * x + s * mu + noise


def obfuscate_instance(inst: Instance, obfuscation: Obfuscation, params: BlurParams | None = None, seed: int = 0):
    """Copy of ``inst`` with obfuscated head; blur noise keyed by instance id."""
    obfuscation = Obfuscation.parse(obfuscation)
    if obfuscation.visible:
        return inst
    rng_seed = int(derive_rng(seed, "blur", inst.instance_id).integers(2**63 - 1))
    head = apply_obfuscation(inst.head_features, obfuscation, params, rng_seed)
    head.flags.writeable = False
    return dataclasses.replace(inst, head_features=head, obfuscation=obfuscation)


# ---------------------------------------------------------------- scenarios

SCENARIO_ALIASES = {
    "S0": "S0", "S1": "S1", "S2": "S2", "S3": "S3",
    "S3P": "S3p", "S3'": "S3p", "S3′": "S3p",
    "S3PP": "S3pp", "S3''": "S3pp", "S3′′": "S3pp", "S3″": "S3pp",
}
SCENARIOS = ("S0", "S1", "S2", "S3", "S3p", "S3pp")


def parse_scenario(name) -> str:
    key = str(name).strip().upper()
    if key not in SCENARIO_ALIASES:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return SCENARIO_ALIASES[key]


@dataclass(frozen=True)
class ObfuscationPlan:
    scenario: str
    assignments: Mapping[str, Obfuscation] = field(default_factory=dict)

    @property
    def obfuscated(self):
        return frozenset(iid for iid, o in self.assignments.items() if not o.visible)

    def of(self, instance_id):
        return self.assignments.get(instance_id, VISIBLE)


def plan_obfuscation(scenario, splits: SplitAssignment, tags: TagSet | None = None,
                     query: str | None = None, obfuscation=ObfuscationType.BLACK) -> ObfuscationPlan:
    """Which heads are obfuscated under each privacy scenario.

    S0/S1: none. S2: only the query (a split1 instance). S3: all. S3p: split0
    only. S3pp: split1 only.
    """
    scenario = parse_scenario(scenario)
    obf = Obfuscation.parse(obfuscation)
    ids = list(splits.split_of)
    if scenario in ("S0", "S1"):
        chosen = []
    elif scenario == "S2":
        if query is None:
            raise PlanError("scenario S2 requires a query instance")
        if splits.split_of.get(query) != 1:
            raise PlanError(f"S2 query {query!r} is not a split1 instance")
        chosen = [query]
    elif scenario == "S3":
        chosen = ids
    elif scenario == "S3p":
        chosen = [i for i in ids if splits.split_of[i] == 0]
    else:
        chosen = [i for i in ids if splits.split_of[i] == 1]
    if chosen and obf.visible:
        raise PlanError(f"scenario {scenario} needs a non-visible obfuscation type")
    assignments = {iid: VISIBLE for iid in ids}
    assignments.update({iid: obf for iid in chosen})
    return ObfuscationPlan(scenario, assignments)
