"""Channel conversion graphs and minimum conversion trees.

Vertices are channel types (reusable or single-consumer); a directed edge
says a conversion operator can turn the source channel into the target
channel, priced like any other operator at the cardinality being moved.

Given a root channel (what a producer emits) and one target channel set per
consumer (what each consumer accepts), the solver finds a directed tree
rooted at the root that touches at least one channel of every target set,
never gives a non-reusable channel more than one successor (a conversion or
a consuming operator), and has minimum total edge cost. Identical target
sets are first merged where a reusable channel can serve all of them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .cost import IntervalEstimate, sum_intervals
from .errors import InputError, InstanceTooLargeError, NoConversionTreeError

BRUTE_FORCE_CHANNEL_GUARD = 12
BRUTE_FORCE_TREE_GUARD = 500_000


@dataclass(frozen=True)
class Channel:
    id: str
    reusable: bool


@dataclass(frozen=True)
class ConversionEdge:
    src: str
    dst: str
    operator: str | None = None
    static_cost: IntervalEstimate | None = None


class ChannelConversionGraph:
    def __init__(
        self,
        channels: Iterable[Channel],
        edges: Iterable[ConversionEdge],
        cost_fn: Callable[[ConversionEdge, IntervalEstimate], IntervalEstimate] | None = None,
    ):
        self.channels: dict[str, Channel] = {}
        for ch in channels:
            if ch.id in self.channels:
                raise InputError(f"duplicate channel '{ch.id}'")
            self.channels[ch.id] = ch
        self.edges: dict[tuple[str, str], ConversionEdge] = {}
        for e in edges:
            for end in (e.src, e.dst):
                if end not in self.channels:
                    raise InputError(f"conversion {e.src}->{e.dst}: unknown channel '{end}'")
            if (e.src, e.dst) in self.edges:
                raise InputError(f"duplicate conversion edge {e.src}->{e.dst}")
            self.edges[(e.src, e.dst)] = e
        self._succ: dict[str, list[str]] = {c: [] for c in self.channels}
        for (src, dst) in self.edges:
            self._succ[src].append(dst)
        for lst in self._succ.values():
            lst.sort()
        self.cost_fn = cost_fn

    def successors(self, channel: str) -> list[str]:
        return self._succ[channel]

    def reusable(self, channel: str) -> bool:
        return self.channels[channel].reusable

    def edge_cost(self, src: str, dst: str, cardinality: IntervalEstimate) -> IntervalEstimate:
        e = self.edges[(src, dst)]
        if e.static_cost is not None:
            return e.static_cost
        if self.cost_fn is None:
            raise InputError(f"conversion {src}->{dst} has no cost source")
        return self.cost_fn(e, cardinality)

    def priced(self, cardinality: IntervalEstimate) -> dict[tuple[str, str], IntervalEstimate]:
        return {pair: self.edge_cost(*pair, cardinality) for pair in self.edges}


@dataclass(frozen=True)
class ConversionTree:
    """A solved movement plan: tree edges plus, per requested target set, the
    channel chosen to serve it (the root itself when no conversion is needed)."""

    root: str
    edges: tuple[tuple[str, str], ...]
    serves: tuple[str, ...]
    cost: IntervalEstimate

    def channels(self) -> frozenset[str]:
        members = {self.root}
        for _, dst in self.edges:
            members.add(dst)
        return frozenset(members)

    def canonical(self) -> str:
        parts = [f"{s}>{d}" for s, d in self.edges]
        return self.root + "|" + ";".join(parts) + "|" + ",".join(self.serves)


def kernelize(
    graph: ChannelConversionGraph, target_sets: Sequence[frozenset[str]]
) -> list[frozenset[str]]:
    sets, _ = kernelize_indexed(graph, target_sets)
    return sets


def kernelize_indexed(
    graph: ChannelConversionGraph, target_sets: Sequence[frozenset[str]]
) -> tuple[list[frozenset[str]], list[int]]:
    """Iteratively merge groups of identical target sets that contain at most
    one non-reusable and at least one reusable channel, keeping only the
    reusable channels (a reusable channel can feed any number of consumers,
    so one serving channel satisfies the whole group). Returns the reduced
    sets plus a map from original index to reduced index."""
    current: list[frozenset[str]] = [frozenset(s) for s in target_sets]
    back = list(range(len(current)))
    while True:
        groups: dict[frozenset[str], list[int]] = {}
        for idx, s in enumerate(current):
            groups.setdefault(s, []).append(idx)
        merged: list[frozenset[str]] = []
        remap: dict[int, int] = {}
        changed = False
        consumed: set[int] = set()
        for idx, s in enumerate(current):
            if idx in consumed:
                continue
            members = groups[s]
            reusable = frozenset(c for c in s if graph.reusable(c))
            non_reusable = len(s) - len(reusable)
            if len(members) >= 2 and non_reusable <= 1 and reusable:
                new_idx = len(merged)
                merged.append(reusable)
                for m in members:
                    remap[m] = new_idx
                    consumed.add(m)
                changed = True
            else:
                remap[idx] = len(merged)
                merged.append(s)
                consumed.add(idx)
        back = [remap[b] for b in back]
        current = merged
        if not changed:
            return current, back


# Internal partial-tree entry: (mid, low, edges, serves, vertices). The first
# four fields double as the deterministic comparison key.
_Entry = tuple[float, float, tuple[tuple[str, str], ...], tuple[tuple[int, str], ...], frozenset[str]]


def _entry_key(e: _Entry):
    return e[:4]


def _singleton(c: str) -> _Entry:
    return (0.0, 0.0, (), (), frozenset((c,)))


def _with_serves(e: _Entry, extra: Iterable[tuple[int, str]]) -> _Entry:
    serves = tuple(sorted(set(e[3]) | set(extra)))
    return (e[0], e[1], e[2], serves, e[4])


def _merge(a: _Entry, b: _Entry) -> _Entry:
    return (
        a[0] + b[0],
        a[1] + b[1],
        tuple(sorted(a[2] + b[2])),
        tuple(sorted(a[3] + b[3])),
        a[4] | b[4],
    )


def find_mct(
    graph: ChannelConversionGraph,
    root: str,
    target_sets: Sequence[frozenset[str]],
    cardinality: IntervalEstimate,
) -> ConversionTree:
    """Exact minimum conversion tree via kernelization plus recursive search.

    The recursion visits a channel, satisfies whatever still-open target sets
    it belongs to, then explores outgoing conversions, keeping one cheapest
    partial tree per subset of target sets satisfied. A reusable channel may
    serve any number of sets and fan out to several subtrees; a non-reusable
    channel gets a single successor, so it either serves exactly one set or
    continues into exactly one conversion. Equal-cost trees are tie-broken on
    the canonical edge/serves serialization.
    """
    if root not in graph.channels:
        raise InputError(f"unknown root channel '{root}'")
    for i, s in enumerate(target_sets):
        unknown = [c for c in s if c not in graph.channels]
        if unknown:
            raise InputError(f"target set {i}: unknown channel(s) {sorted(unknown)}")
        if not s:
            raise InputError(f"target set {i} is empty")

    kernel_sets, back = kernelize_indexed(graph, target_sets)
    prices = graph.priced(cardinality)
    costs = {pair: iv.key() for pair, iv in prices.items()}
    all_idx = frozenset(range(len(kernel_sets)))

    best = _traverse(graph, costs, kernel_sets, root, frozenset(), frozenset()).get(all_idx)
    if best is None and not kernel_sets:
        best = _singleton(root)
    if best is None:
        wanted = "; ".join("|".join(sorted(s)) for s in target_sets)
        raise NoConversionTreeError(
            f"no conversion tree from '{root}' reaching every target set ({wanted})"
        )

    serving = dict(best[3])
    serves = tuple(serving.get(back[i], root) for i in range(len(target_sets)))
    # A kernel set satisfied directly by the root never shows up in `serves`
    # entries; fall back to the root (guaranteed member by construction).
    cost = sum_intervals(prices[pair] for pair in best[2]) if best[2] else IntervalEstimate.zero()
    return ConversionTree(root=root, edges=best[2], serves=serves, cost=cost)


def _traverse(
    graph: ChannelConversionGraph,
    costs: Mapping[tuple[str, str], tuple[float, float]],
    kernel_sets: Sequence[frozenset[str]],
    c: str,
    visited: frozenset[str],
    satisfied: frozenset[int],
) -> dict[frozenset[int], _Entry]:
    all_idx = frozenset(range(len(kernel_sets)))
    open_here = frozenset(
        i for i in all_idx if i not in satisfied and c in kernel_sets[i]
    )
    reusable = graph.reusable(c)

    if satisfied | open_here == all_idx:
        # Everything still open is satisfiable right here at zero extra cost;
        # no deeper tree can beat that. Non-reusable channels can only serve
        # one set, so they fall through when more than one set is open.
        if reusable:
            out: dict[frozenset[int], _Entry] = {}
            for S in _subsets(open_here):
                if S:
                    out[S] = _with_serves(_singleton(c), ((i, c) for i in S))
            return out
        if len(open_here) == 1:
            (i,) = open_here
            return {open_here: _with_serves(_singleton(c), ((i, c),))}

    sat2 = satisfied | open_here if reusable else satisfied
    visited2 = visited | {c}
    child_dicts: list[dict[frozenset[int], _Entry]] = []
    for dst in graph.successors(c):
        if dst in visited2:
            continue
        sub = _traverse(graph, costs, kernel_sets, dst, visited2, sat2)
        if not sub:
            continue
        mid, low = costs[(c, dst)]
        grown: dict[frozenset[int], _Entry] = {}
        for k, e in sub.items():
            grown[k] = (
                e[0] + mid,
                e[1] + low,
                tuple(sorted(e[2] + ((c, dst),))),
                e[3],
                e[4] | {c},
            )
        child_dicts.append(grown)

    result: dict[frozenset[int], _Entry] = {}
    if reusable:
        # Fold children: one cheapest channel-disjoint combination per union
        # of satisfied sets, then optionally serve any subset of open_here at
        # the root of this partial tree for free.
        acc: dict[frozenset[int], _Entry] = {frozenset(): _singleton(c)}
        for dct in child_dicts:
            extended = dict(acc)
            for k1, e1 in acc.items():
                for k2, e2 in dct.items():
                    if k1 & k2:
                        continue
                    if (e1[4] & e2[4]) - {c}:
                        continue
                    cand = _merge(e1, e2)
                    key = k1 | k2
                    cur = extended.get(key)
                    if cur is None or _entry_key(cand) < _entry_key(cur):
                        extended[key] = cand
            acc = extended
        for k, e in acc.items():
            for S in _subsets(open_here):
                kk = k | S
                if not kk:
                    continue
                cand = _with_serves(e, ((i, c) for i in S)) if S else e
                cur = result.get(kk)
                if cur is None or _entry_key(cand) < _entry_key(cur):
                    result[kk] = cand
    else:
        for i in sorted(open_here):
            cand = _with_serves(_singleton(c), ((i, c),))
            key = frozenset((i,))
            cur = result.get(key)
            if cur is None or _entry_key(cand) < _entry_key(cur):
                result[key] = cand
        for dct in child_dicts:
            for k, e in dct.items():
                cur = result.get(k)
                if cur is None or _entry_key(e) < _entry_key(cur):
                    result[k] = e
    return result


def _subsets(items: frozenset[int]) -> list[frozenset[int]]:
    ordered = sorted(items)
    out = []
    for r in range(len(ordered) + 1):
        out.extend(frozenset(c) for c in itertools.combinations(ordered, r))
    return out


def brute_force_mct(
    graph: ChannelConversionGraph,
    root: str,
    target_sets: Sequence[frozenset[str]],
    cardinality: IntervalEstimate,
) -> ConversionTree:
    """Oracle: enumerate every directed subtree rooted at `root`, keep those
    where each target set can be assigned a serving member channel without
    giving any non-reusable channel more than one successor (tree out-degree
    plus assigned consumers), and return a cheapest one. Exponential; guarded."""
    if len(graph.channels) > BRUTE_FORCE_CHANNEL_GUARD:
        raise InstanceTooLargeError(
            f"brute force refuses graphs with more than {BRUTE_FORCE_CHANNEL_GUARD} channels"
        )
    if root not in graph.channels:
        raise InputError(f"unknown root channel '{root}'")
    prices = graph.priced(cardinality)
    costs = {pair: iv.key() for pair, iv in prices.items()}

    seen: set[frozenset[tuple[str, str]]] = {frozenset()}
    frontier: list[tuple[frozenset[tuple[str, str]], frozenset[str]]] = [
        (frozenset(), frozenset((root,)))
    ]
    trees = [frontier[0]]
    while frontier:
        edges, verts = frontier.pop()
        for (src, dst) in graph.edges:
            if src in verts and dst not in verts:
                new_edges = edges | {(src, dst)}
                if new_edges in seen:
                    continue
                seen.add(new_edges)
                if len(seen) > BRUTE_FORCE_TREE_GUARD:
                    raise InstanceTooLargeError("brute force exceeded subtree guard")
                entry = (new_edges, verts | {dst})
                trees.append(entry)
                frontier.append(entry)

    best_key = None
    best: ConversionTree | None = None
    for edges, verts in trees:
        assignment = _feasible_assignment(graph, edges, verts, target_sets)
        if assignment is None:
            continue
        mid = sum(costs[e][0] for e in edges)
        low = sum(costs[e][1] for e in edges)
        edges_t = tuple(sorted(edges))
        key = (mid, low, edges_t, assignment)
        if best_key is None or key < best_key:
            best_key = key
            cost = (
                sum_intervals(prices[e] for e in edges_t) if edges_t else IntervalEstimate.zero()
            )
            best = ConversionTree(root=root, edges=edges_t, serves=assignment, cost=cost)
    if best is None:
        wanted = "; ".join("|".join(sorted(s)) for s in target_sets)
        raise NoConversionTreeError(
            f"no conversion tree from '{root}' reaching every target set ({wanted})"
        )
    return best


def _feasible_assignment(
    graph: ChannelConversionGraph,
    edges: frozenset[tuple[str, str]],
    verts: frozenset[str],
    target_sets: Sequence[frozenset[str]],
) -> tuple[str, ...] | None:
    out_deg: dict[str, int] = {}
    for src, _ in edges:
        out_deg[src] = out_deg.get(src, 0) + 1
    for ch, deg in out_deg.items():
        # Interior fan-out counts against non-reusable channels too, not just
        # serving ones: one write, one read.
        if deg > 1 and not graph.reusable(ch):
            return None
    candidates = []
    for s in target_sets:
        members = sorted(s & verts)
        if not members:
            return None
        candidates.append(members)
    for combo in itertools.product(*candidates):
        load: dict[str, int] = {}
        for ch in combo:
            load[ch] = load.get(ch, 0) + 1
        ok = True
        for ch, served in load.items():
            if not graph.reusable(ch) and out_deg.get(ch, 0) + served > 1:
                ok = False
                break
        if ok:
            return tuple(combo)
    return None
