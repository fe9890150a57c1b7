"""Spatial opportunity sharing as list-coloring of a conflict graph.

Vertices are secondary users, colors are channels. A vertex may only use
channels from its list, and adjacent vertices may not share a channel.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ConflictGraph:
    """Conflict graph with per-vertex channel lists.

    ``positions`` is optional and only used for round-tripping fixture files.
    """

    lists: dict
    edges: set = field(default_factory=set)
    positions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lists = {v: frozenset(c) for v, c in self.lists.items()}
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on vertex {u!r}")
            if u not in self.lists or v not in self.lists:
                raise ValueError(f"edge ({u!r}, {v!r}) references an unknown vertex")
            norm.add(frozenset((u, v)))
        self.edges = norm

    @property
    def vertices(self) -> list:
        return sorted(self.lists)

    def neighbors(self, v) -> set:
        return {w for e in self.edges if v in e for w in e if w != v}

    def degree(self, v) -> int:
        return sum(1 for e in self.edges if v in e)

    def starved(self) -> list:
        return [v for v in self.vertices if not self.lists[v]]

    def channels(self) -> list:
        return sorted(set().union(*self.lists.values())) if self.lists else []

    def with_color(self, v, c) -> "ConflictGraph":
        lists = dict(self.lists)
        lists[v] = lists[v] | {c}
        return ConflictGraph(lists, {tuple(e) for e in self.edges}, dict(self.positions))


Assignment = dict


def is_valid(graph: ConflictGraph, assignment: Assignment) -> bool:
    for v, cs in assignment.items():
        if not set(cs) <= graph.lists[v]:
            return False
    for e in graph.edges:
        u, v = tuple(e)
        if set(assignment.get(u, ())) & set(assignment.get(v, ())):
            return False
    return True


def utility(assignment: Assignment, bandwidths, objective: str = "sum") -> float:
    """Network utility of an assignment.

    ``sum``: total bandwidth assigned, sum_v sum_{c in A(v)} B_c.
    ``pf`` (proportional fair): sum_v log(1 + sum_{c in A(v)} B_c).
    ``bandwidths`` maps channel -> B. Sums run in sorted vertex and channel
    order so equal assignments give bit-identical floats.
    """
    per_vertex = [math.fsum(bandwidths[c] for c in sorted(assignment[v])) for v in sorted(assignment)]
    if objective in ("sum", "sum-bandwidth"):
        return math.fsum(per_vertex)
    if objective in ("pf", "proportional-fair"):
        return math.fsum(math.log1p(x) for x in per_vertex)
    raise ValueError(f"unknown objective {objective!r}")


def _order(graph: ConflictGraph, order: str) -> list:
    if order == "static":
        return graph.vertices
    if order == "max-degree-first":
        return sorted(graph.vertices, key=lambda v: (-graph.degree(v), v))
    raise ValueError(f"unknown vertex order {order!r}")


def _defer(graph: ConflictGraph, v, c, colored: set, nbrs: dict) -> bool:
    """Whether ``v`` should leave channel ``c`` to its uncolored neighbors.

    True when at least two mutually non-adjacent uncolored neighbors could
    still use ``c``: handing it to them is worth more than keeping it.
    """
    cand = [w for w in nbrs[v] if w not in colored and c in graph.lists[w]]
    return any(b not in nbrs[a] for a, b in itertools.combinations(cand, 2))


def greedy_color(graph: ConflictGraph, bandwidths=None, utility_objective: str = "sum",
                 order: str = "max-degree-first", single_channel: bool = False) -> Assignment:
    """Sequential greedy list-coloring.

    Vertices are visited in ``order`` and take the list channels not held by
    a colored neighbor, except channels they should defer (see
    :func:`_defer`). A final pass in the same order hands out whatever is
    still free, so the result is maximal. With ``single_channel`` each
    vertex takes at most one channel, the one of largest marginal utility.
    """
    bandwidths = bandwidths or {c: 1.0 for c in graph.channels()}
    utility(dict(), bandwidths, utility_objective)  # validates the objective
    verts = _order(graph, order)
    nbrs = {v: graph.neighbors(v) for v in verts}
    out = {v: set() for v in verts}
    colored = set()

    def free(v):
        taken = set().union(*(out[w] for w in nbrs[v]))
        return sorted(graph.lists[v] - taken - out[v], key=lambda c: (-bandwidths[c], c))

    for v in verts:
        keep = [c for c in free(v) if not _defer(graph, v, c, colored, nbrs)]
        if single_channel:
            keep = keep[:1]
        out[v].update(keep)
        colored.add(v)
    for v in verts:
        if single_channel and out[v]:
            continue
        extra = free(v)
        out[v].update(extra[:1] if single_channel else extra)
    return out


def brute_force(graph: ConflictGraph, bandwidths, objective: str = "sum",
                single_channel: bool = False, max_vertices: int = 8) -> tuple[float, Assignment]:
    """Exhaustive optimum over all valid assignments (small graphs only).

    Backtracks vertex by vertex, only skipping channel sets that clash with
    an already-assigned neighbor.
    """
    verts = graph.vertices
    if len(verts) > max_vertices:
        raise ValueError(f"brute force limited to {max_vertices} vertices")
    nbrs = {v: graph.neighbors(v) for v in verts}
    options = {}
    for v in verts:
        lst = sorted(graph.lists[v])
        if single_channel:
            options[v] = [frozenset()] + [frozenset((c,)) for c in lst]
        else:
            options[v] = [frozenset(s) for k in range(len(lst) + 1)
                          for s in itertools.combinations(lst, k)]
    best = [-math.inf, None]
    current = {}

    def rec(i):
        if i == len(verts):
            u = utility(current, bandwidths, objective)
            if u > best[0]:
                best[0], best[1] = u, dict(current)
            return
        v = verts[i]
        taken = set().union(*(current[w] for w in nbrs[v] if w in current))
        for opt in options[v]:
            if opt & taken:
                continue
            current[v] = opt
            rec(i + 1)
            del current[v]

    rec(0)
    return best[0], {v: set(c) for v, c in best[1].items()}


def is_maximal(graph: ConflictGraph, assignment: Assignment) -> bool:
    """No vertex can add a list channel without breaking validity."""
    for v in graph.vertices:
        taken = set().union(*(assignment.get(w, set()) for w in graph.neighbors(v)))
        if graph.lists[v] - set(assignment.get(v, ())) - taken:
            return False
    return True


def distributed_color(graph: ConflictGraph, rounds: int, rng: np.random.Generator,
                      single_channel: bool = False, activity: float = 0.5) -> Assignment:
    """Synchronous randomized list-coloring.

    Every round, each vertex that can still grow wakes up with probability
    ``activity`` and proposes one random channel from what it can still
    take. A proposal is withdrawn if a neighbor proposed the same channel in
    the same round; surviving proposals are kept. The random wake-ups break
    the symmetric deadlock of neighbors that share a single channel. Stops
    after ``rounds`` rounds or as soon as no vertex can grow.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    verts = graph.vertices
    nbrs = {v: graph.neighbors(v) for v in verts}
    held = {v: set() for v in verts}

    def avail(v):
        if single_channel and held[v]:
            return []
        taken = set().union(*(held[w] for w in nbrs[v]))
        return sorted(graph.lists[v] - held[v] - taken)

    for _ in range(rounds):
        options = {v: avail(v) for v in verts}
        options = {v: o for v, o in options.items() if o}
        if not options:
            break
        proposals = {}
        for v, opts in options.items():
            wake, pick = rng.random(), int(rng.integers(len(opts)))
            if wake < activity:
                proposals[v] = opts[pick]
        for v, c in proposals.items():
            if any(proposals.get(w) == c for w in nbrs[v]):
                continue
            held[v].add(c)
    return held


def build_conflict_graph(secondaries, interference_radius: float, coverage,
                         channels) -> ConflictGraph:
    """Conflict graph from positions and primary coverage.

    ``secondaries``: iterable of (id, x, y). ``coverage``: iterable of
    (x, y, radius, channel) disks; a secondary inside a disk loses that
    channel. Secondaries within ``interference_radius`` of each other are
    adjacent (closed disk).
    """
    nodes = [(sid, float(x), float(y)) for sid, x, y in secondaries]
    lists, pos = {}, {}
    for sid, x, y in nodes:
        blocked = {c for cx, cy, r, c in coverage if math.hypot(x - cx, y - cy) <= r}
        lists[sid] = set(channels) - blocked
        pos[sid] = (x, y)
    edges = set()
    for (a, ax, ay), (b, bx, by) in itertools.combinations(nodes, 2):
        if math.hypot(ax - bx, ay - by) <= interference_radius:
            edges.add((a, b))
    return ConflictGraph(lists, edges, pos)


def parse_graph(text: str) -> ConflictGraph:
    """Read the fixture format.

    Vertex lines ``id x y list:c1,c2`` (``list:`` may be empty) and edge
    lines ``edge u v``; ``#`` starts a comment. Channels are integers.
    """
    lists, pos, edges = {}, {}, set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "edge":
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'edge u v'")
            edges.add((parts[1], parts[2]))
            continue
        if len(parts) != 4 or not parts[3].startswith("list:"):
            raise ValueError(f"line {lineno}: expected 'id x y list:c1,c2'")
        vid = parts[0]
        if vid in lists:
            raise ValueError(f"line {lineno}: duplicate vertex {vid!r}")
        try:
            pos[vid] = (float(parts[1]), float(parts[2]))
            body = parts[3][len("list:"):]
            lists[vid] = {int(c) for c in body.split(",") if c}
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    for u, v in edges:
        for w in (u, v):
            if w not in lists:
                raise ValueError(f"edge references unknown vertex {w!r}")
    return ConflictGraph(lists, edges, pos)


def load_graph(path) -> ConflictGraph:
    return parse_graph(Path(path).read_text())


def assignment_csv(assignment: Assignment) -> str:
    lines = ["vertex,channels"]
    for v in sorted(assignment):
        lines.append(f"{v},{' '.join(str(c) for c in sorted(assignment[v]))}")
    return "\n".join(lines) + "\n"


def parse_assignment_csv(text: str) -> Assignment:
    rows = text.strip().splitlines()[1:]
    out = {}
    for row in rows:
        v, cs = row.split(",", 1)
        out[v] = {int(c) for c in cs.split()}
    return out
