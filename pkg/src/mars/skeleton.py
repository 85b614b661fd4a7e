"""Sparse agent-skeleton graphs.

Agents inside one group form a complete directed subgraph; each pair of
distinct groups is bridged by edges between randomly drawn representative
members. The controlled set is just another group (index 0) and bridges
like any other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class SkeletonGraph:
    n: int
    edges: list          # [(sender, receiver), ...] directed, no dups, no self-loops
    group_of: dict       # agent-id -> group index

    def senders(self):
        return np.array([s for s, _ in self.edges], dtype=np.int64)

    def receivers(self):
        return np.array([r for _, r in self.edges], dtype=np.int64)

    def validate(self):
        seen = set()
        for s, r in self.edges:
            if s == r:
                raise ConfigError("self-loop in skeleton")
            if (s, r) in seen:
                raise ConfigError("duplicate directed edge")
            if not (0 <= s < self.n and 0 <= r < self.n):
                raise ConfigError("edge endpoint out of range")
            seen.add((s, r))
        for u in range(self.n):
            for v in range(self.n):
                if u != v and self.group_of[u] == self.group_of[v]:
                    if (u, v) not in seen:
                        raise ConfigError("missing intra-group edge")

    def is_weakly_connected(self):
        if self.n <= 1:
            return True
        adj = {i: set() for i in range(self.n)}
        for s, r in self.edges:
            adj[s].add(r)
            adj[r].add(s)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n


def _groups_from_partition(group_of):
    groups = {}
    for agent, g in group_of.items():
        groups.setdefault(g, []).append(agent)
    for g in groups:
        groups[g] = sorted(groups[g])
    return groups


def build_skeleton(group_of, r, rng):
    """Complete intra-group digraphs plus representative cross-group links.

    For each unordered group pair, min(r, group size) representatives are
    drawn without replacement from each side and all cross pairs are linked
    in both directions. Deterministic given the rng state.
    """
    if r < 1:
        raise ConfigError("representatives per group must be >= 1")
    groups = _groups_from_partition(group_of)
    for g, members in groups.items():
        if not members:
            raise ConfigError(f"empty group: {g}")
    n = len(group_of)
    if sorted(group_of) != list(range(n)):
        raise ConfigError("agent ids must be 0..n-1")

    edges = []
    for members in groups.values():
        for u in members:
            for v in members:
                if u != v:
                    edges.append((u, v))

    gids = sorted(groups)
    for i, ga in enumerate(gids):
        for gb in gids[i + 1:]:
            a = groups[ga]
            b = groups[gb]
            reps_a = _draw(a, min(r, len(a)), rng)
            reps_b = _draw(b, min(r, len(b)), rng)
            for u in reps_a:
                for v in reps_b:
                    edges.append((u, v))
                    edges.append((v, u))
    return SkeletonGraph(n=n, edges=edges, group_of=dict(group_of))


def _draw(members, k, rng):
    idx = rng.choice(len(members), size=k, replace=False)
    return [members[int(i)] for i in idx]


def build_full_graph(n, group_of=None):
    """Complete digraph on n nodes (the no-skeleton ablation)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    edges = [(u, v) for u in range(n) for v in range(n) if u != v]
    if group_of is None:
        group_of = {i: 0 for i in range(n)}
    return SkeletonGraph(n=n, edges=edges, group_of=dict(group_of))


def edge_count_oracle(sizes, r):
    """Closed-form directed-edge count for build_skeleton on given group sizes."""
    sizes = list(sizes)
    total = sum(s * (s - 1) for s in sizes)
    for i in range(len(sizes)):
        for j in range(i + 1, len(sizes)):
            total += 2 * min(r, sizes[i]) * min(r, sizes[j])
    return total


def serialize(graph: SkeletonGraph) -> str:
    lines = [f"n {graph.n}"]
    lines.append("groups " + " ".join(f"{a}:{graph.group_of[a]}" for a in sorted(graph.group_of)))
    for s, r in graph.edges:
        lines.append(f"{s} {r}")
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> SkeletonGraph:
    lines = [ln for ln in text.strip().splitlines() if ln]
    n = int(lines[0].split()[1])
    group_of = {}
    for tok in lines[1].split()[1:]:
        a, g = tok.split(":")
        group_of[int(a)] = int(g)
    edges = [tuple(int(x) for x in ln.split()) for ln in lines[2:]]
    return SkeletonGraph(n=n, edges=edges, group_of=group_of)
