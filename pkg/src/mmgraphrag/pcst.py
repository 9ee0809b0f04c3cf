"""Prize-collecting Steiner tree refinement of query-relevant components.

Objective of a tree T: sum of node prizes in T minus sum of effective edge
costs in T. Edge prizes are folded into costs as ``max(epsilon, C_e - prize)``.

``solve_pcst`` is exact for components up to ``exact_node_limit`` nodes
(subset enumeration plus a minimum spanning tree per connected subset) and for
tree-shaped components of any size (dynamic programming). Other components
use a deterministic growth heuristic followed by optimal pruning of the grown
tree.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .embedding import Embedder, EmbeddingVector, cosine

_TOL = 1e-9


class PCSTError(ValueError):
    pass


@dataclass(frozen=True)
class PCSTConfig:
    k: int = 5
    edge_cost: float = 0.5
    epsilon: float = 0.01
    exact_node_limit: int = 12

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.edge_cost > 0:
            raise ValueError("edge_cost must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    def to_dict(self) -> dict:
        return {"k": self.k, "edge_cost": self.edge_cost, "epsilon": self.epsilon, "exact_node_limit": self.exact_node_limit}


@dataclass(frozen=True)
class PrizedEdge:
    edge_id: str
    src: str
    dst: str
    base_cost: float
    prize: float = 0.0


@dataclass(frozen=True)
class PrizedGraph:
    """Undirected graph with non-negative node and edge prizes."""

    node_prizes: Mapping[str, float]
    edges: tuple[PrizedEdge, ...]
    epsilon: float = 0.01
    node_relevance: Mapping[str, float] | None = None
    edge_relevance: Mapping[str, float] | None = None

    def __post_init__(self):
        for node_id, prize in self.node_prizes.items():
            if not math.isfinite(prize) or prize < 0:
                raise PCSTError(f"node {node_id!r}: prize must be finite and >= 0")
        for e in self.edges:
            if e.src not in self.node_prizes or e.dst not in self.node_prizes:
                raise PCSTError(f"edge {e.edge_id!r} has an endpoint outside the graph")
            if not e.base_cost > 0 or not math.isfinite(e.prize) or e.prize < 0:
                raise PCSTError(f"edge {e.edge_id!r}: base cost must be > 0 and prize finite, >= 0")

    def cost(self, edge: PrizedEdge) -> float:
        return max(self.epsilon, edge.base_cost - edge.prize)


@dataclass(frozen=True)
class PCSTSolution:
    nodes: tuple[str, ...]
    edges: tuple[str, ...]
    objective: float
    method: str = "exact"


def objective_of(prized: PrizedGraph, nodes: Iterable[str], edge_ids: Iterable[str]) -> float:
    by_id = {e.edge_id: e for e in prized.edges}
    gained = math.fsum(prized.node_prizes[n] for n in sorted(nodes))
    spent = math.fsum(prized.cost(by_id[e]) for e in sorted(edge_ids))
    return gained - spent


def is_tree(nodes: Sequence[str], edges: Sequence[PrizedEdge]) -> bool:
    """True when ``edges`` connect exactly ``nodes`` without a cycle."""
    node_set = set(nodes)
    if not node_set or len(edges) != len(node_set) - 1:
        return False
    parent = {n: n for n in node_set}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        if e.src not in node_set or e.dst not in node_set:
            return False
        a, b = find(e.src), find(e.dst)
        if a == b:
            return False
        parent[a] = b
    return True


def validate_solution(prized: PrizedGraph, solution: PCSTSolution) -> None:
    by_id = {e.edge_id: e for e in prized.edges}
    edges = [by_id[e] for e in solution.edges]
    if len(solution.nodes) == 1 and not edges:
        pass
    elif not is_tree(solution.nodes, edges):
        raise PCSTError("solution edges do not form a tree over the solution nodes")
    if abs(objective_of(prized, solution.nodes, solution.edges) - solution.objective) > 1e-9:
        raise PCSTError("solution objective does not match its nodes and edges")


# -- prizes ----------------------------------------------------------------


def _rank_prizes(relevance: Mapping[str, float], k: int) -> dict[str, float]:
    ranked = sorted(relevance, key=lambda key: (-relevance[key], key))
    return {key: float(k - rank) if rank < k else 0.0 for rank, key in enumerate(ranked)}


def relevance(vector: EmbeddingVector, query_vectors: Sequence[EmbeddingVector]) -> float:
    return max(cosine(vector, q) for q in query_vectors)


def assign_prizes(
    component,
    query_vectors: Sequence[EmbeddingVector],
    embedder: Embedder,
    config: PCSTConfig,
    graph=None,
) -> PrizedGraph:
    """Give the top-k nodes and top-k edges of a component rank-based prizes.

    Node relevance is the best cosine between the node's surface embedding and
    any query entity; edge relevance uses the relation text the same way. The
    node or edge at rank r (0-based, ties by id) among the top k gets prize
    ``k - r``; the rest get nothing. ``component`` is a graph Component and
    ``graph`` the MMGraph it belongs to.
    """
    if not component.node_ids:
        raise PCSTError("component is empty")
    if not query_vectors:
        raise PCSTError("at least one query entity vector is required")
    node_rel = {n: relevance(embedder.embed_text(graph.nodes[n].surface), query_vectors) for n in component.node_ids}
    edge_rel = {e: relevance(embedder.embed_text(graph.edges[e].relation), query_vectors) for e in component.edge_ids}
    node_prizes = _rank_prizes(node_rel, config.k)
    edge_prizes = _rank_prizes(edge_rel, config.k) if edge_rel else {}
    edges = tuple(
        PrizedEdge(e, graph.edges[e].src, graph.edges[e].dst, config.edge_cost, edge_prizes[e]) for e in component.edge_ids
    )
    return PrizedGraph(node_prizes, edges, config.epsilon, node_rel, edge_rel)


# -- solving ---------------------------------------------------------------


def _solution_key(objective: float, nodes: Sequence[str]):
    return (-round(objective, 9), len(nodes), tuple(sorted(nodes)))


def _simple_edges(prized: PrizedGraph) -> dict[tuple[str, str], PrizedEdge]:
    """Cheapest edge per unordered node pair; self-loops dropped."""
    best: dict[tuple[str, str], PrizedEdge] = {}
    for e in prized.edges:
        if e.src == e.dst:
            continue
        pair = (min(e.src, e.dst), max(e.src, e.dst))
        cur = best.get(pair)
        if cur is None or (prized.cost(e), e.edge_id) < (prized.cost(cur), cur.edge_id):
            best[pair] = e
    return best


def _mst(prized: PrizedGraph, nodes: Sequence[str], pairs: Sequence[PrizedEdge]) -> list[PrizedEdge] | None:
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen = []
    for e in pairs:
        if e.src in parent and e.dst in parent:
            a, b = find(e.src), find(e.dst)
            if a != b:
                parent[a] = b
                chosen.append(e)
    return chosen if len(chosen) == len(nodes) - 1 else None


def solve_pcst_exact(prized: PrizedGraph, config: PCSTConfig | None = None) -> PCSTSolution:
    """Global optimum by enumerating every connected node subset.

    For a fixed node set the cheapest tree is its minimum spanning tree, so the
    optimum over subtrees equals the optimum over connected subsets.
    """
    config = config or PCSTConfig()
    nodes = sorted(prized.node_prizes)
    if not nodes:
        raise PCSTError("empty graph")
    if len(nodes) > config.exact_node_limit:
        raise PCSTError(f"{len(nodes)} nodes exceed exact_node_limit={config.exact_node_limit}")
    pairs = sorted(_simple_edges(prized).values(), key=lambda e: (prized.cost(e), e.edge_id))
    index = {n: i for i, n in enumerate(nodes)}
    adjacency = [0] * len(nodes)
    for e in pairs:
        adjacency[index[e.src]] |= 1 << index[e.dst]
        adjacency[index[e.dst]] |= 1 << index[e.src]

    best_key, best = None, None
    for mask in range(1, 1 << len(nodes)):
        # connectivity by flood fill inside the mask
        start = mask & -mask
        seen = start
        frontier = start
        while frontier:
            bit = frontier & -frontier
            frontier ^= bit
            grow = adjacency[bit.bit_length() - 1] & mask & ~seen
            seen |= grow
            frontier |= grow
        if seen != mask:
            continue
        members = [nodes[i] for i in range(len(nodes)) if mask >> i & 1]
        tree = _mst(prized, members, pairs)
        edge_ids = tuple(sorted(e.edge_id for e in tree))
        value = objective_of(prized, members, edge_ids)
        key = _solution_key(value, members)
        if best_key is None or key < best_key:
            best_key, best = key, (tuple(members), edge_ids, value)
    return PCSTSolution(best[0], best[1], best[2], "exact")


def _adjacency(pairs: Iterable[PrizedEdge]) -> dict[str, list[tuple[str, PrizedEdge]]]:
    adj: dict[str, list[tuple[str, PrizedEdge]]] = {}
    for e in pairs:
        adj.setdefault(e.src, []).append((e.dst, e))
        adj.setdefault(e.dst, []).append((e.src, e))
    for neighbours in adj.values():
        neighbours.sort(key=lambda item: (item[0], item[1].edge_id))
    return adj


def _best_subtree(prized: PrizedGraph, tree_nodes: Sequence[str], tree_edges: Sequence[PrizedEdge]) -> tuple[list[str], list[str]]:
    """Optimal connected subtree of a tree (strong pruning).

    ``gain(u) = prize(u) + sum(max(0, gain(c) - cost(u, c)))`` over children in
    a rooted orientation; the best subtree is rooted at the node maximizing the
    gain. Zero-gain branches are dropped, which favours fewer nodes.
    """
    adj = _adjacency(tree_edges)
    root = min(tree_nodes)
    order, parent, parent_edge = [root], {root: None}, {}
    for u in order:
        for v, e in adj.get(u, []):
            if v not in parent:
                parent[v] = u
                parent_edge[v] = e
                order.append(v)
    gain: dict[str, float] = {}
    keep: dict[str, list[str]] = {}
    for u in reversed(order):
        total = prized.node_prizes[u]
        kept = []
        for v, e in adj.get(u, []):
            if parent.get(v) == u and parent_edge[v] is e:
                contribution = gain[v] - prized.cost(e)
                if contribution > _TOL:
                    total += contribution
                    kept.append(v)
        gain[u] = total
        keep[u] = kept

    def collect(top: str):
        nodes, edges, stack = [], [], [top]
        while stack:
            u = stack.pop()
            nodes.append(u)
            for v in keep[u]:
                edges.append(parent_edge[v].edge_id)
                stack.append(v)
        return nodes, edges

    best_key, best = None, None
    for u in order:
        nodes, edges = collect(u)
        key = _solution_key(objective_of(prized, nodes, edges), nodes)
        if best_key is None or key < best_key:
            best_key, best = key, (nodes, edges)
    return best


def _grow(prized: PrizedGraph, adj, root: str) -> tuple[list[str], list[PrizedEdge]]:
    """Attach the best-gain shortest path to an outside prized node until no path pays off."""
    in_tree = {root}
    tree_edges: list[PrizedEdge] = []
    prized_nodes = {n for n, p in prized.node_prizes.items() if p > 0}
    while True:
        dist = {n: 0.0 for n in in_tree}
        via: dict[str, tuple[str, PrizedEdge]] = {}
        heap = [(0.0, n) for n in sorted(in_tree)]
        heapq.heapify(heap)
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for v, e in adj.get(u, []):
                nd = d + prized.cost(e)
                if v not in dist or nd < dist[v] - _TOL:
                    dist[v] = nd
                    via[v] = (u, e)
                    heapq.heappush(heap, (nd, v))
        best = None
        for target in sorted(prized_nodes - in_tree):
            if target not in dist:
                continue
            path_nodes, path_edges, cur = [], [], target
            while cur not in in_tree:
                path_nodes.append(cur)
                prev, e = via[cur]
                path_edges.append(e)
                cur = prev
            gain = math.fsum(prized.node_prizes[n] for n in path_nodes) - math.fsum(prized.cost(e) for e in path_edges)
            if gain > _TOL and (best is None or gain > best[0] + _TOL):
                best = (gain, path_nodes, path_edges)
        if best is None:
            return sorted(in_tree), tree_edges
        in_tree.update(best[1])
        tree_edges.extend(best[2])


def solve_pcst_heuristic(prized: PrizedGraph) -> PCSTSolution:
    """Grow from each prized node in turn, prune optimally, keep the best tree."""
    nodes = sorted(prized.node_prizes)
    if not nodes:
        raise PCSTError("empty graph")
    adj = _adjacency(_simple_edges(prized).values())
    roots = sorted((n for n in nodes if prized.node_prizes[n] > 0), key=lambda n: (-prized.node_prizes[n], n)) or [nodes[0]]
    best_key, best = None, None
    for root in roots:
        grown_nodes, grown_edges = _grow(prized, adj, root)
        sub_nodes, sub_edges = _best_subtree(prized, grown_nodes, grown_edges)
        value = objective_of(prized, sub_nodes, sub_edges)
        key = _solution_key(value, sub_nodes)
        if best_key is None or key < best_key:
            best_key, best = key, PCSTSolution(tuple(sorted(sub_nodes)), tuple(sorted(sub_edges)), value, "heuristic")
    return best


def _tree_shaped(prized: PrizedGraph) -> list[PrizedEdge] | None:
    pairs = list(_simple_edges(prized).values())
    nodes = list(prized.node_prizes)
    return pairs if (len(nodes) == 1 or is_tree(nodes, pairs)) else None


def solve_pcst(prized: PrizedGraph, config: PCSTConfig | None = None) -> PCSTSolution:
    """Best prize-collecting subtree of a connected prized graph."""
    config = config or PCSTConfig()
    n = len(prized.node_prizes)
    if n == 0:
        raise PCSTError("empty graph")
    if n <= config.exact_node_limit:
        return solve_pcst_exact(prized, config)
    tree = _tree_shaped(prized)
    if tree is not None:
        nodes, edges = _best_subtree(prized, sorted(prized.node_prizes), tree)
        return PCSTSolution(tuple(sorted(nodes)), tuple(sorted(edges)), objective_of(prized, nodes, edges), "tree-dp")
    return solve_pcst_heuristic(prized)
