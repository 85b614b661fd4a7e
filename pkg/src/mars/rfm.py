"""Relational message passing over agent-skeleton graphs.

One round updates every edge from (edge, receiver, sender, global), sums
incoming updated edges into each node, updates nodes, then updates the
global feature from summed edges and nodes. Aggregations are elementwise
sums, so empty sets yield zero vectors and node/global outputs are
invariant to edge ordering. Rounds share parameters.

Supports a batch of disjoint graphs in one call: node rows carry a graph
id, edge index arrays point into the stacked node matrix.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .gradcheck import register
from .nets import Mlp, ParameterSet


class RelationalCore:
    def __init__(self, ps: ParameterSet, d_node, d_edge, d_global, hidden, name="rfm"):
        self.d_node = d_node
        self.d_edge = d_edge
        self.d_global = d_global
        self.phi_edge = Mlp(ps, f"{name}.edge", d_edge + 2 * d_node + d_global, [hidden], d_edge)
        self.phi_node = Mlp(ps, f"{name}.node", d_edge + d_node + d_global, [hidden], d_node)
        self.phi_global = Mlp(ps, f"{name}.glob", d_edge + d_node + d_global, [hidden], d_global)

    def edge_update(self, e, v_recv, v_send, u, p):
        return self.phi_edge(ad.concat([e, v_recv, v_send, u], axis=1), p)

    def node_update(self, agg_edges, v, u, p):
        return self.phi_node(ad.concat([agg_edges, v, u], axis=1), p)

    def global_update(self, agg_edges, agg_nodes, u, p):
        return self.phi_global(ad.concat([agg_edges, agg_nodes, u], axis=1), p)

    def message_pass(self, nodes, senders, receivers, p, rounds,
                     n_graphs=1, node_graph=None, edge_graph=None,
                     edges=None, u=None):
        """Run `rounds` full update sweeps; returns (nodes, u, edges).

        nodes: (N, d_node); senders/receivers: flat indices into the node rows;
        node_graph/edge_graph: per-row graph ids when several graphs are stacked.
        Initial edge and global features default to zeros.
        """
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        n_nodes = ad.val(nodes).shape[0]
        senders = np.asarray(senders, dtype=np.int64)
        receivers = np.asarray(receivers, dtype=np.int64)
        if senders.shape != receivers.shape:
            raise ValueError("senders/receivers misaligned")
        if node_graph is None:
            node_graph = np.zeros(n_nodes, dtype=np.int64)
        if edge_graph is None:
            edge_graph = np.zeros(len(senders), dtype=np.int64)
        if edges is None:
            edges = np.zeros((len(senders), self.d_edge))
        if u is None:
            u = np.zeros((n_graphs, self.d_global))

        for _ in range(rounds):
            v_recv = ad.gather_rows(nodes, receivers)
            v_send = ad.gather_rows(nodes, senders)
            u_edge = ad.gather_rows(u, edge_graph)
            edges = self.edge_update(edges, v_recv, v_send, u_edge, p)
            incoming = ad.segment_sum(edges, receivers, n_nodes)
            u_node = ad.gather_rows(u, node_graph)
            nodes = self.node_update(incoming, nodes, u_node, p)
            agg_e = ad.segment_sum(edges, edge_graph, n_graphs)
            agg_v = ad.segment_sum(nodes, node_graph, n_graphs)
            u = self.global_update(agg_e, agg_v, u, p)
        return nodes, u, edges


def _random_core(seed, d_node=5, d_edge=4, d_global=3, hidden=8):
    ps = ParameterSet(seed)
    core = RelationalCore(ps, d_node, d_edge, d_global, hidden)
    return ps, core


@register("rfm_edge")
def _build_edge(seed):
    rng = np.random.default_rng(seed)
    ps, core = _random_core(seed)
    e = rng.normal(size=(3, core.d_edge))
    vr = rng.normal(size=(3, core.d_node))
    vs = rng.normal(size=(3, core.d_node))
    u = rng.normal(size=(3, core.d_global))
    return ps, lambda p: ad.sum_all(ad.square(core.edge_update(e, vr, vs, u, p)))


@register("rfm_node")
def _build_node(seed):
    rng = np.random.default_rng(seed)
    ps, core = _random_core(seed)
    agg = rng.normal(size=(3, core.d_edge))
    v = rng.normal(size=(3, core.d_node))
    u = rng.normal(size=(3, core.d_global))
    return ps, lambda p: ad.sum_all(ad.square(core.node_update(agg, v, u, p)))


@register("rfm_global")
def _build_global(seed):
    rng = np.random.default_rng(seed)
    ps, core = _random_core(seed)
    agg_e = rng.normal(size=(1, core.d_edge))
    agg_v = rng.normal(size=(1, core.d_node))
    u = rng.normal(size=(1, core.d_global))
    return ps, lambda p: ad.sum_all(ad.square(core.global_update(agg_e, agg_v, u, p)))


@register("rfm")
def _build_full(seed):
    rng = np.random.default_rng(seed)
    ps, core = _random_core(seed)
    nodes = rng.normal(size=(4, core.d_node))
    senders = np.array([0, 1, 2, 3, 0])
    receivers = np.array([1, 0, 3, 2, 2])

    def loss_fn(p):
        v, u, e = core.message_pass(nodes, senders, receivers, p, rounds=2)
        return ad.add(ad.sum_all(ad.square(v)),
                      ad.add(ad.sum_all(ad.square(u)), ad.sum_all(ad.square(e))))

    return ps, loss_fn
