"""Multi-relation graph embeddings trained with a margin ranking loss.

Produces the frozen entity vectors that the sequence model consumes. Edges
are scored with a diagonal relation operator, f = sum_i s_i * r_i * d_i, and
training pushes every true edge above sampled corrupted edges by a margin.
The trainer is plain mini-batch SGD with hand-derived gradients; a
finite-difference test covers them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ties.errors import ConfigError, DataError, ParseError, ShapeError, UnknownIdError

Edge = tuple[str, str, str]  # (source_id, relation, dest_id)


class EmbeddingTable:
    """Immutable id -> dense float64 vector map."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ShapeError(
                f"embedding table needs one row per id: {len(ids)} ids, matrix {vectors.shape}")
        if len(set(ids)) != len(ids):
            raise DataError("embedding table ids must be unique")
        self.ids = list(ids)
        self.vectors = vectors
        self.index = {eid: i for i, eid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.index

    def get(self, entity_id: str) -> np.ndarray | None:
        i = self.index.get(entity_id)
        return None if i is None else self.vectors[i]

    def lookup(self, entity_id: str) -> np.ndarray:
        vec = self.get(entity_id)
        if vec is None:
            raise UnknownIdError(f"unknown id {entity_id!r} in embedding table")
        return vec

    def items(self):
        for eid, row in zip(self.ids, self.vectors):
            yield eid, row


@dataclass
class MultiRelationGraph:
    nodes: list[str]
    relations: list[str]
    edges: list[Edge]
    node_index: dict[str, int] = field(init=False)
    relation_index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.node_index = {n: i for i, n in enumerate(self.nodes)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        for s, r, d in self.edges:
            if s not in self.node_index or d not in self.node_index:
                raise DataError(f"edge ({s}, {r}, {d}) references a node outside the graph")
            if r not in self.relation_index:
                raise DataError(f"edge ({s}, {r}, {d}) references unknown relation {r!r}")

    @classmethod
    def from_edges(cls, edges: Iterable[Edge]) -> "MultiRelationGraph":
        edges = list(edges)
        if not edges:
            raise ConfigError("graph needs at least one edge")
        nodes = sorted({s for s, _, _ in edges} | {d for _, _, d in edges})
        relations = sorted({r for _, r, _ in edges})
        return cls(nodes=nodes, relations=relations, edges=edges)


@dataclass
class GraphEmbeddings:
    node_table: EmbeddingTable
    relation_table: EmbeddingTable
    dim: int


@dataclass(frozen=True)
class NegativeSampleConfig:
    negatives_per_edge: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.negatives_per_edge < 1:
            raise ConfigError(
                f"negatives_per_edge must be >= 1, got {self.negatives_per_edge}")


def score_edge(theta_s: np.ndarray, theta_r: np.ndarray, theta_d: np.ndarray) -> float:
    """Diagonal-operator score: sum_i s_i * r_i * d_i."""
    theta_s = np.asarray(theta_s, dtype=np.float64).reshape(-1)
    theta_r = np.asarray(theta_r, dtype=np.float64).reshape(-1)
    theta_d = np.asarray(theta_d, dtype=np.float64).reshape(-1)
    if not (theta_s.shape == theta_r.shape == theta_d.shape):
        raise ShapeError(
            f"score_edge dims differ: {theta_s.shape}, {theta_r.shape}, {theta_d.shape}")
    return float(np.sum(theta_s * theta_r * theta_d))


def margin_loss(pos_score: float, neg_scores: Sequence[float], margin: float) -> float:
    """Hinge pushing the true edge above each corrupted edge by ``margin``."""
    if margin < 0:
        raise ConfigError(f"margin must be >= 0, got {margin}")
    return float(sum(max(n - pos_score + margin, 0.0) for n in neg_scores))


def sample_negatives(edge: Edge, graph: MultiRelationGraph,
                     cfg: NegativeSampleConfig,
                     rng: np.random.Generator | None = None) -> list[Edge]:
    """Corrupt an edge into negatives: half on the source, half on the dest.

    ceil(B/2) source-corrupted then floor(B/2) dest-corrupted edges, with the
    replacement drawn uniformly from all nodes except the original endpoint.
    """
    if len(graph.nodes) < 2:
        raise ConfigError("negative sampling needs at least 2 nodes")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    s, r, d = edge
    n = len(graph.nodes)
    out: list[Edge] = []

    def draw_excluding(skip_index: int) -> str:
        pick = int(rng.integers(n - 1))
        if pick >= skip_index:
            pick += 1
        return graph.nodes[pick]

    n_src = (cfg.negatives_per_edge + 1) // 2
    for _ in range(n_src):
        out.append((draw_excluding(graph.node_index[s]), r, d))
    for _ in range(cfg.negatives_per_edge - n_src):
        out.append((s, r, draw_excluding(graph.node_index[d])))
    return out


def _edge_loss_and_grads(node_vecs: np.ndarray, rel_vecs: np.ndarray,
                         graph: MultiRelationGraph, edge: Edge,
                         negatives: Sequence[Edge], margin: float,
                         node_grad: np.ndarray, rel_grad: np.ndarray) -> float:
    """Accumulate margin-loss gradients for one positive edge into the buffers.

    For each active hinge term (f(neg) - f(pos) + margin > 0) the gradient is
    +df(neg) - df(pos), with df/d(theta_s) = theta_r * theta_d and so on.
    """
    si = graph.node_index[edge[0]]
    ri = graph.relation_index[edge[1]]
    di = graph.node_index[edge[2]]
    vs, vr, vd = node_vecs[si], rel_vecs[ri], node_vecs[di]
    pos = float(np.sum(vs * vr * vd))
    loss = 0.0
    for ns, nr, nd in negatives:
        nsi = graph.node_index[ns]
        ndi = graph.node_index[nd]
        nvs, nvd = node_vecs[nsi], node_vecs[ndi]
        neg = float(np.sum(nvs * vr * nvd))
        term = neg - pos + margin
        if term <= 0.0:
            continue
        loss += term
        node_grad[nsi] += vr * nvd
        node_grad[ndi] += nvs * vr
        rel_grad[ri] += nvs * nvd
        node_grad[si] -= vr * vd
        node_grad[di] -= vs * vr
        rel_grad[ri] -= vs * vd
    return loss


def train_graph(graph: MultiRelationGraph, dim: int, margin: float, lr: float,
                epochs: int, batch_size: int, cfg: NegativeSampleConfig,
                loss_curve: list[float] | None = None) -> GraphEmbeddings:
    """Mini-batch SGD on the margin ranking loss over shuffled edges.

    Embeddings start uniform in +-0.5/sqrt(dim). If ``loss_curve`` is given,
    the mean per-edge loss against a fixed evaluation negative set is appended
    after every epoch. Deterministic for a fixed cfg.rng_seed.
    """
    if not graph.edges:
        raise ConfigError("cannot train on an empty edge list")
    if dim < 1 or epochs < 0 or batch_size < 1 or lr <= 0:
        raise ConfigError(
            f"bad training config: dim={dim} epochs={epochs} batch_size={batch_size} lr={lr}")
    rng = np.random.default_rng(cfg.rng_seed)
    bound = 0.5 / math.sqrt(dim)
    node_vecs = rng.uniform(-bound, bound, size=(len(graph.nodes), dim))
    rel_vecs = rng.uniform(-bound, bound, size=(len(graph.relations), dim))

    eval_negatives = None
    if loss_curve is not None:
        eval_rng = np.random.default_rng(cfg.rng_seed + 1)
        eval_negatives = [sample_negatives(e, graph, cfg, eval_rng) for e in graph.edges]

    n_edges = len(graph.edges)
    for _ in range(epochs):
        order = rng.permutation(n_edges)
        for start in range(0, n_edges, batch_size):
            batch = order[start:start + batch_size]
            node_grad = np.zeros_like(node_vecs)
            rel_grad = np.zeros_like(rel_vecs)
            for edge_i in batch:
                edge = graph.edges[int(edge_i)]
                negs = sample_negatives(edge, graph, cfg, rng)
                _edge_loss_and_grads(node_vecs, rel_vecs, graph, edge, negs,
                                     margin, node_grad, rel_grad)
            node_vecs -= lr * node_grad / len(batch)
            rel_vecs -= lr * rel_grad / len(batch)
        if loss_curve is not None:
            loss_curve.append(
                mean_margin_loss_fixed(node_vecs, rel_vecs, graph, eval_negatives, margin))

    return GraphEmbeddings(
        node_table=EmbeddingTable(graph.nodes, node_vecs),
        relation_table=EmbeddingTable(graph.relations, rel_vecs),
        dim=dim,
    )


def mean_margin_loss_fixed(node_vecs: np.ndarray, rel_vecs: np.ndarray,
                           graph: MultiRelationGraph,
                           negatives_per_edge: Sequence[Sequence[Edge]],
                           margin: float) -> float:
    """Mean margin loss over all edges against a fixed negative sample."""
    total = 0.0
    for edge, negs in zip(graph.edges, negatives_per_edge):
        si = graph.node_index[edge[0]]
        ri = graph.relation_index[edge[1]]
        di = graph.node_index[edge[2]]
        pos = float(np.sum(node_vecs[si] * rel_vecs[ri] * node_vecs[di]))
        neg_scores = [
            float(np.sum(node_vecs[graph.node_index[ns]] * rel_vecs[ri]
                         * node_vecs[graph.node_index[nd]]))
            for ns, _, nd in negs
        ]
        total += margin_loss(pos, neg_scores, margin)
    return total / len(graph.edges)


def mean_margin_loss(emb: GraphEmbeddings, graph: MultiRelationGraph,
                     margin: float, cfg: NegativeSampleConfig) -> float:
    """Mean margin loss over the graph's edges with freshly sampled negatives."""
    rng = np.random.default_rng(cfg.rng_seed)
    negs = [sample_negatives(e, graph, cfg, rng) for e in graph.edges]
    return mean_margin_loss_fixed(emb.node_table.vectors, emb.relation_table.vectors,
                                  graph, negs, margin)


# ---------------------------------------------------------------------------
# file formats


def read_edges(path) -> list[Edge]:
    """Edge list TSV: ``source<TAB>relation<TAB>dest``; '#' lines ignored."""
    edges: list[Edge] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(parts)}",
                    line_number=lineno)
            edges.append((parts[0], parts[1], parts[2]))
    return edges


def write_embedding_table(table: EmbeddingTable, path) -> None:
    """TSV ``id<TAB>v1...vD`` with 17 significant digits; header ``#dim D``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#dim {table.dim}\n")
        for eid, row in table.items():
            fh.write(eid + "\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")


def read_embedding_table(path) -> EmbeddingTable:
    ids: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if lineno == 1:
                parts = line.split()
                if len(parts) != 2 or parts[0] != "#dim":
                    raise ParseError(f"{path}: line 1: expected '#dim D' header",
                                     line_number=1)
                try:
                    dim = int(parts[1])
                except ValueError:
                    raise ParseError(f"{path}: line 1: bad dimension {parts[1]!r}",
                                     line_number=1) from None
                continue
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != dim + 1:
                raise ParseError(
                    f"{path}: line {lineno}: expected {dim + 1} columns, got {len(parts)}",
                    line_number=lineno)
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric embedding value",
                                 line_number=lineno) from None
            ids.append(parts[0])
    if dim is None:
        raise ParseError(f"{path}: empty embedding file", line_number=0)
    return EmbeddingTable(ids, np.array(rows).reshape(len(ids), dim))


def _relations_path(path) -> Path:
    return Path(str(path) + ".relations")


def export_embeddings(emb: GraphEmbeddings, path) -> None:
    """Write the node table to ``path`` and relations to ``path.relations``."""
    write_embedding_table(emb.node_table, path)
    write_embedding_table(emb.relation_table, _relations_path(path))


def import_embeddings(path) -> GraphEmbeddings:
    node_table = read_embedding_table(path)
    relation_table = read_embedding_table(_relations_path(path))
    if node_table.dim != relation_table.dim:
        raise DataError(
            f"node dim {node_table.dim} != relation dim {relation_table.dim} in {path}")
    return GraphEmbeddings(node_table=node_table, relation_table=relation_table,
                           dim=node_table.dim)
