"""Multimodal dialogue graph: angular edge weights and the renormalised Laplacian.

Nodes are ordered modality-major: every utterance's audio node, then every
visual node, then every text node (inactive modalities are skipped). All
construction is written with tape ops so gradients reach the node features.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor

MODALITIES = ("a", "v", "t")


@dataclass(frozen=True)
class MultimodalGraph:
    node_features: Tensor
    node_meta: tuple[tuple[int, str], ...]
    adjacency: Tensor
    laplacian: Tensor
    modalities: tuple[str, ...]
    num_utterances: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_meta)

    def block(self, modality: str) -> slice:
        k = self.modalities.index(modality)
        n = self.num_utterances
        return slice(k * n, (k + 1) * n)


def angular_weight(n_i, n_j) -> float:
    """``1 - arccos(cos(n_i, n_j)) / pi``; a zero vector has cosine 0 with anything."""
    a = np.asarray(n_i, dtype=np.float64)
    b = np.asarray(n_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vectors differ in shape: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    sim = 0.0 if na == 0 or nb == 0 else float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return 1.0 - math.acos(sim) / math.pi


def edge_scale(num_utterances: int, modalities: str, gamma: float) -> np.ndarray:
    """Per-pair weight multiplier: 1 for same-modality pairs, gamma for
    same-utterance cross-modality pairs, 0 elsewhere (and on the diagonal)."""
    n, k = num_utterances, len(modalities)
    scale = np.zeros((k * n, k * n))
    eye = np.eye(n)
    for p in range(k):
        for q in range(k):
            blk = scale[p * n : (p + 1) * n, q * n : (q + 1) * n]
            blk[:] = (1.0 - eye) if p == q else gamma * eye
    return scale


def build_graph(
    node_inits: Mapping[str, Tensor | np.ndarray], gamma: float, modalities: str | Sequence[str] | None = None
) -> MultimodalGraph:
    """Graph over the node blocks of ``node_inits`` selected by ``modalities``.

    Block order follows ``node_inits``. Tags are usually ``a``/``v``/``t`` but
    any string works (early fusion uses one fused block).
    """
    if modalities is None:
        mods = tuple(node_inits)
    else:
        wanted = set(modalities) if isinstance(modalities, str) else set(modalities)
        if isinstance(modalities, str) and modalities in node_inits:
            wanted = {modalities}
        mods = tuple(m for m in node_inits if m in wanted)
    if not mods:
        raise ValueError("modality mask selects no modality")
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    missing = [m for m in mods if m not in node_inits]
    if missing:
        raise ValueError(f"no node features for modality {missing}")
    blocks = [nx.as_tensor(node_inits[m]) for m in mods]
    shapes = {b.shape for b in blocks}
    if len(shapes) != 1:
        raise ValueError(f"node feature matrices differ in shape: {sorted(shapes)}")
    n = blocks[0].shape[0]
    if n == 0:
        raise ValueError("graph needs at least one utterance")
    x = nx.concat_rows(blocks) if len(blocks) > 1 else blocks[0]
    scale = edge_scale(n, mods, gamma)
    unit = nx.row_normalize(x)
    cos = nx.gram(unit)
    # off-edge cosines are zeroed first so arccos is never differentiated at +-1 there
    adj = nx.mul(nx.angular_similarity(nx.mul(cos, scale > 0)), scale)
    meta = tuple((i, m) for m in mods for i in range(n))
    return MultimodalGraph(x, meta, adj, renormalized_laplacian(adj), mods, n)


def renormalized_laplacian(adjacency) -> Tensor:
    """``(D + I)^-1/2 (A + I) (D + I)^-1/2`` with D the weighted degree of A."""
    a = nx.as_tensor(adjacency)
    ad = a.data
    if ad.ndim != 2 or ad.shape[0] != ad.shape[1]:
        raise ValueError(f"adjacency must be square, got {ad.shape}")
    if not np.allclose(ad, ad.T, rtol=0.0, atol=1e-12):
        raise ValueError("adjacency is not symmetric")
    if (ad < 0).any():
        raise ValueError("adjacency has negative weights")
    if np.any(np.diag(ad) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    n = ad.shape[0]
    inv_sqrt = nx.power(nx.sum(a, axis=1, keepdims=True) + 1.0, -0.5)
    return nx.mul(nx.mul(inv_sqrt, a + np.eye(n)), nx.transpose(inv_sqrt))


def heatmap_rows(graph: MultimodalGraph, utterance_index: int) -> list[tuple[str, int, float]]:
    """Same-modality adjacency row of one utterance's node, per modality."""
    n = graph.num_utterances
    if not 0 <= utterance_index < n:
        raise IndexError(f"utterance index {utterance_index} out of range for a dialogue of {n} utterances")
    adj = graph.adjacency.data
    rows = []
    for m in graph.modalities:
        blk = graph.block(m)
        row = adj[blk.start + utterance_index, blk]
        rows.extend((m, j, float(w)) for j, w in enumerate(row))
    return rows


def export_adjacency_heatmap(graph: MultimodalGraph, utterance_index: int) -> str:
    """CSV text with header ``modality,utterance_index,weight``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["modality", "utterance_index", "weight"])
    for m, j, w in heatmap_rows(graph, utterance_index):
        writer.writerow([m, j, f"{w:.9g}"])
    return buf.getvalue()
