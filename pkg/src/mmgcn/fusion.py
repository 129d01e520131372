"""Comparison fusion strategies on the same encoders, GCN and training loop.

* ``early``: modality encodings and the speaker embedding are concatenated
  into one node per utterance; one N-node graph.
* ``late``: one N-node graph and GCN per modality; outputs concatenated.
* ``gated``: the late-fusion GCN outputs combined pairwise by a sigmoid gate.
"""
from __future__ import annotations

from itertools import combinations
from typing import Mapping

import numpy as np

from . import numerics as nx
from .encoders import WEIGHT, encode_dialogue
from .graph import build_graph
from .model import ForwardTrace, ModelSpec, classifier_param_shapes, classify, gcn_param_shapes, gcn_stack
from .numerics import Tensor


def gate_pairs(modalities: str) -> list[tuple[str, str]]:
    """(a, v), (a, t), (v, t) restricted to the active modalities."""
    return list(combinations(modalities, 2))


def variant_param_shapes(spec: ModelSpec) -> dict:
    cfg = spec.config
    k = len(cfg.modalities)
    d = spec.node_dim
    shapes: dict = {}
    if cfg.fusion == "early":
        d_node = k * cfg.d_h + cfg.d_s
        shapes.update(gcn_param_shapes("gcn", cfg.num_layers, d_node))
        shapes.update(classifier_param_shapes(2 * d_node, cfg.d_mlp or d_node, spec.num_classes))
    elif cfg.fusion == "late":
        for m in cfg.modalities:
            shapes.update(gcn_param_shapes(f"gcn.{m}", cfg.num_layers, d))
        shapes.update(classifier_param_shapes(2 * k * d, cfg.d_mlp or d, spec.num_classes))
    elif cfg.fusion == "gated":
        for m in cfg.modalities:
            shapes.update(gcn_param_shapes(f"gcn.{m}", cfg.num_layers, d))
        pairs = gate_pairs(cfg.modalities)
        for j, k_ in pairs:
            for part in ("wj", "wk", "wz"):
                shapes[f"gate.{j}{k_}.{part}"] = ((d, d), WEIGHT)
        shapes.update(classifier_param_shapes(len(pairs) * d, cfg.d_mlp or d, spec.num_classes))
    else:
        raise ValueError(f"unknown fusion variant {cfg.fusion!r}")
    return shapes


def gated_attention_fuse(h: Mapping[str, Tensor], params: Mapping[str, Tensor], pairs=None) -> Tensor:
    """Pairwise gated combination, concatenated over pairs.

    For the pair (j, k): ``r_j = tanh(h_j W_j)``, ``r_k = tanh(h_k W_k)``,
    ``z = sigmoid(h_j W_z)`` and the pair vector is ``z * r_j + (1 - z) * r_k``.
    """
    pairs = gate_pairs("".join(h)) if pairs is None else pairs
    fused = []
    for j, k in pairs:
        hj, hk = nx.as_tensor(h[j]), nx.as_tensor(h[k])
        if hj.shape != hk.shape:
            raise ValueError(f"gated fusion dim mismatch: {j} {hj.shape} vs {k} {hk.shape}")
        tag = f"gate.{j}{k}"
        rj = nx.tanh(hj @ params[f"{tag}.wj"])
        rk = nx.tanh(hk @ params[f"{tag}.wk"])
        z = nx.sigmoid(hj @ params[f"{tag}.wz"])
        fused.append(z * rj + (1.0 - z) * rk)
    return nx.concat_cols(fused)


def _branch(x: Tensor, tag: str, prefix: str, params, spec: ModelSpec, training, rng):
    cfg = spec.config
    graph = build_graph({tag: x}, cfg.gamma)
    h0 = nx.dropout(x, cfg.dropout, training, rng)
    weights = [params[f"{prefix}.{l}.w"] for l in range(cfg.num_layers)]
    return graph, gcn_stack(h0, graph.laplacian, weights, cfg.alpha, cfg.eta)


def early_fusion_forward(spec, dialogue, params, training=False, rng=None) -> ForwardTrace:
    cfg = spec.config
    feats, spk = encode_dialogue(dialogue, params, cfg.modalities, spec.max_speakers, cfg.dropout, training, rng)
    x = nx.concat_cols([feats[m] for m in cfg.modalities] + [spk])
    graph, hs = _branch(x, cfg.modalities, "gcn", params, spec, training, rng)
    e = nx.concat_cols([x, hs[-1]])
    logits, probs = classify(e, params)
    return ForwardTrace({cfg.modalities: hs}, hs[-1], e, logits, probs, {cfg.modalities: graph})


def _late_branches(spec, dialogue, params, training, rng):
    cfg = spec.config
    feats, spk = encode_dialogue(dialogue, params, cfg.modalities, spec.max_speakers, cfg.dropout, training, rng)
    inits, hidden, graphs = {}, {}, {}
    for m in cfg.modalities:
        inits[m] = nx.concat_cols([feats[m], spk])
        graphs[m], hidden[m] = _branch(inits[m], m, f"gcn.{m}", params, spec, training, rng)
    return inits, hidden, graphs


def late_fusion_forward(spec, dialogue, params, training=False, rng=None) -> ForwardTrace:
    mods = spec.config.modalities
    inits, hidden, graphs = _late_branches(spec, dialogue, params, training, rng)
    g = nx.concat_cols([hidden[m][-1] for m in mods])
    e = nx.concat_cols([inits[m] for m in mods] + [hidden[m][-1] for m in mods])
    logits, probs = classify(e, params)
    return ForwardTrace(hidden, g, e, logits, probs, graphs)


def gated_fusion_forward(spec, dialogue, params, training=False, rng=None) -> ForwardTrace:
    mods = spec.config.modalities
    _, hidden, graphs = _late_branches(spec, dialogue, params, training, rng)
    g = nx.concat_cols([hidden[m][-1] for m in mods])
    e = gated_attention_fuse({m: hidden[m][-1] for m in mods}, params)
    logits, probs = classify(e, params)
    return ForwardTrace(hidden, g, e, logits, probs, graphs)


VARIANTS = {
    "early": early_fusion_forward,
    "late": late_fusion_forward,
    "gated": gated_fusion_forward,
}


def variant_forward(spec: ModelSpec, dialogue, params, training: bool = False, rng: np.random.Generator | None = None):
    try:
        fn = VARIANTS[spec.fusion]
    except KeyError:
        raise ValueError(f"unknown fusion variant {spec.fusion!r}") from None
    return fn(spec, dialogue, params, training, rng)
