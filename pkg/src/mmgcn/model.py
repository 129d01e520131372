"""Deep spectral GCN with initial residual and identity mapping, the emotion
classifier, the training losses, and the full forward pass over a dialogue."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .encoders import BIAS, LSTM_BIAS, ONES, WEIGHT, build_node_inits, encoder_param_shapes
from .graph import MultimodalGraph, build_graph
from .numerics import Tensor
from .rng import param_stream

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """A run config bound to corpus-level facts: feature dims, classes, parties."""

    config: RunConfig
    dims: Mapping[str, int]
    num_classes: int

    @classmethod
    def for_corpus(cls, config: RunConfig, corpus) -> "ModelSpec":
        m = config.max_speakers if config.max_speakers is not None else corpus.max_speakers
        if corpus.max_speakers > m:
            raise ValueError(f"corpus allows {corpus.max_speakers} speakers but the model is configured for {m}")
        return cls(config.replace(max_speakers=m), dict(corpus.dims), corpus.num_classes)

    @property
    def max_speakers(self) -> int:
        return self.config.max_speakers

    @property
    def modalities(self) -> str:
        return self.config.modalities

    @property
    def node_dim(self) -> int:
        return self.config.d_h + self.config.d_s

    @property
    def fusion(self) -> str:
        return self.config.fusion


@dataclass
class ForwardTrace:
    hidden: dict[str, list[Tensor]]
    g: Tensor
    e: Tensor
    logits: Tensor
    probs: Tensor
    graphs: dict[str, MultimodalGraph] = field(default_factory=dict)

    def predictions(self) -> np.ndarray:
        return self.probs.data.argmax(axis=1)


# --------------------------------------------------------------------------
# parameters


def classifier_param_shapes(in_dim: int, d_mlp: int, num_classes: int) -> dict:
    return {
        "clf.w1": ((in_dim, d_mlp), WEIGHT),
        "clf.b1": ((d_mlp,), BIAS),
        "clf.w2": ((d_mlp, num_classes), WEIGHT),
        "clf.b2": ((num_classes,), BIAS),
    }


def gcn_param_shapes(prefix: str, num_layers: int, dim: int) -> dict:
    return {f"{prefix}.{l}.w": ((dim, dim), WEIGHT) for l in range(num_layers)}


def param_shapes(spec: ModelSpec) -> dict[str, tuple[tuple[int, ...], str]]:
    cfg = spec.config
    shapes = encoder_param_shapes(cfg.modalities, spec.dims, cfg.d_h, cfg.d_s, spec.max_speakers, cfg.speaker_embedding)
    if cfg.fusion == "mmgcn":
        d = spec.node_dim
        shapes.update(gcn_param_shapes("gcn", cfg.num_layers, d))
        shapes.update(classifier_param_shapes(2 * len(cfg.modalities) * d, cfg.d_mlp or d, spec.num_classes))
    else:
        from .fusion import variant_param_shapes

        shapes.update(variant_param_shapes(spec))
    return shapes


def init_params(spec: ModelSpec, seed: int | None = None) -> dict[str, Tensor]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, LSTM forget bias 1, unit gains.

    Each tensor draws from a stream keyed by its name, so variants sharing a
    parameter name start from the same values.
    """
    seed = spec.config.seed if seed is None else seed
    params = {}
    for name, (shape, kind) in param_shapes(spec).items():
        if kind == WEIGHT:
            bound = 1.0 / math.sqrt(shape[0])
            data = param_stream(seed, name).uniform(-bound, bound, size=shape)
        elif kind == ONES:
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
            if kind == LSTM_BIAS:
                hid = shape[0] // 4
                data[hid : 2 * hid] = 1.0
        params[name] = nx.parameter(data, name=name)
    return params


# --------------------------------------------------------------------------
# graph convolution


def beta_schedule(layer: int, eta: float) -> float:
    """``ln(eta / layer + 1)`` for 1-based layer index."""
    if layer < 1:
        raise ValueError(f"layer index must be >= 1, got {layer}")
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    return math.log(eta / layer + 1.0)


def gcn_layer(h: Tensor, h0: Tensor, p: Tensor, w: Tensor, alpha: float, beta: float) -> Tensor:
    """``relu(((1-alpha) P H + alpha H0) ((1-beta) I + beta W))``."""
    h, h0, p, w = (nx.as_tensor(t) for t in (h, h0, p, w))
    if h.shape != h0.shape or p.shape != (h.shape[0], h.shape[0]) or w.shape != (h.shape[1], h.shape[1]):
        raise ValueError(f"gcn_layer shape mismatch: H {h.shape}, H0 {h0.shape}, P {p.shape}, W {w.shape}")
    support = (1.0 - alpha) * (p @ h) + alpha * h0
    mixing = (1.0 - beta) * np.eye(w.shape[0]) + beta * w
    return nx.relu(support @ mixing)


def gcn_stack(h0: Tensor, p: Tensor, weights: Sequence[Tensor], alpha: float, eta: float) -> list[Tensor]:
    """H0 followed by the output of every layer; layer l (0-based) uses beta(l + 1)."""
    hs = [h0]
    for l, w in enumerate(weights):
        hs.append(gcn_layer(hs[-1], h0, p, w, alpha, beta_schedule(l + 1, eta)))
    return hs


def classify(e: Tensor, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    hidden = nx.relu(e @ params["clf.w1"] + params["clf.b1"])
    logits = hidden @ params["clf.w2"] + params["clf.b2"]
    return logits, nx.softmax_rows(logits)


def mmgcn_forward(
    graph: MultimodalGraph,
    params: Mapping[str, Tensor],
    spec: ModelSpec,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    cfg = spec.config
    n = graph.num_utterances
    h0 = nx.dropout(graph.node_features, cfg.dropout, training, rng)
    weights = [params[f"gcn.{l}.w"] for l in range(cfg.num_layers)]
    hs = gcn_stack(h0, graph.laplacian, weights, cfg.alpha, cfg.eta)
    blocks = range(len(graph.modalities))
    inits = [nx.slice_rows(graph.node_features, k * n, (k + 1) * n) for k in blocks]
    outs = [nx.slice_rows(hs[-1], k * n, (k + 1) * n) for k in blocks]
    g = nx.concat_cols(outs)
    e = nx.concat_cols(inits + outs)
    logits, probs = classify(e, params)
    return ForwardTrace({"".join(graph.modalities): hs}, g, e, logits, probs, {"".join(graph.modalities): graph})


def forward(
    spec: ModelSpec,
    dialogue,
    params: Mapping[str, Tensor],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    """Encode, build the graph(s), propagate and classify one dialogue."""
    cfg = spec.config
    if cfg.fusion != "mmgcn":
        from .fusion import variant_forward

        return variant_forward(spec, dialogue, params, training, rng)
    inits = build_node_inits(dialogue, params, cfg.modalities, spec.max_speakers, cfg.dropout, training, rng)
    graph = build_graph(inits, cfg.gamma, cfg.modalities)
    return mmgcn_forward(graph, params, spec, training, rng)


# --------------------------------------------------------------------------
# losses


def l2_penalty(params: Mapping[str, Tensor], lam: float, mode: str = "squared") -> Tensor:
    """``lam * sum ||theta||^2`` (``squared``) or ``lam * sqrt(sum ||theta||^2)`` (``norm``)."""
    total = None
    for p in params.values():
        sq = nx.sum(nx.mul(p, p))
        total = sq if total is None else total + sq
    if total is None or lam == 0.0:
        return Tensor(0.0)
    if mode == "norm":
        return lam * nx.power(total, 0.5)
    if mode != "squared":
        raise ValueError(f"unknown l2 mode {mode!r}")
    return lam * total


def cross_entropy(probs: Tensor, labels: Sequence[int]) -> Tensor:
    picked = nx.pick(probs, labels)
    return -nx.mean(nx.log(picked, floor=PROB_FLOOR))


def loss_ce_l2(
    probs: Tensor, labels: Sequence[int], params: Mapping[str, Tensor], lam: float, mode: str = "squared"
) -> Tensor:
    return cross_entropy(probs, labels) + l2_penalty(params, lam, mode)


def loss_focal(probs: Tensor, labels: Sequence[int], class_weights: Sequence[float] | None, gamma_f: float) -> Tensor:
    """Mean of ``-w_y (1 - p_y)^gamma_f log p_y``."""
    if gamma_f < 0:
        raise ValueError("focal gamma must be >= 0")
    labels = np.asarray(labels, dtype=np.int64)
    picked = nx.pick(probs, labels)
    nll = -nx.log(picked, floor=PROB_FLOOR)
    if gamma_f > 0:
        nll = nx.mul(nx.power(1.0 - picked, gamma_f), nll)
    if class_weights is not None:
        nll = nx.mul(nll, np.asarray(class_weights, dtype=np.float64)[labels])
    return nx.mean(nll)


def inverse_frequency_weights(labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Per-class weights proportional to 1/count (unseen classes count as 1), mean 1."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(float)
    w = 1.0 / np.maximum(counts, 1.0)
    return w / w.mean()
