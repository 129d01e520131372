"""Per-modality utterance encoders and the speaker embedding."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor

# kinds drive initialisation in model.init_params
WEIGHT, BIAS, LSTM_BIAS, ONES = "weight", "bias", "lstm_bias", "ones"


def encoder_param_shapes(
    modalities: str, dims: Mapping[str, int], d_h: int, d_s: int, max_speakers: int, speaker_embedding: bool
) -> dict[str, tuple[tuple[int, ...], str]]:
    shapes: dict[str, tuple[tuple[int, ...], str]] = {}
    for m in modalities:
        if m == "t":
            half = d_h // 2
            for direction in ("fwd", "bwd"):
                shapes[f"enc.t.{direction}.wx"] = ((dims["t"], 4 * half), WEIGHT)
                shapes[f"enc.t.{direction}.wh"] = ((half, 4 * half), WEIGHT)
                shapes[f"enc.t.{direction}.b"] = ((4 * half,), LSTM_BIAS)
        else:
            shapes[f"enc.{m}.w"] = ((dims[m], d_h), WEIGHT)
            shapes[f"enc.{m}.b"] = ((d_h,), BIAS)
    if speaker_embedding:
        shapes["spk.table"] = ((max_speakers, d_s), WEIGHT)
        shapes["spk.b"] = ((d_s,), BIAS)
        shapes["spk.ln.gain"] = ((d_s,), ONES)
    shapes["spk.ln.bias"] = ((d_s,), BIAS)
    return shapes


def encode_text(x, params: Mapping[str, Tensor]) -> Tensor:
    """BiLSTM over the dialogue's utterance sequence; row i = [forward_i, backward_i]."""
    x = nx.as_tensor(x)
    if x.shape[0] == 0:
        raise ValueError("encode_text needs a non-empty sequence")
    fwd = nx.lstm(x, params["enc.t.fwd.wx"], params["enc.t.fwd.wh"], params["enc.t.fwd.b"])
    bwd = nx.lstm(x, params["enc.t.bwd.wx"], params["enc.t.bwd.wh"], params["enc.t.bwd.b"], reverse=True)
    return nx.concat_cols([fwd, bwd])


def encode_affine(x, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with no activation; a single vector comes back as a 1-row matrix."""
    if not isinstance(x, Tensor):
        x = Tensor(np.atleast_2d(x))
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"feature dim {x.shape[1]} does not match encoder input dim {w.shape[0]}")
    return x @ w + b


def encode_audio(x, params: Mapping[str, Tensor]) -> Tensor:
    return encode_affine(x, params["enc.a.w"], params["enc.a.b"])


def encode_visual(x, params: Mapping[str, Tensor]) -> Tensor:
    return encode_affine(x, params["enc.v.w"], params["enc.v.b"])


def speaker_embed(speakers, params: Mapping[str, Tensor], max_speakers: int) -> Tensor:
    """Layer-normalised table lookup per local speaker index, one row per entry.

    Without ``spk.table`` in ``params`` (embedding disabled) every row is the
    layer-norm bias, so the output carries no speaker information.
    """
    speakers = np.atleast_1d(np.asarray(speakers, dtype=np.int64))
    if speakers.size and (speakers.min() < 0 or speakers.max() >= max_speakers):
        raise ValueError(f"speaker index out of range [0, {max_speakers})")
    shift = params["spk.ln.bias"]
    if "spk.table" not in params:
        return nx.add(np.zeros((len(speakers), shift.shape[0])), shift)
    raw = nx.matmul(nx.one_hot(speakers, max_speakers), params["spk.table"]) + params["spk.b"]
    return nx.layer_norm(raw, params["spk.ln.gain"], shift)


_ENCODERS = {"a": encode_audio, "v": encode_visual, "t": encode_text}


def encode_dialogue(
    dialogue,
    params: Mapping[str, Tensor],
    modalities: str,
    max_speakers: int,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[dict[str, Tensor], Tensor]:
    """Encoded modality features (dropout applied in training) and speaker rows."""
    feats = {}
    for m in modalities:
        h = _ENCODERS[m](dialogue.features(m), params)
        feats[m] = nx.dropout(h, dropout, training, rng)
    return feats, speaker_embed(dialogue.speakers, params, max_speakers)


def build_node_inits(
    dialogue,
    params: Mapping[str, Tensor],
    modalities: str,
    max_speakers: int,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> dict[str, Tensor]:
    """``[h_m, S]`` per active modality, each N x (d_h + d_s)."""
    feats, spk = encode_dialogue(dialogue, params, modalities, max_speakers, dropout, training, rng)
    return {m: nx.concat_cols([feats[m], spk]) for m in modalities}
