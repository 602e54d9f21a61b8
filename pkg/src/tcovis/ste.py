"""Spatio-temporal enhancement and the minimal reference decoder.

The per-frame pipeline decodes N_v instance queries against encoded frame
queries: one self-attention block over the frame queries, one cross-
attention block, and a feed-forward block, each wrapped in residual +
post layer norm. Prototypes feed a linear classifier (softmax over K+1
classes) and a 3-layer mask head whose embeddings segment the frame by
pixel-wise dot product with the pixel embeddings, through a sigmoid.

Between frames, the enhancement step mats the pixel embeddings with each
slot's predicted mask, average-pools the surviving cells into one spatial
vector per slot, and cross-attends the propagated prototypes to those
vectors. The positional embedding row k is added to both the query and
the key of slot k (shared positional identity); values carry no
positional term. With enhancement disabled, next-frame queries are the
prototypes themselves.

No training happens here: parameters are plain float64 arrays, seeded for
reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np

from .cost import _sigmoid
from .model import PredictionTrack, dump_json
from .rng import stream

LN_EPS = 1e-5


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpatialFeature:
    """Pooled per-instance spatial vector; zero with flag when the mask
    selected no cells."""

    vector: np.ndarray
    empty_flag: bool

    def __post_init__(self):
        object.__setattr__(self, "vector", _frozen(self.vector))
        object.__setattr__(self, "empty_flag", bool(self.empty_flag))


@dataclass(frozen=True)
class AttentionParams:
    """One multi-head attention block with its post-norm parameters."""

    n_heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln_scale: np.ndarray
    ln_shift: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o", "ln_scale", "ln_shift"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        c = self.w_q.shape[0]
        if self.n_heads < 1 or c % self.n_heads != 0:
            raise ValueError(f"n_heads={self.n_heads} must divide C={c}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (c, c):
                raise ValueError(f"{name} must be ({c}, {c})")
        if not all(np.isfinite(getattr(self, n)).all()
                   for n in ("w_q", "w_k", "w_v", "w_o", "ln_scale", "ln_shift")):
            raise ValueError("attention parameters must be finite")


@dataclass(frozen=True)
class MhcaParams:
    """Cross-attention block plus the per-slot positional table shared by
    each slot's query and key."""

    n_heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln_scale: np.ndarray
    ln_shift: np.ndarray
    e_pos: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o", "ln_scale", "ln_shift", "e_pos"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        c = self.w_q.shape[0]
        if self.n_heads < 1 or c % self.n_heads != 0:
            raise ValueError(f"n_heads={self.n_heads} must divide C={c}")
        if self.e_pos.ndim != 2 or self.e_pos.shape[1] != c:
            raise ValueError(f"e_pos must be (n_slots, {c})")

    @property
    def attention(self) -> AttentionParams:
        return AttentionParams(self.n_heads, self.w_q, self.w_k, self.w_v,
                               self.w_o, self.ln_scale, self.ln_shift)


@dataclass(frozen=True)
class FeedForwardParams:
    """Two-layer feed-forward block (hidden width 2C) with post-norm."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln_scale: np.ndarray
    ln_shift: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "ln_scale", "ln_shift"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class RefDecoderParams:
    """Minimal reference decoder: encoder self-attention over frame
    queries, cross-attention of instance queries onto them, feed-forward,
    then classifier and 3-layer mask head off the prototypes."""

    encoder: AttentionParams
    decoder: AttentionParams
    ffn: FeedForwardParams
    mask_head: tuple
    classifier: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "classifier", _frozen(self.classifier))
        layers = tuple((_frozen(w), _frozen(b)) for w, b in self.mask_head)
        object.__setattr__(self, "mask_head", layers)
        if len(layers) != 3:
            raise ValueError("mask head must have exactly 3 layers")


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray,
               eps: float = LN_EPS) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * scale + shift


def _attend(q_in: np.ndarray, k_in: np.ndarray, v_in: np.ndarray,
            params) -> tuple:
    """Scaled dot-product multi-head attention.

    Returns (context, weights) with weights shaped (n_heads, N_q, N_k);
    every weight row sums to 1.
    """
    c = q_in.shape[-1]
    heads = params.n_heads
    dim = c // heads

    def split(x):
        return x.reshape(x.shape[0], heads, dim).transpose(1, 0, 2)

    q = split(q_in @ params.w_q)
    k = split(k_in @ params.w_k)
    v = split(v_in @ params.w_v)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dim)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    context = weights @ v
    merged = context.transpose(1, 0, 2).reshape(q_in.shape[0], c)
    return merged @ params.w_o, weights


def spatial_matting(pixel_embeddings: np.ndarray, mask_probs: np.ndarray,
                    threshold: float = 0.5) -> np.ndarray:
    """Zero out pixel-embedding columns wherever the soft mask falls below
    the binarization threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    p = np.asarray(pixel_embeddings, dtype=np.float64)
    m = np.asarray(mask_probs, dtype=np.float64)
    if p.ndim != 3 or p.shape[1:] != m.shape:
        raise ValueError(f"shapes incompatible: {p.shape} vs {m.shape}")
    return p * (m >= threshold).astype(np.float64)


def masked_average_pool(matted: np.ndarray, binary_mask: np.ndarray) -> SpatialFeature:
    """Per-channel mean over the mask cells; zero vector with flag when
    the mask is empty."""
    r = np.asarray(matted, dtype=np.float64)
    m = np.asarray(binary_mask)
    count = int(np.count_nonzero(m))
    if count == 0:
        return SpatialFeature(vector=np.zeros(r.shape[0]), empty_flag=True)
    return SpatialFeature(vector=r.sum(axis=(1, 2)) / count, empty_flag=False)


def _spatial_matrix(spatial) -> np.ndarray:
    if isinstance(spatial, np.ndarray):
        return np.asarray(spatial, dtype=np.float64)
    return np.stack([f.vector for f in spatial])


def cross_attention_update(prototypes: np.ndarray, spatial, params: MhcaParams,
                           return_weights: bool = False):
    """Update each propagated query by attending to all slots' spatial
    features, with slot k's positional row added to both its query and
    its key; residual to the prototype, then layer norm."""
    protos = np.asarray(prototypes, dtype=np.float64)
    feats = _spatial_matrix(spatial)
    if protos.shape != feats.shape or protos.shape[0] != params.e_pos.shape[0]:
        raise ValueError(f"slot counts disagree: prototypes {protos.shape}, "
                         f"spatial {feats.shape}, e_pos {params.e_pos.shape}")
    context, weights = _attend(protos + params.e_pos, feats + params.e_pos,
                               feats, params)
    updated = layer_norm(protos + context, params.ln_scale, params.ln_shift)
    if return_weights:
        return updated, weights
    return updated


def propagate(queries: np.ndarray, frame_queries: np.ndarray,
              params: RefDecoderParams, return_trace: bool = False):
    """One decoder step: encode the frame queries, decode the instance
    queries against them, and emit (prototypes, class_probs,
    mask_embeddings)."""
    q = np.asarray(queries, dtype=np.float64)
    f = np.asarray(frame_queries, dtype=np.float64)
    if q.ndim != 2 or f.ndim != 2 or q.shape[1] != f.shape[1]:
        raise ValueError(f"shape mismatch: queries {q.shape}, frame queries {f.shape}")

    enc_ctx, enc_w = _attend(f, f, f, params.encoder)
    f_enc = layer_norm(f + enc_ctx, params.encoder.ln_scale, params.encoder.ln_shift)

    dec_ctx, dec_w = _attend(q, f_enc, f_enc, params.decoder)
    x = layer_norm(q + dec_ctx, params.decoder.ln_scale, params.decoder.ln_shift)

    hidden = np.maximum(x @ params.ffn.w1 + params.ffn.b1, 0.0)
    prototypes = layer_norm(x + hidden @ params.ffn.w2 + params.ffn.b2,
                            params.ffn.ln_scale, params.ffn.ln_shift)

    logits = prototypes @ params.classifier
    logits = logits - logits.max(axis=-1, keepdims=True)
    expl = np.exp(logits)
    class_probs = expl / expl.sum(axis=-1, keepdims=True)

    m = prototypes
    for w, b in params.mask_head[:-1]:
        m = np.maximum(m @ w + b, 0.0)
    w, b = params.mask_head[-1]
    mask_embeddings = m @ w + b

    if return_trace:
        trace = {"encoder_weights": enc_w, "decoder_weights": dec_w}
        return prototypes, class_probs, mask_embeddings, trace
    return prototypes, class_probs, mask_embeddings


def segment_frame(mask_embeddings: np.ndarray, pixel_embeddings: np.ndarray) -> np.ndarray:
    """Soft masks: sigmoid of the per-cell dot product between each mask
    embedding and the pixel-embedding column."""
    m = np.asarray(mask_embeddings, dtype=np.float64)
    p = np.asarray(pixel_embeddings, dtype=np.float64)
    if m.ndim != 2 or p.ndim != 3 or m.shape[1] != p.shape[0]:
        raise ValueError(f"shape mismatch: embeddings {m.shape}, pixels {p.shape}")
    return _sigmoid(np.einsum("kc,chw->khw", m, p))


def run_clip(initial_queries: np.ndarray, frames, params: RefDecoderParams,
             ste_params: MhcaParams | None = None, ste_enabled: bool = False,
             threshold: float = 0.5, collect_trace: bool = False):
    """Run the online loop over a clip.

    `frames` is a sequence of (frame_queries, pixel_embeddings) pairs.
    Per frame: propagate, segment, record. Between frames the queries for
    t+1 are the prototypes (enhancement off) or the cross-attention update
    of the prototypes against the pooled spatial features (enhancement on).
    Returns N_v PredictionTracks, plus a per-frame trace when requested.
    """
    if ste_enabled and ste_params is None:
        raise ValueError("ste_enabled requires ste_params")
    if len(frames) == 0:
        raise ValueError("need at least one frame")

    queries = np.asarray(initial_queries, dtype=np.float64)
    n_slots = queries.shape[0]
    all_probs, all_masks, trace = [], [], []

    for t, (frame_queries, pixels) in enumerate(frames):
        protos, class_probs, mask_emb, step = propagate(
            queries, frame_queries, params, return_trace=True)
        masks = segment_frame(mask_emb, pixels)
        all_probs.append(class_probs)
        all_masks.append(masks)

        entry = None
        if collect_trace:
            entry = {
                "prototypes": protos,
                "class_probs": class_probs,
                "encoder_row_sums": step["encoder_weights"].sum(axis=-1),
                "decoder_row_sums": step["decoder_weights"].sum(axis=-1),
            }

        if t + 1 < len(frames):
            if ste_enabled:
                feats = []
                for k in range(n_slots):
                    matted = spatial_matting(pixels, masks[k], threshold)
                    binary = np.asarray(masks[k]) >= threshold
                    feats.append(masked_average_pool(matted, binary))
                queries, ste_w = cross_attention_update(
                    protos, feats, ste_params, return_weights=True)
                if collect_trace:
                    entry["spatial_features"] = np.stack([f.vector for f in feats])
                    entry["spatial_empty"] = [f.empty_flag for f in feats]
                    entry["ste_row_sums"] = ste_w.sum(axis=-1)
            else:
                queries = protos
        if collect_trace:
            trace.append(entry)

    probs = np.stack(all_probs)   # (T, N_v, K+1)
    masks = np.stack(all_masks)   # (T, N_v, h, w)
    tracks = [PredictionTrack(class_probs=probs[:, k], mask_probs=masks[:, k])
              for k in range(n_slots)]
    if collect_trace:
        return tracks, trace
    return tracks


# ---------------------------------------------------------------------------
# Seeded initialization and JSON serialization of parameter bundles.
# ---------------------------------------------------------------------------

def _uniform(rng, bound, *shape) -> np.ndarray:
    return rng.uniform(-bound, bound, shape)


def init_mhca_params(n_slots: int, c: int, n_heads: int, seed: int) -> MhcaParams:
    """Seeded enhancement block: weights uniform in [-1/sqrt(C), 1/sqrt(C)],
    layer-norm scale 1 and shift 0."""
    rng = stream(seed, "mhca")
    bound = 1.0 / np.sqrt(c)
    return MhcaParams(
        n_heads=n_heads,
        w_q=_uniform(rng, bound, c, c), w_k=_uniform(rng, bound, c, c),
        w_v=_uniform(rng, bound, c, c), w_o=_uniform(rng, bound, c, c),
        ln_scale=np.ones(c), ln_shift=np.zeros(c),
        e_pos=_uniform(rng, bound, n_slots, c))


def _init_attention(rng, c: int, n_heads: int) -> AttentionParams:
    bound = 1.0 / np.sqrt(c)
    return AttentionParams(
        n_heads=n_heads,
        w_q=_uniform(rng, bound, c, c), w_k=_uniform(rng, bound, c, c),
        w_v=_uniform(rng, bound, c, c), w_o=_uniform(rng, bound, c, c),
        ln_scale=np.ones(c), ln_shift=np.zeros(c))


def init_ref_decoder_params(c: int, n_classes: int, n_heads: int, seed: int) -> RefDecoderParams:
    """Seeded reference decoder over C-dim embeddings and K real classes
    (classifier emits K+1 logits)."""
    bound = 1.0 / np.sqrt(c)
    enc = _init_attention(stream(seed, "encoder"), c, n_heads)
    dec = _init_attention(stream(seed, "decoder"), c, n_heads)
    rng = stream(seed, "ffn")
    ffn = FeedForwardParams(
        w1=_uniform(rng, bound, c, 2 * c), b1=_uniform(rng, bound, 2 * c),
        w2=_uniform(rng, bound, 2 * c, c), b2=_uniform(rng, bound, c),
        ln_scale=np.ones(c), ln_shift=np.zeros(c))
    rng = stream(seed, "mask_head")
    mask_head = tuple((_uniform(rng, bound, c, c), _uniform(rng, bound, c))
                      for _ in range(3))
    classifier = _uniform(stream(seed, "classifier"), bound, c, n_classes + 1)
    return RefDecoderParams(encoder=enc, decoder=dec, ffn=ffn,
                            mask_head=mask_head, classifier=classifier)


def _array_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _array_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def _attention_to_json(p) -> dict:
    out = {"n_heads": p.n_heads}
    for name in ("w_q", "w_k", "w_v", "w_o", "ln_scale", "ln_shift"):
        out[name] = _array_to_json(getattr(p, name))
    return out


def params_to_dict(decoder: RefDecoderParams, mhca: MhcaParams | None = None) -> dict:
    doc = {
        "ref_decoder": {
            "encoder": _attention_to_json(decoder.encoder),
            "decoder": _attention_to_json(decoder.decoder),
            "ffn": {name: _array_to_json(getattr(decoder.ffn, name))
                    for name in ("w1", "b1", "w2", "b2", "ln_scale", "ln_shift")},
            "mask_head": [{"w": _array_to_json(w), "b": _array_to_json(b)}
                          for w, b in decoder.mask_head],
            "classifier": _array_to_json(decoder.classifier),
        }
    }
    if mhca is not None:
        entry = _attention_to_json(mhca)
        entry["e_pos"] = _array_to_json(mhca.e_pos)
        doc["mhca"] = entry
    return doc


def _attention_from_json(d: dict) -> AttentionParams:
    return AttentionParams(n_heads=int(d["n_heads"]),
                           **{name: _array_from_json(d[name])
                              for name in ("w_q", "w_k", "w_v", "w_o",
                                           "ln_scale", "ln_shift")})


def params_from_dict(doc: dict):
    rd = doc["ref_decoder"]
    decoder = RefDecoderParams(
        encoder=_attention_from_json(rd["encoder"]),
        decoder=_attention_from_json(rd["decoder"]),
        ffn=FeedForwardParams(**{name: _array_from_json(rd["ffn"][name])
                                 for name in ("w1", "b1", "w2", "b2",
                                              "ln_scale", "ln_shift")}),
        mask_head=tuple((_array_from_json(layer["w"]), _array_from_json(layer["b"]))
                        for layer in rd["mask_head"]),
        classifier=_array_from_json(rd["classifier"]))
    mhca = None
    if "mhca" in doc:
        d = doc["mhca"]
        mhca = MhcaParams(n_heads=int(d["n_heads"]),
                          **{name: _array_from_json(d[name])
                             for name in ("w_q", "w_k", "w_v", "w_o",
                                          "ln_scale", "ln_shift", "e_pos")})
    return decoder, mhca


def save_params(path, decoder: RefDecoderParams, mhca: MhcaParams | None = None) -> None:
    Path(path).write_text(dump_json(params_to_dict(decoder, mhca)))


def load_params(path):
    return params_from_dict(json.loads(Path(path).read_text()))
