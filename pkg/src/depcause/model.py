"""Two-tower token tagger: standard encoder left, dependency-masked right.

The left tower is a conventional post-norm transformer encoder. The right
tower restricts each token's attention to its dependency-tree neighbors and
uses the add-&-norm variant whose denominator is the raw ``variance + eps``
with scalar trainable gain and offset; ``standard_layernorm`` switches both
choices to the conventional form. A sigmoid gate computed from the left
tower's output blends the two towers per feature, and one affine layer maps
the blend to the four token classes.

Attention affinities in the right tower carry no magnitude scaling by
default; ``scale_dep_attention`` divides them by sqrt(head width).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import NUM_CLASSES
from .encoding import Encoded, EmbeddingTables, Vocabulary, embed, init_tables, one_hot_labels

_GATE_MODES = ("learned", "left_only", "right_only")


@dataclass
class ModelConfig:
    width: int = 64
    left_layers: int = 2
    right_layers: int = 2
    left_heads: int = 4
    right_heads: int = 1
    ffn_mult: int = 4
    eps: float = 1e-5
    standard_layernorm: bool = False
    scale_dep_attention: bool = False
    dep_self_loops: bool = True
    dep_directed: bool = False
    gate_mode: str = "learned"
    two_layer_head: bool = False
    gelu_tanh: bool = False
    include_pads_in_loss: bool = True
    separate_embeddings: bool = False
    dropout: float = 0.0
    embed_init_scale: float = 0.1
    gamma_init: float = 1.0

    def __post_init__(self):
        if self.width % self.left_heads or self.width % self.right_heads:
            raise ValueError(
                f"width {self.width} not divisible by heads "
                f"({self.left_heads} left, {self.right_heads} right)"
            )
        if self.gate_mode not in _GATE_MODES:
            raise ValueError(f"gate_mode must be one of {_GATE_MODES}, got {self.gate_mode!r}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def _param(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def _const(n: int, value: float) -> Tensor:
    return Tensor(np.full(n, value), requires_grad=True)


@dataclass
class NormParams:
    gain: Tensor
    bias: Tensor

    @staticmethod
    def fresh(cfg: ModelConfig, gain_value: float = 1.0) -> "NormParams":
        n = cfg.width if cfg.standard_layernorm else 1
        return NormParams(gain=_const(n, gain_value), bias=_zeros(n))


@dataclass
class LeftLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    norm1: NormParams
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm2: NormParams

    @staticmethod
    def fresh(cfg: ModelConfig, rng: np.random.Generator) -> "LeftLayerParams":
        d, f = cfg.width, cfg.width * cfg.ffn_mult
        return LeftLayerParams(
            wq=_param(rng, d, d), wk=_param(rng, d, d), wv=_param(rng, d, d),
            wo=_param(rng, d, d),
            norm1=NormParams(gain=_const(cfg.width, 1.0), bias=_zeros(cfg.width)),
            ffn_w1=_param(rng, d, f), ffn_b1=_zeros(f),
            ffn_w2=_param(rng, f, d), ffn_b2=_zeros(d),
            norm2=NormParams(gain=_const(cfg.width, 1.0), bias=_zeros(cfg.width)),
        )


@dataclass
class RightLayerParams:
    query_w: Tensor  # affinity query projection
    key_w: Tensor
    value_w: Tensor
    out_w: Tensor
    norm1: NormParams
    ffn_w: Tensor  # single d->d weight, GELU output feeds the second norm
    ffn_b: Tensor
    norm2: NormParams

    @staticmethod
    def fresh(cfg: ModelConfig, rng: np.random.Generator) -> "RightLayerParams":
        d = cfg.width
        return RightLayerParams(
            query_w=_param(rng, d, d), key_w=_param(rng, d, d), value_w=_param(rng, d, d),
            out_w=_param(rng, d, d),
            norm1=NormParams.fresh(cfg, cfg.gamma_init),
            ffn_w=_param(rng, d, d), ffn_b=_zeros(d),
            norm2=NormParams.fresh(cfg, cfg.gamma_init),
        )


@dataclass
class HeadParams:
    gate_w: Tensor
    gate_b: Tensor
    hidden_w: Tensor | None
    hidden_b: Tensor | None
    cls_w: Tensor
    cls_b: Tensor

    @staticmethod
    def fresh(cfg: ModelConfig, rng: np.random.Generator) -> "HeadParams":
        d = cfg.width
        two = cfg.two_layer_head
        return HeadParams(
            gate_w=_param(rng, d, d), gate_b=_zeros(d),
            hidden_w=_param(rng, d, d) if two else None,
            hidden_b=_zeros(d) if two else None,
            cls_w=_param(rng, d, NUM_CLASSES), cls_b=_zeros(NUM_CLASSES),
        )


# ------------------------------------------------------------------- pieces


def standard_layer_norm(x: Tensor, norm: NormParams, eps: float) -> Tensor:
    """Conventional layer norm: centered, divided by std, per-feature affine."""
    return ad.shift(ad.scale(ad.row_norm(x, eps, sqrt_denom=True), norm.gain), norm.bias)


def paper_add_norm(v: Tensor, o: Tensor, norm: NormParams, eps: float,
                   standard: bool = False) -> Tensor:
    """Residual plus normalized sublayer output: v + gain*(o-mean)/denom + bias.

    The default denominator is the raw per-row variance plus eps; ``standard``
    uses its square root. A zero-variance row contributes exactly bias.
    """
    normalized = ad.row_norm(o, eps, sqrt_denom=standard)
    return ad.add(v, ad.shift(ad.scale(normalized, norm.gain), norm.bias))


def _split_heads(x: Tensor, w: Tensor, heads: int) -> list[Tensor]:
    projected = ad.matmul(x, w)
    if heads == 1:
        return [projected]
    dh = w.shape[1] // heads
    return [ad.slice_cols(projected, h * dh, (h + 1) * dh) for h in range(heads)]


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.values.dtype)
    return ad.mul_const(x, keep / (1.0 - rate))


def left_self_attention(
    v: Tensor, pad_mask: np.ndarray, layer: LeftLayerParams, cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[Tensor]]:
    """Multi-head scaled dot-product attention with pad keys masked out."""
    m = v.shape[0]
    dh = cfg.width // cfg.left_heads
    key_mask = np.broadcast_to(np.asarray(pad_mask, dtype=bool), (m, m))
    queries = _split_heads(v, layer.wq, cfg.left_heads)
    keys = _split_heads(v, layer.wk, cfg.left_heads)
    values = _split_heads(v, layer.wv, cfg.left_heads)
    mixed, alphas = [], []
    for q, k, val in zip(queries, keys, values):
        scores = ad.affine(ad.matmul(q, ad.transpose(k)), scale_by=1.0 / np.sqrt(dh))
        alpha = ad.masked_softmax(scores, key_mask)
        alphas.append(alpha)
        mixed.append(ad.matmul(_dropout(alpha, cfg.dropout, rng), val))
    joined = mixed[0] if len(mixed) == 1 else ad.concat_cols(mixed)
    return ad.matmul(joined, layer.wo), alphas


def left_encode(
    v: Tensor, pad_mask: np.ndarray, layers: Sequence[LeftLayerParams], cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Standard post-norm encoder stack producing the left-tower output."""
    x = v
    for layer in layers:
        attn, _ = left_self_attention(x, pad_mask, layer, cfg, rng)
        x = standard_layer_norm(ad.add(x, attn), layer.norm1, cfg.eps)
        hidden = ad.gelu(ad.shift(ad.matmul(x, layer.ffn_w1), layer.ffn_b1), cfg.gelu_tanh)
        out = ad.shift(ad.matmul(hidden, layer.ffn_w2), layer.ffn_b2)
        x = standard_layer_norm(ad.add(x, out), layer.norm2, cfg.eps)
    return x


def dep_attention(
    v: Tensor, adj: np.ndarray, layer: RightLayerParams, cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[Tensor]]:
    """Attention restricted to dependency neighbors.

    Affinity is the raw query-key dot product (scaled only when
    ``scale_dep_attention`` is set); the softmax runs over adjacency-true
    positions, so off-neighborhood weights are exactly zero.
    """
    adj = np.asarray(adj, dtype=bool)
    if adj.shape != (v.shape[0], v.shape[0]):
        raise ad.ShapeError(f"adjacency {adj.shape} does not match input {v.shape}")
    queries = _split_heads(v, layer.query_w, cfg.right_heads)
    keys = _split_heads(v, layer.key_w, cfg.right_heads)
    values = _split_heads(v, layer.value_w, cfg.right_heads)
    mixed, alphas = [], []
    for q, k, val in zip(queries, keys, values):
        scores = ad.matmul(q, ad.transpose(k))
        if cfg.scale_dep_attention:
            scores = ad.affine(scores, scale_by=1.0 / np.sqrt(q.shape[1]))
        alpha = ad.masked_softmax(scores, adj)
        alphas.append(alpha)
        mixed.append(ad.matmul(_dropout(alpha, cfg.dropout, rng), val))
    joined = mixed[0] if len(mixed) == 1 else ad.concat_cols(mixed)
    return ad.matmul(joined, layer.out_w), alphas


def right_encode(
    v: Tensor, adj: np.ndarray, layers: Sequence[RightLayerParams], cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[list[Tensor]]]:
    """Dependency-tower stack; an empty stack passes the embedding through."""
    x = v
    all_alphas: list[list[Tensor]] = []
    for layer in layers:
        o, alphas = dep_attention(x, adj, layer, cfg, rng)
        all_alphas.append(alphas)
        bar = paper_add_norm(x, o, layer.norm1, cfg.eps, cfg.standard_layernorm)
        f = ad.gelu(ad.shift(ad.matmul(bar, layer.ffn_w), layer.ffn_b), cfg.gelu_tanh)
        x = paper_add_norm(bar, f, layer.norm2, cfg.eps, cfg.standard_layernorm)
    return x, all_alphas


def fuse(e_b: Tensor, e_t: Tensor, head: HeadParams, cfg: ModelConfig) -> tuple[Tensor, Tensor | None]:
    """Blend tower outputs: sigmoid(e_b W + b) picks the left share per feature.

    The single-tower gate modes bypass the blend entirely so ablations
    compare exact tower outputs, not a saturated approximation.
    """
    if e_b.shape != e_t.shape:
        raise ad.ShapeError(f"tower outputs differ: {e_b.shape} vs {e_t.shape}")
    if cfg.gate_mode == "left_only":
        return e_b, None
    if cfg.gate_mode == "right_only":
        return e_t, None
    gate = ad.sigmoid(ad.shift(ad.matmul(e_b, head.gate_w), head.gate_b))
    blended = ad.add(ad.mul(gate, e_b), ad.mul(ad.affine(gate, -1.0, 1.0), e_t))
    return blended, gate


def classify(e: Tensor, head: HeadParams, cfg: ModelConfig) -> Tensor:
    x = e
    if cfg.two_layer_head:
        x = ad.gelu(ad.shift(ad.matmul(x, head.hidden_w), head.hidden_b), cfg.gelu_tanh)
    return ad.shift(ad.matmul(x, head.cls_w), head.cls_b)


def model_loss(logits: Tensor, labels: np.ndarray, include_pads: bool = True,
               pad_mask: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy over positions; optionally restricted to non-pads."""
    onehot = one_hot_labels(labels)
    if not include_pads:
        if pad_mask is None:
            raise ValueError("excluding pads from the loss requires pad_mask")
        keep = np.flatnonzero(pad_mask)
        return ad.cross_entropy(ad.gather_rows(logits, keep), onehot[keep])
    return ad.cross_entropy(logits, onehot)


# -------------------------------------------------------------------- model


@dataclass
class ForwardResult:
    logits: Tensor
    left: Tensor
    right: Tensor
    gate: Tensor | None
    attention: list[list[Tensor]]  # per right layer, per head


class Model:
    """Parameter container plus the full forward pass."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        self.tables = init_tables(vocab, cfg.width, rng, cfg.embed_init_scale)
        self.tables_right = (
            init_tables(vocab, cfg.width, rng, cfg.embed_init_scale)
            if cfg.separate_embeddings else None
        )
        self.left_layers = [LeftLayerParams.fresh(cfg, rng) for _ in range(cfg.left_layers)]
        self.right_layers = [RightLayerParams.fresh(cfg, rng) for _ in range(cfg.right_layers)]
        self.head = HeadParams.fresh(cfg, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        """Stable name->tensor mapping; iteration order fixes optimizer state
        and checkpoint layout."""
        params: dict[str, Tensor] = {
            "embed.id": self.tables.e_id,
            "embed.pos": self.tables.e_pos,
            "embed.tag": self.tables.e_tag,
        }
        if self.tables_right is not None:
            params["embed_right.id"] = self.tables_right.e_id
            params["embed_right.pos"] = self.tables_right.e_pos
            params["embed_right.tag"] = self.tables_right.e_tag
        for i, layer in enumerate(self.left_layers):
            base = f"left.{i}"
            params[f"{base}.wq"] = layer.wq
            params[f"{base}.wk"] = layer.wk
            params[f"{base}.wv"] = layer.wv
            params[f"{base}.wo"] = layer.wo
            params[f"{base}.norm1.gain"] = layer.norm1.gain
            params[f"{base}.norm1.bias"] = layer.norm1.bias
            params[f"{base}.ffn_w1"] = layer.ffn_w1
            params[f"{base}.ffn_b1"] = layer.ffn_b1
            params[f"{base}.ffn_w2"] = layer.ffn_w2
            params[f"{base}.ffn_b2"] = layer.ffn_b2
            params[f"{base}.norm2.gain"] = layer.norm2.gain
            params[f"{base}.norm2.bias"] = layer.norm2.bias
        for i, layer in enumerate(self.right_layers):
            base = f"right.{i}"
            params[f"{base}.query_w"] = layer.query_w
            params[f"{base}.key_w"] = layer.key_w
            params[f"{base}.value_w"] = layer.value_w
            params[f"{base}.out_w"] = layer.out_w
            params[f"{base}.norm1.gain"] = layer.norm1.gain
            params[f"{base}.norm1.bias"] = layer.norm1.bias
            params[f"{base}.ffn_w"] = layer.ffn_w
            params[f"{base}.ffn_b"] = layer.ffn_b
            params[f"{base}.norm2.gain"] = layer.norm2.gain
            params[f"{base}.norm2.bias"] = layer.norm2.bias
        params["head.gate_w"] = self.head.gate_w
        params["head.gate_b"] = self.head.gate_b
        if self.head.hidden_w is not None:
            params["head.hidden_w"] = self.head.hidden_w
            params["head.hidden_b"] = self.head.hidden_b
        params["head.cls_w"] = self.head.cls_w
        params["head.cls_b"] = self.head.cls_b
        return params

    def forward(self, encoded: Encoded, adj: np.ndarray,
                rng: np.random.Generator | None = None) -> ForwardResult:
        v = embed(encoded, self.tables)
        v_right = v if self.tables_right is None else embed(encoded, self.tables_right)
        e_b = left_encode(v, encoded.pad_mask, self.left_layers, self.cfg, rng)
        e_t, alphas = right_encode(v_right, adj, self.right_layers, self.cfg, rng)
        e, gate = fuse(e_b, e_t, self.head, self.cfg)
        logits = classify(e, self.head, self.cfg)
        return ForwardResult(logits=logits, left=e_b, right=e_t, gate=gate, attention=alphas)

    def loss(self, encoded: Encoded, adj: np.ndarray, labels: np.ndarray,
             rng: np.random.Generator | None = None) -> tuple[Tensor, ForwardResult]:
        result = self.forward(encoded, adj, rng)
        value = model_loss(result.logits, labels, self.cfg.include_pads_in_loss,
                           encoded.pad_mask)
        return value, result
