"""Multi-head self-attention encoder with padding-mask support.

Attention assigns exactly zero weight to masked key positions, so valid
output rows never depend on the content of padded rows. Position
information is a caller concern: nothing here adds position embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import AllMaskedError, ConfigError, ContractError
from .params import ParamStore, uniform_init

NORM_PLACEMENTS = ("pre", "post")


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 1
    num_heads: int = 2
    model_dim: int = 64
    ff_dim: int = 0  # 0 -> 4 * model_dim
    norm_placement: str = "pre"

    def __post_init__(self):
        if min(self.num_layers, self.num_heads, self.model_dim) < 1:
            raise ConfigError("encoder counts must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.ff_dim < 0:
            raise ConfigError("ff_dim must be >= 0 (0 selects 4 * model_dim)")
        if self.norm_placement not in NORM_PLACEMENTS:
            raise ConfigError(f"norm_placement must be one of {NORM_PLACEMENTS}")

    @property
    def hidden_dim(self) -> int:
        return self.ff_dim or 4 * self.model_dim

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class TokenSequence:
    tokens: Tensor  # (length, model_dim)
    mask: np.ndarray  # (length,) bool, true = valid

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.tokens.ndim != 2 or self.mask.shape != (self.tokens.shape[0],):
            raise ContractError(
                f"token/mask shape mismatch: {self.tokens.shape} vs {self.mask.shape}"
            )

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())


def init_encoder_params(
    store: ParamStore,
    prefix: str,
    cfg: EncoderConfig,
    rng: np.random.Generator,
    zero_residual: bool = True,
) -> None:
    """Create one encoder's parameters under ``prefix`` ("short.k3.", "long.").

    With ``zero_residual`` the output projections of both sublayers start at
    zero, making the whole encoder the identity map at initialization.
    """
    d, h = cfg.model_dim, cfg.hidden_dim
    for i in range(cfg.num_layers):
        base = f"{prefix}layer{i}."
        store.add(base + "ln1.gain", np.ones(d))
        store.add(base + "ln1.bias", np.zeros(d))
        for name in ("wq", "wk", "wv"):
            store.add(base + f"attn.{name}", uniform_init(rng, (d, d), d))
            store.add(base + f"attn.{name[1]}b", np.zeros(d))
        wo = np.zeros((d, d)) if zero_residual else uniform_init(rng, (d, d), d)
        store.add(base + "attn.wo", wo)
        store.add(base + "attn.ob", np.zeros(d))
        store.add(base + "ln2.gain", np.ones(d))
        store.add(base + "ln2.bias", np.zeros(d))
        store.add(base + "ff.w1", uniform_init(rng, (d, h), d))
        store.add(base + "ff.b1", np.zeros(h))
        w2 = np.zeros((h, d)) if zero_residual else uniform_init(rng, (h, d), h)
        store.add(base + "ff.w2", w2)
        store.add(base + "ff.b2", np.zeros(d))


def _attention(x: Tensor, mask: np.ndarray, cfg: EncoderConfig, params: ParamStore, base: str) -> Tensor:
    q = ad.matmul(x, params[base + "attn.wq"]) + params[base + "attn.qb"]
    k = ad.matmul(x, params[base + "attn.wk"]) + params[base + "attn.kb"]
    v = ad.matmul(x, params[base + "attn.wv"]) + params[base + "attn.vb"]
    scale = 1.0 / math.sqrt(cfg.head_dim)
    heads = []
    for h in range(cfg.num_heads):
        lo, hi = h * cfg.head_dim, (h + 1) * cfg.head_dim
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        logits = ad.matmul(qh, ad.transpose(kh)) * scale
        weights = ad.masked_softmax(logits, mask, axis=1)  # zero weight on masked keys
        heads.append(ad.matmul(weights, vh))
    merged = ad.concat_cols(heads) if len(heads) > 1 else heads[0]
    return ad.matmul(merged, params[base + "attn.wo"]) + params[base + "attn.ob"]


def _feed_forward(x: Tensor, params: ParamStore, base: str) -> Tensor:
    hidden = ad.gelu(ad.matmul(x, params[base + "ff.w1"]) + params[base + "ff.b1"])
    return ad.matmul(hidden, params[base + "ff.w2"]) + params[base + "ff.b2"]


def encoder_forward(
    seq: TokenSequence, cfg: EncoderConfig, params: ParamStore, prefix: str
) -> TokenSequence:
    """Encode a token sequence; output rows at masked positions are garbage
    by contract and must stay excluded downstream via the same mask."""
    if seq.tokens.shape[1] != cfg.model_dim:
        raise ContractError(
            f"token dim {seq.tokens.shape[1]} does not match model_dim {cfg.model_dim}"
        )
    if not seq.mask.any():
        raise AllMaskedError("encoder_forward: sequence has no valid tokens")

    x = seq.tokens
    for i in range(cfg.num_layers):
        base = f"{prefix}layer{i}."
        if cfg.norm_placement == "pre":
            x = x + _attention(
                ad.layer_norm(x, params[base + "ln1.gain"], params[base + "ln1.bias"]),
                seq.mask, cfg, params, base,
            )
            x = x + _feed_forward(
                ad.layer_norm(x, params[base + "ln2.gain"], params[base + "ln2.bias"]),
                params, base,
            )
        else:
            x = ad.layer_norm(
                x + _attention(x, seq.mask, cfg, params, base),
                params[base + "ln1.gain"], params[base + "ln1.bias"],
            )
            x = ad.layer_norm(
                x + _feed_forward(x, params, base),
                params[base + "ln2.gain"], params[base + "ln2.bias"],
            )
    return TokenSequence(x, seq.mask.copy())
