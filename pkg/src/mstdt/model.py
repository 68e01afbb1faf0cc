"""Full video/caption embedding model: per-scale short-term encoders,
long-term encoder, scale fusion, branch fusion, optional side projections.

Parameter naming is stable for checkpointing and gradient checks:
``short.k{K}.layer{i}.*`` and ``short.k{K}.pos`` per scale,
``long.layer{i}.*``, ``fusion.concat.*`` (concat fusion only) and
``proj.video.* / proj.caption.*`` (optional residual projections).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig
from .errors import ContractError
from .params import ParamStore, uniform_init
from .temporal import (
    FrameFeatureSequence,
    FusionParams,
    ScaleSpec,
    compute_differences,
    fuse_scales,
    fuse_video,
    long_term_encode,
    partition_subsets,
    short_term_encode,
)


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    n_max: int
    scale_spec: ScaleSpec
    long_encoder: EncoderConfig
    fusion: FusionParams = FusionParams()
    caption_projection: bool = False
    video_projection: bool = False

    def __post_init__(self):
        self.scale_spec.validate_against(self.n_max)
        if self.scale_spec.encoder.model_dim != self.dim:
            raise ContractError("short-branch encoder dim must equal model dim")
        if self.long_encoder.model_dim != self.dim:
            raise ContractError("long-branch encoder dim must equal model dim")


class VideoTextModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg

    def init_params(self, seed: int, zero_residual: bool = True) -> ParamStore:
        """Deterministic parameter creation; identical seeds give identical stores."""
        from .encoder import init_encoder_params

        cfg = self.cfg
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for k in cfg.scale_spec.scales:
            init_encoder_params(store, f"short.k{k}.", cfg.scale_spec.encoder, rng, zero_residual)
            if cfg.scale_spec.use_difference:
                store.add(f"short.k{k}.pos", uniform_init(rng, (k + 1, cfg.dim), cfg.dim))
        init_encoder_params(store, "long.", cfg.long_encoder, rng, zero_residual)
        if cfg.scale_spec.fusion_strategy == "concat":
            joined = len(cfg.scale_spec.scales) * cfg.dim
            store.add("fusion.concat.weight", uniform_init(rng, (joined, cfg.dim), joined))
            store.add("fusion.concat.bias", np.zeros(cfg.dim))
        if cfg.video_projection:
            store.add("proj.video.weight", np.zeros((cfg.dim, cfg.dim)))
            store.add("proj.video.bias", np.zeros(cfg.dim))
        if cfg.caption_projection:
            store.add("proj.caption.weight", np.zeros((cfg.dim, cfg.dim)))
            store.add("proj.caption.bias", np.zeros(cfg.dim))
        return store

    def _short_branch(self, params: ParamStore, seq: FrameFeatureSequence, long_ref: Tensor | None) -> Tensor:
        spec = self.cfg.scale_spec
        per_scale = []
        for k in spec.scales:
            batch = partition_subsets(seq, k)
            pos = None
            if spec.use_difference:
                batch.subsets = [
                    compute_differences(s, spec.strict_diff_mask) for s in batch.subsets
                ]
                batch.difference = True
                pos = params[f"short.k{k}.pos"]
            per_scale.append(
                short_term_encode(
                    batch, spec.encoder, params, f"short.k{k}.",
                    position_embeddings=pos,
                    literal_normalization=spec.literal_normalization,
                )
            )
        return fuse_scales(per_scale, spec.fusion_strategy, long_ref=long_ref, params=params)

    def embed_video(self, params: ParamStore, seq: FrameFeatureSequence) -> Tensor:
        cfg = self.cfg
        if seq.dim != cfg.dim or seq.n_max != cfg.n_max:
            raise ContractError(
                f"video shape ({seq.n_max}, {seq.dim}) does not match model "
                f"({cfg.n_max}, {cfg.dim})"
            )
        alpha = cfg.fusion.alpha
        need_long = alpha < 1.0 or cfg.scale_spec.fusion_strategy == "attention"
        long_ref = long_term_encode(seq, cfg.long_encoder, params) if need_long else None
        if alpha == 0.0:
            out = long_ref
        else:
            short = self._short_branch(params, seq, long_ref)
            out = short if alpha == 1.0 else fuse_video(short, long_ref, cfg.fusion)
        if cfg.video_projection:
            out = _residual_projection(out, params, "proj.video.")
        return out

    def embed_caption(self, params: ParamStore, vec: np.ndarray | Tensor) -> Tensor:
        t = vec if isinstance(vec, Tensor) else Tensor(np.asarray(vec, dtype=np.float64))
        if t.shape != (self.cfg.dim,):
            raise ContractError(f"caption shape {t.shape}, expected ({self.cfg.dim},)")
        if self.cfg.caption_projection:
            t = _residual_projection(t, params, "proj.caption.")
        return t

    def embed_batch(
        self,
        params: ParamStore,
        videos: list[FrameFeatureSequence],
        captions: list[np.ndarray],
    ) -> tuple[Tensor, Tensor]:
        """Embed paired videos and captions into (b, dim) matrices."""
        if len(videos) != len(captions):
            raise ContractError("videos and captions must pair up")
        xv = ad.stack_rows([self.embed_video(params, v) for v in videos])
        xc = ad.stack_rows([self.embed_caption(params, c) for c in captions])
        return xv, xc


def _residual_projection(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    w = params[prefix + "weight"]
    return x + ad.matvec(ad.transpose(w), x) + params[prefix + "bias"]
