"""Training loop, evaluation, and finite-difference gradient checking.

Single-threaded and fully deterministic for a fixed seed: one Adam
optimizer with two learning-rate groups (side projections vs temporal
module) and cosine decay to zero over the training horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig, config_text
from .data import EmbeddingDataset, generate_synthetic, load_embeddings, make_batches
from .errors import ContractError, NumericError
from .losses import LossParams, cosine_similarity_matrix, total_loss
from .metrics import RetrievalReport, paired_ranks, retrieval_metrics
from .model import VideoTextModel
from .params import ParamStore, save_checkpoint


def cosine_lr_scale(step: int, horizon: int) -> float:
    """Cosine decay factor from 1 to 0 across ``horizon`` steps."""
    if horizon <= 0:
        return 1.0
    t = min(step, horizon)
    return 0.5 * (1.0 + math.cos(math.pi * t / horizon))


class Adam:
    """Adam over a ParamStore with per-group base learning rates."""

    def __init__(
        self,
        store: ParamStore,
        lr_backbone: float,
        lr_mstdt: float,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-8,
    ):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.lr = {
            name: lr_backbone if name.startswith("proj.") else lr_mstdt
            for name in store.names()
        }
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.t = 0

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in self.store.items():
            g = tensor.grad
            m = self.m[name]
            v = self.v[name]
            m[...] = b1 * m + (1.0 - b1) * g
            v[...] = b2 * v + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            tensor.data -= lr_scale * self.lr[name] * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class History:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"steps": self.steps, "epochs": self.epochs}


@dataclass
class TrainResult:
    model: VideoTextModel
    params: ParamStore
    history: History
    dataset: EmbeddingDataset


def build_dataset(cfg: RunConfig) -> EmbeddingDataset:
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth)
    ds = load_embeddings(*cfg.data_paths)
    if ds.dim != cfg.model.dim or ds.n_max != cfg.model.n_max:
        raise ContractError(
            f"dataset geometry ({ds.n_max}, {ds.dim}) does not match the model "
            f"({cfg.model.n_max}, {cfg.model.dim}); set model.dim / model.n_max"
        )
    return ds


def batch_loss(
    model: VideoTextModel,
    params: ParamStore,
    ds: EmbeddingDataset,
    batch: list[tuple[int, int]],
    lp: LossParams,
):
    """Embed one batch and return the combined loss tensor."""
    videos = [ds.videos[v] for _, v in batch]
    captions = [ds.captions[c] for c, _ in batch]
    xv, xc = model.embed_batch(params, videos, captions)
    sim_vc = cosine_similarity_matrix(xv, xc, "video", "caption")
    sim_vv = cosine_similarity_matrix(xv, xv, "video", "video")
    sim_cc = cosine_similarity_matrix(xc, xc, "caption", "caption")
    return total_loss(sim_vc, sim_vv, sim_cc, lp)


def evaluate_model(
    model: VideoTextModel, params: ParamStore, ds: EmbeddingDataset, tie: str = "optimistic"
) -> tuple[RetrievalReport, RetrievalReport]:
    """Embed the whole dataset once and report both retrieval directions."""
    xv = ad.stack_rows([model.embed_video(params, v) for v in ds.videos])
    xc = ad.stack_rows([model.embed_caption(params, c) for c in ds.captions])
    sim_cv = cosine_similarity_matrix(xc, xv, "caption", "video")
    t2v_ranks, v2t_ranks = paired_ranks(sim_cv, ds.caption_to_video, tie=tie)
    return retrieval_metrics(t2v_ranks, "t2v"), retrieval_metrics(v2t_ranks, "v2t")


def _epoch_record(epoch: int, t2v: RetrievalReport, v2t: RetrievalReport) -> dict:
    return {
        "epoch": epoch,
        "t2v": t2v.as_dict(),
        "v2t": v2t.as_dict(),
        "rsum": t2v.r_sum + v2t.r_sum,
    }


def train(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    dataset: EmbeddingDataset | None = None,
) -> TrainResult:
    """Run the configured training; optionally write per-epoch checkpoints,
    the resolved config, and the history alongside. ``dataset`` overrides
    the config's data source (programmatic train/eval splits)."""
    ds = dataset if dataset is not None else build_dataset(cfg)
    model = VideoTextModel(cfg.model)
    params = model.init_params(cfg.seed)
    history = History()

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config_text(cfg))

    epoch_batches = [
        make_batches(ds, cfg.batch_size, seed=cfg.seed + 1 + e, drop_last=True)
        for e in range(cfg.epochs)
    ]
    total_steps = sum(len(b) for b in epoch_batches)
    horizon = cfg.cosine_horizon or total_steps

    adam = Adam(
        params,
        lr_backbone=cfg.lr_backbone,
        lr_mstdt=cfg.lr_mstdt,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )

    step = 0
    for epoch, batches in enumerate(epoch_batches, start=1):
        for batch in batches:
            try:
                loss = batch_loss(model, params, ds, batch, cfg.loss)
                value = loss.item()
            except NumericError as exc:
                raise NumericError(f"numeric failure at step {step}: {exc}") from exc
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at step {step}")
            scale = cosine_lr_scale(step, horizon)
            ad.backward(loss)
            adam.step(scale)
            history.steps.append({"step": step, "loss": value, "lr_scale": scale})
            step += 1
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            t2v, v2t = evaluate_model(model, params, ds, tie=cfg.tie)
            history.epochs.append(_epoch_record(epoch, t2v, v2t))
        if out is not None:
            save_checkpoint(params, out / f"checkpoint_epoch{epoch}.ckpt")

    if out is not None:
        save_checkpoint(params, out / "checkpoint.ckpt")
    return TrainResult(model, params, history, ds)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    per_param: dict[str, float]  # name -> max relative error
    threshold: float

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]

    @property
    def passed(self) -> bool:
        return self.worst[1] <= self.threshold

    def lines(self) -> list[str]:
        out = [f"{name} max_rel_err={err:.3e}" for name, err in self.per_param.items()]
        name, err = self.worst
        status = "PASS" if self.passed else "FAIL"
        out.append(f"worst {name} {err:.3e} threshold {self.threshold:.0e} -> {status}")
        return out


def _relative_error(a: float, f: float, floor: float = 1e-4) -> float:
    return abs(a - f) / max(abs(a), abs(f), floor)


def grad_check(
    cfg: RunConfig, h: float = 1e-5, threshold: float = 1e-5
) -> GradCheckReport:
    """Compare reverse-mode gradients of the total loss on one batch against
    central finite differences, per parameter entry.

    Parameters are randomly initialized with nonzero residual projections so
    every path carries a generic gradient. Entries whose gradients are below
    the relative-error floor are compared absolutely at that floor.
    """
    ds = build_dataset(cfg)
    model = VideoTextModel(cfg.model)
    params = model.init_params(cfg.seed, zero_residual=False)
    batch = make_batches(ds, cfg.batch_size, seed=cfg.seed, drop_last=True)[0]

    loss = batch_loss(model, params, ds, batch, cfg.loss)
    ad.backward(loss)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    def loss_value() -> float:
        return batch_loss(model, params, ds, batch, cfg.loss).item()

    per_param: dict[str, float] = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            worst = max(worst, _relative_error(analytic[name].reshape(-1)[i], fd))
        per_param[name] = worst
    return GradCheckReport(per_param, threshold)
