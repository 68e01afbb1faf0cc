"""Flat key-value run configuration.

One ``key = value`` pair per line; ``#`` starts a comment; every key has a
default and unknown keys are rejected. A run reads its data either from
``data.*`` paths or from an inline ``synth.*`` specification.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import SynthSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossParams
from .model import ModelConfig
from .temporal import FusionParams, ScaleSpec


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_scales(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated scale list, got {raw!r}") from None


# key -> (converter, default); None default means "unset"
_SCHEMA: dict[str, tuple] = {
    "data.videos": (str, None),
    "data.captions": (str, None),
    "data.pairs": (str, None),
    "synth.seed": (int, 0),
    "synth.num_videos": (int, 16),
    "synth.captions_per_video": (int, 1),
    "synth.dim": (int, 16),
    "synth.n_max": (int, 12),
    "synth.cluster_count": (int, 16),
    "synth.noise_sigma": (float, 0.0),
    "synth.motion_signal": (_parse_bool, False),
    "model.dim": (int, 64),
    "model.n_max": (int, 12),
    "model.scales": (_parse_scales, (3, 4, 6)),
    "model.use_difference": (_parse_bool, True),
    "model.fusion_strategy": (str, "mean"),
    "model.alpha": (float, 0.4),
    "model.literal_normalization": (_parse_bool, False),
    "model.strict_diff_mask": (_parse_bool, False),
    "model.norm_placement": (str, "pre"),
    "model.caption_projection": (_parse_bool, False),
    "model.video_projection": (_parse_bool, False),
    "short.num_layers": (int, 1),
    "short.num_heads": (int, 2),
    "short.ff_dim": (int, 0),
    "long.num_layers": (int, 1),
    "long.num_heads": (int, 2),
    "long.ff_dim": (int, 0),
    "loss.beta": (float, 0.3),
    "loss.logit_scale": (float, 100.0),
    "loss.kl_swap": (_parse_bool, False),
    "loss.kl_reduction": (str, "mean"),
    "train.batch_size": (int, 8),
    "train.epochs": (int, 1),
    "train.seed": (int, 0),
    "train.eval_every": (int, 1),
    "opt.lr_backbone": (float, 1e-7),
    "opt.lr_mstdt": (float, 4e-4),
    "opt.adam_beta1": (float, 0.9),
    "opt.adam_beta2": (float, 0.98),
    "opt.adam_eps": (float, 1e-8),
    "opt.cosine_horizon": (int, 0),  # 0 -> total training steps
    "eval.tie": (str, "optimistic"),
}

_DATA_KEYS = ("data.videos", "data.captions", "data.pairs")


@dataclass
class RunConfig:
    raw: dict

    # data
    data_paths: tuple[Path, Path, Path] | None
    synth: SynthSpec | None
    # model
    model: ModelConfig
    loss: LossParams
    # training
    batch_size: int
    epochs: int
    seed: int
    eval_every: int
    lr_backbone: float
    lr_mstdt: float
    adam_beta1: float
    adam_beta2: float
    adam_eps: float
    cosine_horizon: int
    tie: str


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = raw
    return values


def _typed_values(text: str, source: str, allowed_prefixes: tuple[str, ...] | None = None) -> dict:
    typed = {}
    explicit = set()
    for key, raw in parse_key_values(text, source).items():
        if key not in _SCHEMA:
            raise ConfigError(f"{source}: unknown key {key!r}")
        if allowed_prefixes and not key.startswith(allowed_prefixes):
            raise ConfigError(f"{source}: key {key!r} not allowed here")
        convert = _SCHEMA[key][0]
        try:
            typed[key] = convert(raw)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"{source}: bad value for {key}: {raw!r}") from None
        explicit.add(key)
    for key, (_, default) in _SCHEMA.items():
        typed.setdefault(key, default)
    typed["__explicit__"] = explicit
    return typed


def _build_synth(v: dict) -> SynthSpec:
    cluster_count = v["synth.cluster_count"]
    if "synth.cluster_count" not in v["__explicit__"]:
        cluster_count = min(cluster_count, v["synth.num_videos"])
    return SynthSpec(
        seed=v["synth.seed"],
        num_videos=v["synth.num_videos"],
        captions_per_video=v["synth.captions_per_video"],
        dim=v["synth.dim"],
        n_max=v["synth.n_max"],
        cluster_count=cluster_count,
        noise_sigma=v["synth.noise_sigma"],
        motion_signal=v["synth.motion_signal"],
    )


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    v = _typed_values(text, source)
    explicit = v["__explicit__"]

    data_given = [k for k in _DATA_KEYS if v[k] is not None]
    synth_given = any(k.startswith("synth.") for k in explicit)
    if data_given and synth_given:
        raise ConfigError(f"{source}: give either data.* paths or synth.* keys, not both")
    if data_given and len(data_given) != len(_DATA_KEYS):
        missing = sorted(set(_DATA_KEYS) - set(data_given))
        raise ConfigError(f"{source}: incomplete data paths, missing {missing}")

    synth = None
    data_paths = None
    if data_given:
        data_paths = tuple(Path(v[k]) for k in _DATA_KEYS)
        dim, n_max = v["model.dim"], v["model.n_max"]
    else:
        synth = _build_synth(v)
        # synthetic data fixes the geometry; model keys may not contradict it
        for mk, sv in (("model.dim", synth.dim), ("model.n_max", synth.n_max)):
            if mk in explicit and v[mk] != sv:
                raise ConfigError(f"{source}: {mk} contradicts the synth specification")
        dim, n_max = synth.dim, synth.n_max
        v["model.dim"], v["model.n_max"] = dim, n_max  # keep the raw view consistent

    scale_spec = ScaleSpec(
        scales=v["model.scales"],
        encoder=EncoderConfig(
            num_layers=v["short.num_layers"],
            num_heads=v["short.num_heads"],
            model_dim=dim,
            ff_dim=v["short.ff_dim"],
            norm_placement=v["model.norm_placement"],
        ),
        fusion_strategy=v["model.fusion_strategy"],
        use_difference=v["model.use_difference"],
        literal_normalization=v["model.literal_normalization"],
        strict_diff_mask=v["model.strict_diff_mask"],
    )
    model = ModelConfig(
        dim=dim,
        n_max=n_max,
        scale_spec=scale_spec,
        long_encoder=EncoderConfig(
            num_layers=v["long.num_layers"],
            num_heads=v["long.num_heads"],
            model_dim=dim,
            ff_dim=v["long.ff_dim"],
            norm_placement=v["model.norm_placement"],
        ),
        fusion=FusionParams(alpha=v["model.alpha"]),
        caption_projection=v["model.caption_projection"],
        video_projection=v["model.video_projection"],
    )
    loss = LossParams(
        beta=v["loss.beta"],
        logit_scale=v["loss.logit_scale"],
        kl_swap=v["loss.kl_swap"],
        kl_reduction=v["loss.kl_reduction"],
    )
    if v["eval.tie"] not in ("optimistic", "pessimistic"):
        raise ConfigError(f"{source}: eval.tie must be optimistic or pessimistic")
    if v["train.batch_size"] < 2:
        raise ConfigError(f"{source}: train.batch_size must be >= 2")
    if v["train.epochs"] < 0 or v["train.seed"] < 0:
        raise ConfigError(f"{source}: train.epochs and train.seed must be >= 0")
    if v["train.eval_every"] < 1:
        raise ConfigError(f"{source}: train.eval_every must be >= 1")

    return RunConfig(
        raw={k: val for k, val in v.items() if k != "__explicit__"},
        data_paths=data_paths,
        synth=synth,
        model=model,
        loss=loss,
        batch_size=v["train.batch_size"],
        epochs=v["train.epochs"],
        seed=v["train.seed"],
        eval_every=v["train.eval_every"],
        lr_backbone=v["opt.lr_backbone"],
        lr_mstdt=v["opt.lr_mstdt"],
        adam_beta1=v["opt.adam_beta1"],
        adam_beta2=v["opt.adam_beta2"],
        adam_eps=v["opt.adam_eps"],
        cosine_horizon=v["opt.cosine_horizon"],
        tie=v["eval.tie"],
    )


def load_run_config(path: str | Path) -> RunConfig:
    return parse_run_config(Path(path).read_text(), source=str(path))


def parse_synth_spec(text: str, source: str = "<spec>") -> SynthSpec:
    """Parse a synth.*-only key-value file into a SynthSpec."""
    v = _typed_values(text, source, allowed_prefixes=("synth.",))
    return _build_synth(v)


def load_synth_spec(path: str | Path) -> SynthSpec:
    return parse_synth_spec(Path(path).read_text(), source=str(path))


def config_text(cfg: RunConfig) -> str:
    """Serialize a parsed config back to the flat key-value format."""
    skip_prefix = "synth." if cfg.data_paths is not None else "data."
    lines = []
    for key in _SCHEMA:
        value = cfg.raw.get(key)
        if value is None or key.startswith(skip_prefix):
            continue
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, tuple):
            rendered = ",".join(str(x) for x in value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"
