"""Embedding dataset ingestion, synthetic generation, batching.

File formats (little-endian). Embeddings: magic ``MSTDTEMB``, version u32,
kind u8 (0 video / 1 caption), count u32, n_max u32 (1 for captions),
dim u32, then per item valid_count u32 followed by n_max*dim float32
values. Pairs: magic ``MSTDTPRS``, count u32, then (caption u32, video
u32) records. Values are promoted to float64 on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .temporal import FrameFeatureSequence

EMB_MAGIC = b"MSTDTEMB"
PAIRS_MAGIC = b"MSTDTPRS"
EMB_VERSION = 1
KIND_VIDEO = 0
KIND_CAPTION = 1


@dataclass
class EmbeddingDataset:
    videos: list[FrameFeatureSequence]
    captions: list[np.ndarray]  # each (dim,)
    pairs: list[tuple[int, int]]  # (caption_idx, video_idx)
    dim: int
    n_max: int

    def validate(self) -> None:
        for v in self.videos:
            if v.dim != self.dim or v.n_max != self.n_max:
                raise FormatError("video shape inconsistent with dataset dim/n_max")
        for c in self.captions:
            if c.shape != (self.dim,):
                raise FormatError("caption dim inconsistent with dataset dim")
        referenced = set()
        for cap, vid in self.pairs:
            if not (0 <= cap < len(self.captions)):
                raise FormatError(f"pair references caption {cap} of {len(self.captions)}")
            if not (0 <= vid < len(self.videos)):
                raise FormatError(f"pair references video {vid} of {len(self.videos)}")
            referenced.add(vid)
        if referenced != set(range(len(self.videos))):
            raise FormatError("every video must be referenced by at least one caption")

    @property
    def caption_to_video(self) -> np.ndarray:
        """Per-caption true video index; requires exactly one pair per caption."""
        mapping = np.full(len(self.captions), -1, dtype=int)
        for cap, vid in self.pairs:
            if mapping[cap] != -1:
                raise FormatError(f"caption {cap} appears in more than one pair")
            mapping[cap] = vid
        if (mapping < 0).any():
            raise FormatError("some captions have no paired video")
        return mapping


# ---------------------------------------------------------------------------
# binary readers / writers
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, path: str | Path):
        self.path = str(path)
        self.blob = Path(path).read_bytes()
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated payload")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def done(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(f"{self.path}: {len(self.blob) - self.pos} trailing bytes")


def write_embedding_file(
    path: str | Path, kind: int, n_max: int, dim: int, items: list[tuple[int, np.ndarray]]
) -> None:
    """Write (valid_count, (n_max, dim) array) items at float32 precision."""
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<IBIII", EMB_VERSION, kind, len(items), n_max, dim))
        for valid_count, arr in items:
            a = np.asarray(arr, dtype=np.float64)
            if a.shape != (n_max, dim):
                raise FormatError(f"item shape {a.shape}, expected ({n_max}, {dim})")
            f.write(struct.pack("<I", valid_count))
            f.write(a.astype("<f4").tobytes())


def read_embedding_file(path: str | Path) -> tuple[int, int, int, list[tuple[int, np.ndarray]]]:
    r = _Reader(path)
    if r.take(len(EMB_MAGIC)) != EMB_MAGIC:
        raise FormatError(f"{path}: bad embedding magic")
    version = r.u32()
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    kind = r.u8()
    if kind not in (KIND_VIDEO, KIND_CAPTION):
        raise FormatError(f"{path}: unknown kind {kind}")
    count, n_max, dim = r.u32(), r.u32(), r.u32()
    if n_max < 1 or dim < 1:
        raise FormatError(f"{path}: bad extents n_max={n_max} dim={dim}")
    items = []
    for _ in range(count):
        valid_count = r.u32()
        if not 1 <= valid_count <= n_max:
            raise FormatError(f"{path}: valid_count {valid_count} out of range")
        values = np.frombuffer(r.take(4 * n_max * dim), dtype="<f4")
        items.append((valid_count, values.astype(np.float64).reshape(n_max, dim)))
    r.done()
    return kind, n_max, dim, items


def write_pairs_file(path: str | Path, pairs: list[tuple[int, int]]) -> None:
    with open(path, "wb") as f:
        f.write(PAIRS_MAGIC)
        f.write(struct.pack("<I", len(pairs)))
        for cap, vid in pairs:
            f.write(struct.pack("<II", cap, vid))


def read_pairs_file(path: str | Path) -> list[tuple[int, int]]:
    r = _Reader(path)
    if r.take(len(PAIRS_MAGIC)) != PAIRS_MAGIC:
        raise FormatError(f"{path}: bad pairs magic")
    count = r.u32()
    pairs = [(r.u32(), r.u32()) for _ in range(count)]
    r.done()
    return pairs


def load_embeddings(
    video_path: str | Path, caption_path: str | Path, pairs_path: str | Path
) -> EmbeddingDataset:
    """Load and validate one dataset; padding rows are zeroed on load."""
    vkind, n_max, dim, vitems = read_embedding_file(video_path)
    if vkind != KIND_VIDEO:
        raise FormatError(f"{video_path}: expected video kind")
    ckind, c_n_max, c_dim, citems = read_embedding_file(caption_path)
    if ckind != KIND_CAPTION:
        raise FormatError(f"{caption_path}: expected caption kind")
    if c_n_max != 1:
        raise FormatError(f"{caption_path}: captions must have n_max == 1")
    if c_dim != dim:
        raise FormatError(f"dim mismatch: videos {dim} vs captions {c_dim}")

    videos = []
    for valid_count, arr in vitems:
        arr[valid_count:] = 0.0  # enforce the trailing-padding invariant
        videos.append(FrameFeatureSequence(arr, valid_count))
    captions = [arr[0] for _, arr in citems]
    ds = EmbeddingDataset(videos, captions, read_pairs_file(pairs_path), dim, n_max)
    ds.validate()
    return ds


def save_dataset(ds: EmbeddingDataset, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "videos": out / "videos.bin",
        "captions": out / "captions.bin",
        "pairs": out / "pairs.bin",
    }
    write_embedding_file(
        paths["videos"], KIND_VIDEO, ds.n_max, ds.dim,
        [(v.valid_count, v.frames.data) for v in ds.videos],
    )
    write_embedding_file(
        paths["captions"], KIND_CAPTION, 1, ds.dim,
        [(1, c.reshape(1, -1)) for c in ds.captions],
    )
    write_pairs_file(paths["pairs"], ds.pairs)
    return paths


def load_dataset_dir(data_dir: str | Path) -> EmbeddingDataset:
    d = Path(data_dir)
    return load_embeddings(d / "videos.bin", d / "captions.bin", d / "pairs.bin")


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    num_videos: int = 16
    captions_per_video: int = 1
    dim: int = 16
    n_max: int = 12
    cluster_count: int = 16
    noise_sigma: float = 0.0
    motion_signal: bool = False

    def __post_init__(self):
        if self.num_videos < 1 or self.captions_per_video < 1:
            raise ConfigError("num_videos and captions_per_video must be >= 1")
        if not 1 <= self.cluster_count <= self.num_videos:
            raise ConfigError("cluster_count must lie in [1, num_videos]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.motion_signal and self.num_videos % 4:
            raise ConfigError("motion_signal requires num_videos divisible by 4")
        if self.motion_signal and self.n_max % 4:
            raise ConfigError("motion_signal requires n_max divisible by 4")


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def generate_synthetic(spec: SynthSpec) -> EmbeddingDataset:
    """Deterministic synthetic dataset of pre-extracted embeddings.

    Default mode: videos cluster around unit centers; valid frames are the
    center plus zero-sum noise (the masked frame mean equals the center
    exactly) and captions are the center plus isotropic noise.

    Motion mode: videos come in groups of four sharing one static center
    but carrying distinct zero-mean temporal patterns, so their frame
    means match to machine precision while frame-to-frame differences
    (and caption targets) separate the motion clusters. The patterns are
    chosen so every scale-4-aligned window holds the same value multiset,
    leaving mean-level features with no handle on the cluster identity.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.motion_signal:
        return _generate_motion(spec, rng)

    centers = np.stack([_unit(rng, spec.dim) for _ in range(spec.cluster_count)])
    videos, captions, pairs = [], [], []
    for v in range(spec.num_videos):
        center = centers[v % spec.cluster_count]
        valid = int(rng.integers((spec.n_max + 1) // 2, spec.n_max + 1))
        frames = np.zeros((spec.n_max, spec.dim))
        jitter = rng.normal(size=(valid, spec.dim))
        jitter -= jitter.mean(axis=0)  # zero-sum: frame mean stays on the center
        frames[:valid] = center + spec.noise_sigma * jitter
        videos.append(FrameFeatureSequence(frames, valid))
        for _ in range(spec.captions_per_video):
            captions.append(center + spec.noise_sigma * rng.normal(size=spec.dim))
            pairs.append((len(captions) - 1, v))
    ds = EmbeddingDataset(videos, captions, pairs, spec.dim, spec.n_max)
    ds.validate()
    return ds


def _generate_motion(spec: SynthSpec, rng: np.random.Generator) -> EmbeddingDataset:
    motion_dir = _unit(rng, spec.dim)  # frame-space pattern direction
    caption_dirs = (_unit(rng, spec.dim), _unit(rng, spec.dim))
    idx = np.arange(spec.n_max)
    alternating = np.where(idx % 2 == 0, 1.0, -1.0)  # period 2
    blocks = np.where(idx % 4 < 2, 1.0, -1.0)  # period 4, same window multisets
    patterns = (alternating, -alternating, blocks, -blocks)
    deltas = (caption_dirs[0], -caption_dirs[0], caption_dirs[1], -caption_dirs[1])
    amplitude, caption_shift = 0.5, 0.5

    videos, captions, pairs = [], [], []
    for _ in range(spec.num_videos // 4):
        center = _unit(rng, spec.dim)
        for pattern, delta in zip(patterns, deltas):
            frames = center + amplitude * np.outer(pattern, motion_dir)
            videos.append(FrameFeatureSequence(frames, spec.n_max))
            v = len(videos) - 1
            target = center + caption_shift * delta
            for _ in range(spec.captions_per_video):
                captions.append(target + spec.noise_sigma * rng.normal(size=spec.dim))
                pairs.append((len(captions) - 1, v))
    ds = EmbeddingDataset(videos, captions, pairs, spec.dim, spec.n_max)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# batching and splitting
# ---------------------------------------------------------------------------


def make_batches(
    ds: EmbeddingDataset, batch_size: int, seed: int, drop_last: bool = True
) -> list[list[tuple[int, int]]]:
    """Seeded shuffle of pairs into batches with no repeated video per batch
    (the diagonal must be the unique ground truth within a batch)."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    rng = np.random.default_rng(seed)
    remaining = [ds.pairs[i] for i in rng.permutation(len(ds.pairs))]
    batches = []
    while remaining:
        batch, used, leftover = [], set(), []
        for pair in remaining:
            if len(batch) < batch_size and pair[1] not in used:
                batch.append(pair)
                used.add(pair[1])
            else:
                leftover.append(pair)
        remaining = leftover
        if len(batch) == batch_size or not drop_last:
            batches.append(batch)
    return batches


def split_pairs(
    ds: EmbeddingDataset, eval_fraction: float, seed: int
) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Split pairs per video into train/eval datasets sharing the videos.

    Every video keeps at least one training caption; videos with a single
    caption contribute it to both sides so each split stays a valid dataset.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ConfigError("eval_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    by_video: dict[int, list[tuple[int, int]]] = {}
    for pair in ds.pairs:
        by_video.setdefault(pair[1], []).append(pair)

    train_pairs, eval_pairs = [], []
    for vid in sorted(by_video):
        group = [by_video[vid][i] for i in rng.permutation(len(by_video[vid]))]
        if len(group) == 1:
            train_pairs += group
            eval_pairs += group
            continue
        n_eval = min(len(group) - 1, max(1, round(eval_fraction * len(group))))
        eval_pairs += group[:n_eval]
        train_pairs += group[n_eval:]

    def subset(pairs: list[tuple[int, int]]) -> EmbeddingDataset:
        cap_ids = sorted({c for c, _ in pairs})
        remap = {c: i for i, c in enumerate(cap_ids)}
        out = EmbeddingDataset(
            videos=ds.videos,
            captions=[ds.captions[c] for c in cap_ids],
            pairs=sorted((remap[c], v) for c, v in pairs),
            dim=ds.dim,
            n_max=ds.n_max,
        )
        out.validate()
        return out

    return subset(train_pairs), subset(eval_pairs)
