"""File format round-trips, synthetic generation guarantees, batching rules."""

import struct

import numpy as np
import pytest

from mstdt.data import (
    EMB_MAGIC,
    KIND_CAPTION,
    KIND_VIDEO,
    EmbeddingDataset,
    SynthSpec,
    generate_synthetic,
    load_dataset_dir,
    load_embeddings,
    make_batches,
    read_embedding_file,
    save_dataset,
    split_pairs,
    write_embedding_file,
    write_pairs_file,
)
from mstdt.errors import ConfigError, FormatError
from mstdt.temporal import FrameFeatureSequence


def small_dataset(seed=0, n_max=4, dim=3):
    rng = np.random.default_rng(seed)
    videos = []
    for valid in (4, 2):
        frames = np.zeros((n_max, dim))
        frames[:valid] = rng.normal(size=(valid, dim))
        videos.append(FrameFeatureSequence(frames, valid))
    captions = [rng.normal(size=dim) for _ in range(3)]
    pairs = [(0, 0), (1, 1), (2, 0)]
    return EmbeddingDataset(videos, captions, pairs, dim, n_max)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def test_round_trip_counts_and_values(tmp_path):
    ds = small_dataset()
    save_dataset(ds, tmp_path)
    loaded = load_dataset_dir(tmp_path)
    assert len(loaded.videos) == 2
    assert len(loaded.captions) == 3
    assert loaded.pairs == ds.pairs
    assert loaded.dim == 3 and loaded.n_max == 4


def test_round_trip_is_bitwise_lossless_at_float32(tmp_path):
    rng = np.random.default_rng(1)
    items = [(3, rng.normal(size=(4, 5)).astype(np.float32).astype(np.float64))]
    path = tmp_path / "v.bin"
    write_embedding_file(path, KIND_VIDEO, 4, 5, items)
    _, _, _, loaded = read_embedding_file(path)
    assert (loaded[0][1] == items[0][1]).all()  # float32 payload promotes exactly
    # writing what was read reproduces the same bytes
    write_embedding_file(tmp_path / "v2.bin", KIND_VIDEO, 4, 5, loaded)
    assert path.read_bytes() == (tmp_path / "v2.bin").read_bytes()


def test_truncated_payload_rejected(tmp_path):
    ds = small_dataset()
    paths = save_dataset(ds, tmp_path)
    blob = paths["videos"].read_bytes()
    paths["videos"].write_bytes(blob[:-3])
    with pytest.raises(FormatError):
        load_dataset_dir(tmp_path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"WRONGMAG" + b"\x00" * 20)
    with pytest.raises(FormatError):
        read_embedding_file(path)
    path.write_bytes(EMB_MAGIC + struct.pack("<IBIII", 9, KIND_VIDEO, 0, 4, 3))
    with pytest.raises(FormatError):
        read_embedding_file(path)


def test_dangling_pair_rejected(tmp_path):
    ds = small_dataset()
    paths = save_dataset(ds, tmp_path)
    write_pairs_file(paths["pairs"], [(0, 0), (1, 7), (2, 0)])
    with pytest.raises(FormatError):
        load_dataset_dir(tmp_path)


def test_dim_mismatch_across_files_rejected(tmp_path):
    ds = small_dataset()
    paths = save_dataset(ds, tmp_path)
    rng = np.random.default_rng(2)
    write_embedding_file(
        paths["captions"], KIND_CAPTION, 1, 5, [(1, rng.normal(size=(1, 5))) for _ in range(3)]
    )
    with pytest.raises(FormatError):
        load_dataset_dir(tmp_path)


def test_unreferenced_video_rejected(tmp_path):
    ds = small_dataset()
    paths = save_dataset(ds, tmp_path)
    write_pairs_file(paths["pairs"], [(0, 0), (1, 0), (2, 0)])  # video 1 orphaned
    with pytest.raises(FormatError):
        load_dataset_dir(tmp_path)


def test_loader_zeroes_padding_rows(tmp_path):
    rng = np.random.default_rng(3)
    frames = rng.normal(size=(4, 3))  # nonzero "padding" rows on disk
    write_embedding_file(tmp_path / "videos.bin", KIND_VIDEO, 4, 3, [(2, frames)])
    write_embedding_file(
        tmp_path / "captions.bin", KIND_CAPTION, 1, 3, [(1, rng.normal(size=(1, 3)))]
    )
    write_pairs_file(tmp_path / "pairs.bin", [(0, 0)])
    ds = load_embeddings(
        tmp_path / "videos.bin", tmp_path / "captions.bin", tmp_path / "pairs.bin"
    )
    assert (ds.videos[0].frames.data[2:] == 0.0).all()


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def test_same_seed_gives_bitwise_identical_datasets():
    spec = SynthSpec(seed=11, num_videos=6, captions_per_video=2, dim=8, n_max=6,
                     cluster_count=3, noise_sigma=0.4)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    for va, vb in zip(a.videos, b.videos):
        assert (va.frames.data == vb.frames.data).all()
        assert va.valid_count == vb.valid_count
    for ca, cb in zip(a.captions, b.captions):
        assert (ca == cb).all()
    assert a.pairs == b.pairs


def test_noiseless_captions_align_with_frame_means():
    spec = SynthSpec(seed=5, num_videos=4, dim=6, n_max=6, cluster_count=4, noise_sigma=0.0)
    ds = generate_synthetic(spec)
    mapping = ds.caption_to_video
    for c, cap in enumerate(ds.captions):
        video = ds.videos[mapping[c]]
        mean = video.frames.data[: video.valid_count].mean(axis=0)
        cos = mean @ cap / (np.linalg.norm(mean) * np.linalg.norm(cap))
        assert abs(cos - 1.0) <= 1e-12


def test_motion_clusters_share_means_but_not_differences():
    spec = SynthSpec(seed=9, num_videos=8, dim=10, n_max=12, cluster_count=2,
                     noise_sigma=0.0, motion_signal=True)
    ds = generate_synthetic(spec)
    for group in range(2):
        members = [ds.videos[4 * group + i] for i in range(4)]
        means = [v.frames.data.mean(axis=0) for v in members]
        diffs = [np.diff(v.frames.data, axis=0) for v in members]
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.max(np.abs(means[i] - means[j])) <= 1e-12
                assert np.max(np.abs(diffs[i] - diffs[j])) > 0.1


def test_motion_windows_hide_clusters_from_mean_features():
    # scale-4-aligned windows of every group member hold one value multiset
    spec = SynthSpec(seed=10, num_videos=4, dim=6, n_max=12, cluster_count=2,
                     noise_sigma=0.0, motion_signal=True)
    ds = generate_synthetic(spec)
    reference = None
    for v in ds.videos:
        windows = v.frames.data.reshape(3, 4, 6)
        sums = windows.sum(axis=1)
        if reference is None:
            reference = sums
        assert np.max(np.abs(sums - reference)) <= 1e-12


def test_generated_datasets_satisfy_invariants():
    for seed in range(5):
        spec = SynthSpec(seed=seed, num_videos=5, captions_per_video=2, dim=4, n_max=8,
                         cluster_count=2, noise_sigma=0.7)
        ds = generate_synthetic(spec)
        ds.validate()
        for v in ds.videos:
            assert (v.frames.data[v.valid_count:] == 0.0).all()
            assert 1 <= v.valid_count <= ds.n_max


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(num_videos=4, cluster_count=9)
    with pytest.raises(ConfigError):
        SynthSpec(noise_sigma=-0.1)
    with pytest.raises(ConfigError):
        SynthSpec(num_videos=6, cluster_count=2, motion_signal=True)
    with pytest.raises(ConfigError):
        SynthSpec(num_videos=8, n_max=10, cluster_count=2, motion_signal=True)


# ---------------------------------------------------------------------------
# batching and splits
# ---------------------------------------------------------------------------


def test_batches_drop_last_arithmetic():
    spec = SynthSpec(seed=1, num_videos=10, dim=4, n_max=4, cluster_count=10)
    ds = generate_synthetic(spec)  # 10 pairs
    batches = make_batches(ds, 4, seed=0, drop_last=True)
    assert [len(b) for b in batches] == [4, 4]
    batches = make_batches(ds, 4, seed=0, drop_last=False)
    assert sorted(len(b) for b in batches) == [2, 4, 4]


def test_batches_deterministic_by_seed():
    spec = SynthSpec(seed=2, num_videos=9, dim=4, n_max=4, cluster_count=9)
    ds = generate_synthetic(spec)
    assert make_batches(ds, 3, seed=5) == make_batches(ds, 3, seed=5)
    assert make_batches(ds, 3, seed=5) != make_batches(ds, 3, seed=6)


def test_batches_never_repeat_a_video():
    spec = SynthSpec(seed=3, num_videos=4, captions_per_video=3, dim=4, n_max=4,
                     cluster_count=4)
    ds = generate_synthetic(spec)  # one video has 3 captions
    for seed in range(10):
        for batch in make_batches(ds, 3, seed=seed, drop_last=False):
            videos = [v for _, v in batch]
            assert len(videos) == len(set(videos))


def test_batch_size_below_two_rejected():
    ds = generate_synthetic(SynthSpec(seed=0, num_videos=4, dim=4, n_max=4, cluster_count=4))
    with pytest.raises(ConfigError):
        make_batches(ds, 1, seed=0)


def test_split_pairs_keeps_videos_and_separates_captions():
    spec = SynthSpec(seed=4, num_videos=6, captions_per_video=2, dim=4, n_max=4,
                     cluster_count=6, noise_sigma=0.2)
    ds = generate_synthetic(spec)
    train, held = split_pairs(ds, eval_fraction=0.5, seed=0)
    train.validate()
    held.validate()
    assert len(train.pairs) == 6 and len(held.pairs) == 6
    assert len(train.videos) == len(ds.videos)
    # per video: one caption each side, and they are different captions
    for v in range(6):
        t = [train.captions[c] for c, vid in train.pairs if vid == v]
        e = [held.captions[c] for c, vid in held.pairs if vid == v]
        assert len(t) == 1 and len(e) == 1
        assert not np.array_equal(t[0], e[0])
