"""Scene generator: determinism, rasterization goldens, noise-model oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crackseg.synthdata import (
    CrackSpec,
    NoiseSpec,
    SceneSpec,
    Sample,
    corrupt_labels,
    derive_sample_seeds,
    generate_sample,
    load_image_png,
    load_mask_png,
    load_split,
    make_dataset,
    rasterize,
    save_image_png,
    save_mask_png,
    write_manifest,
    write_split,
)

# frozen on the first run of the rasterizer; guards geometry/stamping changes
GOLDEN_PIXELS = 368


def small_crack(**kw):
    base = dict(n_cracks=1, walk_steps=10, step_sigma=0.5, branch_prob=0.0)
    base.update(kw)
    return CrackSpec(**base)


# --- generate_sample ----------------------------------------------------

def test_no_cracks_empty_mask():
    sample, segments = generate_sample(CrackSpec(n_cracks=0), SceneSpec(), seed=0)
    assert not sample.clean_mask.any()
    assert segments == []
    assert np.array_equal(sample.clean_mask, sample.noisy_mask)


def test_generation_deterministic():
    a, segs_a = generate_sample(CrackSpec(), SceneSpec(), seed=42)
    b, segs_b = generate_sample(CrackSpec(), SceneSpec(), seed=42)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.clean_mask, b.clean_mask)
    assert len(segs_a) == len(segs_b)
    assert all(sa.p0 == sb.p0 and sa.width == sb.width
               for sa, sb in zip(segs_a, segs_b))


def test_golden_crack_pixel_count():
    spec = CrackSpec(n_cracks=1, walk_steps=50, width_range=(1.0, 3.0))
    sample, _ = generate_sample(spec, SceneSpec(), seed=7)
    assert int(sample.clean_mask.sum()) == GOLDEN_PIXELS


def test_clean_mask_is_rasterized_geometry():
    sample, segments = generate_sample(CrackSpec(), SceneSpec(), seed=3)
    assert np.array_equal(sample.clean_mask, rasterize(segments, 64, 64))


def test_crack_pixels_darker_than_surroundings():
    sample, segments = generate_sample(
        small_crack(depth_range=(0.4, 0.5)),
        SceneSpec(texture_amplitude=0.0, speckle_sigma=0.0), seed=5)
    crack_px = sample.image[sample.clean_mask]
    bg_px = sample.image[~sample.clean_mask]
    assert crack_px.mean() < bg_px.mean() - 0.3


def test_image_intensity_range():
    for seed in range(5):
        sample, _ = generate_sample(CrackSpec(), SceneSpec(speckle_sigma=0.2), seed=seed)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0


def test_spec_validation_names_field():
    with pytest.raises(ValueError, match="width_range"):
        generate_sample(CrackSpec(width_range=(0.5, 2.0)), SceneSpec(), seed=0)
    with pytest.raises(ValueError, match="n_cracks"):
        generate_sample(CrackSpec(n_cracks=-1), SceneSpec(), seed=0)
    with pytest.raises(ValueError, match="height"):
        generate_sample(CrackSpec(), SceneSpec(height=16), seed=0)
    with pytest.raises(ValueError, match="under_rate"):
        NoiseSpec(under_rate=1.5).validate()


# --- corrupt_labels -----------------------------------------------------

def test_corruption_identity_when_disabled():
    sample, segments = generate_sample(CrackSpec(), SceneSpec(), seed=1)
    noisy = corrupt_labels(sample.clean_mask, segments, NoiseSpec(), seed=9)
    assert np.array_equal(noisy, sample.clean_mask)


def test_full_drop_empties_mask():
    sample, segments = generate_sample(small_crack(width_range=(1.0, 2.0)),
                                       SceneSpec(), seed=2)
    noise = NoiseSpec(under_rate=1.0, thin_width_max=2.0)
    noisy = corrupt_labels(sample.clean_mask, segments, noise, seed=0)
    assert not noisy.any()


def test_drop_stream_replay_oracle():
    """The documented draw order lets an external replay predict the drops."""
    sample, segments = generate_sample(small_crack(), SceneSpec(), seed=11)
    assert len(segments) == 10
    noise = NoiseSpec(under_rate=0.5, thin_width_max=3.0)
    noisy = corrupt_labels(sample.clean_mask, segments, noise, seed=3)
    uniforms = np.random.default_rng(3).random(len(segments))
    kept = [seg for seg, u in zip(segments, uniforms)
            if not (seg.width <= noise.thin_width_max and u < noise.under_rate)]
    assert np.array_equal(noisy, rasterize(kept, 64, 64))
    assert len(kept) < len(segments)  # the oracle actually exercised drops


def test_wide_segments_protected_from_drops():
    sample, segments = generate_sample(small_crack(width_range=(2.5, 3.0)),
                                       SceneSpec(), seed=4)
    noise = NoiseSpec(under_rate=1.0, thin_width_max=2.0)
    noisy = corrupt_labels(sample.clean_mask, segments, noise, seed=1)
    assert np.array_equal(noisy, sample.clean_mask)


def test_under_annotation_only_removes():
    sample, segments = generate_sample(CrackSpec(), SceneSpec(), seed=6)
    noise = NoiseSpec(under_rate=0.6, thin_width_max=3.0)
    noisy = corrupt_labels(sample.clean_mask, segments, noise, seed=2)
    assert not (noisy & ~sample.clean_mask).any()


def test_over_annotation_adds_blobs():
    sample, segments = generate_sample(CrackSpec(n_cracks=0), SceneSpec(), seed=7)
    noise = NoiseSpec(over_rate=3.0)
    noisy = corrupt_labels(sample.clean_mask, segments, noise, seed=5)
    assert noisy.sum() > 0  # blobs on an empty label


def test_corruption_deterministic():
    sample, segments = generate_sample(CrackSpec(), SceneSpec(), seed=8)
    noise = NoiseSpec(under_rate=0.4, over_rate=1.0, jitter_px=1.0)
    a = corrupt_labels(sample.clean_mask, segments, noise, seed=13)
    b = corrupt_labels(sample.clean_mask, segments, noise, seed=13)
    assert np.array_equal(a, b)


# --- make_dataset -------------------------------------------------------

def test_dataset_composition_single_sample():
    crack, scene, noise = CrackSpec(), SceneSpec(), NoiseSpec(under_rate=0.5)
    data = make_dataset(1, crack, scene, noise, seed=21)
    assert len(data) == 1 and data[0].id == "0000"
    scene_seed, noise_seed = derive_sample_seeds(21, 0)
    expect, segments = generate_sample(crack, scene, scene_seed, sample_id="0000")
    assert np.array_equal(data[0].image, expect.image)
    assert np.array_equal(data[0].clean_mask, expect.clean_mask)
    assert np.array_equal(
        data[0].noisy_mask,
        corrupt_labels(expect.clean_mask, segments, noise, noise_seed))


def test_dataset_ids_and_determinism():
    a = make_dataset(5, CrackSpec(), SceneSpec(), NoiseSpec(), seed=2)
    b = make_dataset(5, CrackSpec(), SceneSpec(), NoiseSpec(), seed=2)
    assert [s.id for s in a] == ["0000", "0001", "0002", "0003", "0004"]
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.noisy_mask, sb.noisy_mask)


def test_dataset_rejects_empty():
    with pytest.raises(ValueError):
        make_dataset(0, CrackSpec(), SceneSpec(), NoiseSpec(), seed=0)


def test_dataset_crack_fraction_reasonable():
    data = make_dataset(50, CrackSpec(), SceneSpec(), NoiseSpec(), seed=17)
    total = sum(s.clean_mask.sum() for s in data)
    pixels = sum(s.clean_mask.size for s in data)
    assert 0.0 < total / pixels < 0.25


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=15, deadline=None)
def test_noisy_subset_of_clean_property(seed):
    data = make_dataset(2, CrackSpec(n_cracks=1, walk_steps=30), SceneSpec(),
                        NoiseSpec(under_rate=0.7, thin_width_max=3.0), seed=seed)
    for s in data:
        assert not (s.noisy_mask & ~s.clean_mask).any()
        assert s.image.shape == s.clean_mask.shape == s.noisy_mask.shape


# --- on-disk format -----------------------------------------------------

def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(30)
    image = rng.random((40, 40))
    mask = rng.random((40, 40)) < 0.2
    save_image_png(tmp_path / "img.png", image)
    save_mask_png(tmp_path / "mask.png", mask)
    back_img = load_image_png(tmp_path / "img.png")
    back_mask = load_mask_png(tmp_path / "mask.png")
    assert back_img == pytest.approx(image, abs=0.5 / 255.0)  # 8-bit quantization
    assert np.array_equal(back_mask, mask)


def test_split_write_and_load(tmp_path):
    data = make_dataset(3, CrackSpec(), SceneSpec(), NoiseSpec(under_rate=0.3),
                        seed=4)
    records = write_split(data, tmp_path, "train", label_noise=True)
    write_manifest(records, tmp_path)
    assert (tmp_path / "manifest.jsonl").exists()
    assert all(r["label_noise"] for r in records)
    back = load_split(tmp_path, "train")
    assert [s.id for s in back] == [s.id for s in data]
    for orig, loaded in zip(data, back):
        assert np.array_equal(orig.clean_mask, loaded.clean_mask)
        assert np.array_equal(orig.noisy_mask, loaded.noisy_mask)
        assert loaded.image == pytest.approx(orig.image, abs=0.5 / 255.0)
