import numpy as np
import pytest

from pollisim.segmentation import (LABEL_BACKGROUND, LABEL_FLOWER,
                                   ColorHistogramModel, EmptyClassError,
                                   build_lut, build_lut_timed, classify_pixel,
                                   extract_patches, load_color_model,
                                   load_lut, save_color_model, save_lut,
                                   segment_image, train_color_model)


def two_tone_pair(flower_color, bg_color, shape=(20, 30)):
    """Image whose left half is background and right half flower."""
    h, w = shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), dtype=np.uint8)
    rgb[:, :w // 2] = bg_color
    rgb[:, w // 2:] = flower_color
    mask[:, w // 2:] = 1
    return rgb, mask


def test_training_matches_hand_histogram():
    rgb, mask = two_tone_pair((200, 10, 50), (10, 20, 30))
    model = train_color_model([(rgb, mask)], smoothing=1.0)
    # hand-built expectation: single-value histogram plus one pseudo-count
    # per bin, normalized
    n_bg = int((mask == 0).sum())
    expect = np.full(256, 1.0)
    expect[10] += n_bg
    expect /= expect.sum()
    assert np.allclose(model.likelihoods[LABEL_BACKGROUND, 0], expect)
    n_fl = int((mask == 1).sum())
    expect = np.full(256, 1.0)
    expect[200] += n_fl
    expect /= expect.sum()
    assert np.allclose(model.likelihoods[LABEL_FLOWER, 0], expect)
    # priors from smoothed pixel fractions (here both classes cover half)
    assert np.allclose(model.priors, [0.5, 0.5], atol=1e-9)


def test_classify_pixel_is_map_rule():
    rgb, mask = two_tone_pair((240, 230, 240), (30, 30, 35))
    model = train_color_model([(rgb, mask)])
    rng = np.random.default_rng(0)
    for _ in range(200):
        px = rng.integers(0, 256, size=3)
        scores = [
            np.log(model.priors[lab])
            + np.log(model.likelihoods[lab, 0, px[0]])
            + np.log(model.likelihoods[lab, 1, px[1]])
            + np.log(model.likelihoods[lab, 2, px[2]])
            for lab in range(model.num_labels)
        ]
        assert classify_pixel(model, px) == int(np.argmax(scores))


def test_trained_colors_classify_correctly():
    rgb, mask = two_tone_pair((245, 240, 245), (30, 34, 38))
    model = train_color_model([(rgb, mask)])
    assert classify_pixel(model, (245, 240, 245)) == LABEL_FLOWER
    assert classify_pixel(model, (30, 34, 38)) == LABEL_BACKGROUND


def test_empty_class_raises():
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    mask = np.zeros((8, 8), dtype=np.uint8)  # no flower pixels anywhere
    with pytest.raises(EmptyClassError):
        train_color_model([(rgb, mask)])


def test_training_rejects_bad_smoothing_and_empty_input():
    with pytest.raises(ValueError):
        train_color_model([], smoothing=1.0)
    rgb, mask = two_tone_pair((200, 10, 50), (10, 20, 30))
    with pytest.raises(ValueError):
        train_color_model([(rgb, mask)], smoothing=0.0)


def test_lut_agrees_with_direct_classifier():
    rgb, mask = two_tone_pair((245, 240, 245), (30, 34, 38))
    model = train_color_model([(rgb, mask)])
    lut = build_lut(model, bits_per_channel=8)
    rng = np.random.default_rng(1)
    colors = rng.integers(0, 256, size=(2000, 3))
    direct = np.array([classify_pixel(model, c) for c in colors])
    assert np.array_equal(lut.lookup(colors), direct)


def test_lut_table_size_and_timing():
    rgb, mask = two_tone_pair((245, 240, 245), (30, 34, 38))
    model = train_color_model([(rgb, mask)])
    lut, seconds = build_lut_timed(model, bits_per_channel=8)
    assert lut.table.shape == (1 << 24,)
    assert seconds < 10.0


def test_reduced_lut_quantizes():
    rgb, mask = two_tone_pair((245, 240, 245), (30, 34, 38))
    model = train_color_model([(rgb, mask)])
    lut5 = build_lut(model, bits_per_channel=5)
    assert lut5.table.shape == (1 << 15,)
    # colors in the same 5-bit cell share a label
    assert lut5.lookup((245, 240, 245)) == lut5.lookup((247, 242, 246))


def test_segment_image_shapes():
    rgb, mask = two_tone_pair((245, 240, 245), (30, 34, 38))
    model = train_color_model([(rgb, mask)])
    lut = build_lut(model)
    seg = segment_image(lut, rgb)
    assert seg.shape == rgb.shape[:2]
    assert (seg[:, 20:] == LABEL_FLOWER).mean() > 0.99
    assert (seg[:, :10] == LABEL_BACKGROUND).mean() > 0.99


def test_extract_patches_components_and_inflation():
    mask = np.zeros((40, 60), dtype=bool)
    mask[5:15, 5:15] = True      # area 100
    mask[20:26, 40:50] = True    # area 60
    mask[0:2, 58:60] = True      # area 4, filtered out
    patches = extract_patches(mask, min_area=50, inflation=4)
    assert [p.area for p in patches] == [100, 60]
    big = patches[0]
    # inflation grows the box and clips at the border
    assert (big.x0, big.y0, big.x1, big.y1) == (1, 1, 19, 19)
    assert big.mask.shape == (big.height, big.width)
    assert big.mask.sum() == 100
    assert np.allclose(big.centroid, (9.5, 9.5))


def test_extract_patches_eight_connectivity():
    # two pixels touching only diagonally form one component
    mask = np.zeros((10, 10), dtype=bool)
    mask[2, 2] = True
    mask[3, 3] = True
    patches = extract_patches(mask, min_area=1, inflation=0)
    assert len(patches) == 1
    assert patches[0].area == 2


def test_extract_patches_empty():
    assert extract_patches(np.zeros((5, 5), dtype=bool)) == []


def test_model_and_lut_roundtrip(tmp_path):
    rgb, mask = two_tone_pair((245, 240, 245), (30, 34, 38))
    model = train_color_model([(rgb, mask)], smoothing=2.0)
    save_color_model(model, tmp_path / "m.bin")
    loaded = load_color_model(tmp_path / "m.bin")
    assert np.array_equal(loaded.priors, model.priors)
    assert np.array_equal(loaded.likelihoods, model.likelihoods)
    assert loaded.smoothing == model.smoothing

    lut = build_lut(model)
    save_lut(lut, tmp_path / "l.bin")
    loaded_lut = load_lut(tmp_path / "l.bin")
    assert np.array_equal(loaded_lut.table, lut.table)
    assert loaded_lut.bits_per_channel == lut.bits_per_channel

    with pytest.raises(ValueError):
        load_color_model(tmp_path / "l.bin")


def test_model_validation():
    with pytest.raises(ValueError):
        ColorHistogramModel(priors=np.array([0.7, 0.7]),
                            likelihoods=np.full((2, 3, 256), 1.0 / 256),
                            smoothing=1.0)
