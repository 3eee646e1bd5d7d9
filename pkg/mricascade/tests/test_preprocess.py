import numpy as np
import pytest

from mricascade.preprocess import (AugmentationConfig, DisplacementField,
                                   ElasticDeformParams, PreprocessConfig,
                                   PreprocessError, augment,
                                   coarse_displacements, elastic_deform,
                                   materialize_augmentations, normalize,
                                   preprocess_patient, resize,
                                   sample_displacement_field)

IDENTITY = AugmentationConfig(rotations=(),
                              flip_horizontal=False,
                              flip_vertical=False,
                              max_translation=0,
                              noise_sigma=0.0,
                              elastic=None,
                              copies_per_sample=3)


def test_normalize_constant_slice_is_zero():
    assert np.array_equal(normalize(np.full((8, 8), 0.7)), np.zeros((8, 8)))


def test_normalize_hand_zscore():
    out = normalize(np.array([[0.0, 1.0], [2.0, 3.0]]))
    expected = np.array([[-1.3416, -0.4472], [0.4472, 1.3416]])
    assert np.allclose(out, expected, atol=1e-4)


def test_normalize_rejects_non_finite():
    with pytest.raises(PreprocessError):
        normalize(np.array([[0.0, np.nan]]))


def test_resize_identity_and_constants():
    rng = np.random.default_rng(0)
    image = rng.random((20, 20))
    assert np.allclose(resize(image, 20), image, atol=1e-9)
    assert np.allclose(resize(np.full((20, 20), 0.3), 37), 0.3, atol=1e-9)
    assert np.allclose(resize(np.full((20, 20), 0.3), 8), 0.3, atol=1e-9)


def test_resize_matches_linear_ramp():
    side = 512
    cols = np.arange(side, dtype=np.float64)
    ramp = np.tile(cols / (side - 1), (side, 1))

    out = resize(ramp, 256)

    # pixel centres of the output grid map to 2c + 0.5 on the input grid
    for c in (32, 100, 128, 200):
        expected = (2 * c + 0.5) / (side - 1)
        assert abs(out[128, c] - expected) < 1e-2


def test_preprocess_patient_resizes_masks_with_nearest(patient_factory):
    record = patient_factory(size=16)
    out = preprocess_patient(record, PreprocessConfig(target_size=32))
    assert out.slices[0].shape == (32, 32)
    assert set(np.unique(out.masks[0])) <= {0, 1}
    assert out.masks[0].sum() == record.masks[0].sum() * 4
    assert abs(out.slices[0].mean()) < 1e-9


def test_zero_sigma_field_is_zero():
    field = sample_displacement_field(ElasticDeformParams(sigma=0.0), 16, 16, 5)
    assert not field.dx.any() and not field.dy.any()


def test_displacement_field_is_seeded():
    params = ElasticDeformParams(grid_shape=(3, 3), sigma=4.0)
    a = sample_displacement_field(params, 24, 24, seed=9)
    b = sample_displacement_field(params, 24, 24, seed=9)
    c = sample_displacement_field(params, 24, 24, seed=10)
    assert np.array_equal(a.dx, b.dx) and np.array_equal(a.dy, b.dy)
    assert not np.array_equal(a.dx, c.dx)
    assert a.shape == (24, 24)


def test_grid_larger_than_image_is_rejected():
    with pytest.raises(PreprocessError):
        sample_displacement_field(ElasticDeformParams(grid_shape=(9, 9)), 8, 8, 0)


def test_zero_field_is_bit_exact_identity(patient_factory):
    record = patient_factory()
    image, mask = record.slices[0], record.masks[0]
    zeros = np.zeros(image.shape)
    out, out_mask = elastic_deform(image, mask,
                                   DisplacementField(zeros, zeros.copy()))
    assert np.array_equal(out, image)
    assert np.array_equal(out_mask, mask)


def test_constant_field_is_an_integer_shift():
    rng = np.random.default_rng(1)
    image = rng.random((24, 24))
    field = DisplacementField(np.full((24, 24), 5.0), np.zeros((24, 24)))

    out, _ = elastic_deform(image, None, field)

    # out(r, c) = in(r, c + 5) away from the mirrored border, pixels in float32
    assert np.array_equal(out[:, 2:17], image.astype(np.float32)[:, 7:22])


def test_mismatched_field_shape():
    field = DisplacementField(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(PreprocessError):
        elastic_deform(np.zeros((9, 9)), None, field)


def test_zero_copies():
    cfg = IDENTITY.model_copy(update={"copies_per_sample": 0})
    assert augment(np.zeros((8, 8)), None, cfg, seed=0) == []


def test_disabled_options_reproduce_input(patient_factory):
    record = patient_factory()
    pairs = augment(record.slices[0], record.masks[0], IDENTITY, seed=2)
    assert len(pairs) == 3
    for image, mask in pairs:
        assert np.array_equal(image, record.slices[0])
        assert np.array_equal(mask, record.masks[0])


def test_horizontal_flip_is_an_involution(patient_factory):
    record = patient_factory(lesion=(2, 3, 4))
    cfg = IDENTITY.model_copy(update={
        "flip_horizontal": True,
        "flip_probability": 1.0,
        "copies_per_sample": 1
    })
    [(once, once_mask)] = augment(record.slices[0], record.masks[0], cfg, 0)
    [(twice, twice_mask)] = augment(once, once_mask, cfg, 1)

    assert np.array_equal(once, record.slices[0][:, ::-1])
    assert np.array_equal(twice, record.slices[0])
    assert np.array_equal(twice_mask, record.masks[0])


def test_augment_is_deterministic_and_keeps_masks_binary(patient_factory):
    record = patient_factory(size=24, lesion=(8, 8, 6))
    cfg = AugmentationConfig(elastic=ElasticDeformParams(sigma=2.0),
                             copies_per_sample=2)
    first = augment(record.slices[0], record.masks[0], cfg, seed=11)
    second = augment(record.slices[0], record.masks[0], cfg, seed=11)
    for (a, am), (b, bm) in zip(first, second):
        assert np.array_equal(a, b) and np.array_equal(am, bm)
        assert set(np.unique(am)) <= {0, 1}
    assert not np.array_equal(first[0][0], first[1][0])


def test_materialize_writes_pngs(tmp_path, patient_factory):
    record = patient_factory()
    pairs = augment(record.slices[0], record.masks[0], IDENTITY, seed=0)
    written = materialize_augmentations(pairs, tmp_path, prefix="p")
    assert len(written) == 6
    assert all(path.is_file() for path in written)


def test_coarse_draws_have_the_configured_spread():
    params = ElasticDeformParams(grid_shape=(50, 100), sigma=10.0)
    draws = coarse_displacements(params, seed=4)
    assert draws.size == 10_000
    assert 9.5 <= draws.std() <= 10.5


def test_noise_touches_the_image_only():
    rng = np.random.default_rng(8)
    image = rng.random((256, 256))
    mask = (image > 0.5).astype(np.uint8)
    sigma = 0.04
    cfg = IDENTITY.model_copy(update={"noise_sigma": sigma,
                                      "copies_per_sample": 1})

    [(noisy, noisy_mask)] = augment(image, mask, cfg, seed=3)

    expected = sigma * np.sqrt(2.0 / np.pi)
    assert abs(np.abs(noisy - image).mean() - expected) < 0.02 * expected
    assert np.array_equal(noisy_mask, mask)


def _marker(size=256, top=116, side=24):
    image = np.zeros((size, size))
    mask = np.zeros((size, size), np.uint8)
    image[top:top + side, top:top + side] = 1.0
    mask[top:top + side, top:top + side] = 1
    return image, mask


def _centroid(weights):
    rows, cols = np.indices(weights.shape)
    total = weights.sum()
    return np.array([(rows * weights).sum(), (cols * weights).sum()]) / total


def test_image_and_mask_centroids_move_together():
    image, mask = _marker()
    cfg = AugmentationConfig(noise_sigma=0.0, copies_per_sample=1)
    gaps = []
    for seed in range(100):
        [(out, out_mask)] = augment(image, mask, cfg, seed)
        gaps.append(np.linalg.norm(
            _centroid(out) - _centroid(out_mask.astype(np.float64))))
    assert max(gaps) < 0.5


def test_whole_pixel_shift_moves_image_and_mask_alike(patient_factory):
    record = patient_factory(size=24, lesion=(8, 8, 4))
    cfg = IDENTITY.model_copy(update={"max_translation": 3,
                                      "copies_per_sample": 4})
    for image, mask in augment(record.slices[0], record.masks[0], cfg, 6):
        moved = np.argwhere(mask)
        source = np.argwhere(record.masks[0])
        offset = moved.mean(axis=0) - source.mean(axis=0)
        dr, dc = (int(v) for v in np.rint(offset))
        assert np.allclose(offset, (dr, dc))
        original = record.slices[0]
        assert np.array_equal(image[3:21, 3:21],
                              original[3 - dr:21 - dr, 3 - dc:21 - dc])
