import numpy as np
import pytest

from softlab import synth
from softlab.errors import (
    BadMagicError,
    DimensionMismatchError,
    TruncatedFileError,
    ValidationError,
)
from softlab.synth import (
    DatasetManifest,
    InterpolationState,
    ellipse_coverage,
    generate_dataset,
    read_dataset,
    render,
    sample_state,
    soft_label_of,
    write_dataset,
)

RED_GREEN = (0, 1)


def _axis_ratio(image: np.ndarray) -> float:
    """sqrt of the eigenvalue ratio of the coverage-weighted second moments."""
    w = image.max(axis=2).astype(np.float64)
    ys, xs = np.mgrid[: w.shape[0], : w.shape[1]]
    m = w.sum()
    cy, cx = (w * ys).sum() / m, (w * xs).sum() / m
    cov = np.cov(np.stack([ys.ravel() - cy, xs.ravel() - cx]), aweights=w.ravel())
    ev = np.linalg.eigvalsh(cov)
    return float(np.sqrt(ev[1] / ev[0]))


def test_soft_label_examples():
    np.testing.assert_array_equal(soft_label_of(InterpolationState(RED_GREEN, 0.0, 0.0)).probs, [1, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(
        soft_label_of(InterpolationState(RED_GREEN, 0.5, 0.0)).probs, [0.5, 0, 0.5, 0, 0, 0]
    )
    np.testing.assert_allclose(
        soft_label_of(InterpolationState(RED_GREEN, 0.5, 0.5)).probs, [0.25, 0.25, 0.25, 0.25, 0, 0]
    )
    # blue -> red edge wraps around the class order
    np.testing.assert_allclose(
        soft_label_of(InterpolationState((2, 0), 0.25, 1.0)).probs, [0, 0.25, 0, 0, 0, 0.75]
    )


def test_non_cyclic_edge_rejected():
    with pytest.raises(ValidationError):
        InterpolationState((1, 0), 0.5, 0.0)


def test_all_pure_when_fraction_one():
    states = [sample_state(4, i, 1.0, 60) for i in range(60)]
    assert all(s.is_pure for s in states)
    assert all(max(soft_label_of(s).probs) == 1.0 for s in states)


def test_pure_count_is_exact():
    states = [sample_state(0, i, 0.4, 15000) for i in range(15000)]
    pure = [s for s in states if s.is_pure]
    assert len(pure) == 6000
    classes = np.bincount([int(np.argmax(soft_label_of(s).probs)) for s in pure], minlength=6)
    assert classes.tolist() == [1000] * 6


def test_state_deterministic():
    assert sample_state(9, 123, 0.4, 500) == sample_state(9, 123, 0.4, 500)


def test_interpolated_states_are_ambiguous():
    for i in range(300):
        s = sample_state(1, i, 0.4, 300)
        label = soft_label_of(s)
        assert np.count_nonzero(label.probs) <= 4
        if not s.is_pure:
            assert max(label.probs) < 1.0


def test_render_circle_is_round():
    img = render(InterpolationState(RED_GREEN, 0.0, 0.0), 32, 32, rng_seed=5)
    assert abs(_axis_ratio(img) - 1.0) < 0.05


def test_render_ellipse_axis_ratio():
    img = render(InterpolationState(RED_GREEN, 0.0, 1.0), 32, 32, rng_seed=5)
    assert abs(_axis_ratio(img) - 2.0) < 0.15


def test_render_pure_red_channels():
    img = render(InterpolationState(RED_GREEN, 0.0, 0.0), 32, 32, rng_seed=1)
    fg = img.max(axis=2) > 0
    assert fg.any()
    assert np.all(img[..., 1:] == 0)
    assert np.all(img[fg, 0] > 0)
    # background stays black
    assert img[0, 0].tolist() == [0, 0, 0]


def test_render_blend_colour():
    img = render(InterpolationState((1, 2), 0.25, 0.0), 32, 32, rng_seed=2)
    inner = img[img.max(axis=2) == img.max()]
    # fully covered pixels carry the rounded linear blend 0.75 green + 0.25 blue
    assert inner[0].tolist() == [0, 191, 64]


def test_circle_area():
    cover = ellipse_coverage(32, 32, 16.0, 16.0, 10.0, 10.0, 0.0)
    assert abs(cover.sum() - np.pi * 100) / (np.pi * 100) < 0.05


def test_render_rejects_tiny_images():
    with pytest.raises(ValidationError):
        render(InterpolationState(RED_GREEN, 0, 0), 8, 32)


def test_small_dataset_split_counts():
    ds = generate_dataset(DatasetManifest(count=10, seed=3))
    assert np.bincount(ds.splits, minlength=3).tolist() == [6, 2, 2]


def test_manifest_rejects_bad_fractions():
    with pytest.raises(ValidationError):
        DatasetManifest(split_fractions=(0.5, 0.2, 0.2))


def test_dataset_labels_valid():
    ds = generate_dataset(DatasetManifest(count=120, seed=8))
    np.testing.assert_allclose(ds.labels.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((ds.labels > 0).sum(axis=1) <= 4)
    for sample in ds.samples():
        np.testing.assert_allclose(sample.soft_label.probs, soft_label_of(sample.state).probs, atol=1e-7)


@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(DatasetManifest(count=40, seed=2, image_size=(16, 24)))


def test_dataset_file_round_trip(tmp_path, small_ds):
    path = tmp_path / "d.sld"
    write_dataset(path, small_ds)
    back = read_dataset(path)
    np.testing.assert_array_equal(back.images, small_ds.images)
    np.testing.assert_array_equal(back.labels, small_ds.labels)
    np.testing.assert_array_equal(back.splits, small_ds.splits)
    assert back.manifest == small_ds.manifest
    assert back.to_bytes() == path.read_bytes()


def test_dataset_file_layout(tmp_path, small_ds):
    raw = small_ds.to_bytes()
    assert raw[:4] == b"SLD1"
    assert np.frombuffer(raw[4:24], "<u4").tolist() == [40, 16, 24, 3, 6]
    assert len(raw) == 24 + 40 * (1 + 16 * 24 * 3 + 6 * 4)
    first = raw[24:]
    assert first[0] == small_ds.splits[0]
    assert first[1 : 1 + 16 * 24 * 3] == small_ds.images[0].tobytes()
    np.testing.assert_array_equal(np.frombuffer(first[1 + 16 * 24 * 3 : 1 + 16 * 24 * 3 + 24], "<f4"), small_ds.labels[0])


def test_generation_is_deterministic(tmp_path):
    m = DatasetManifest(count=30, seed=7)
    a, b = tmp_path / "a.sld", tmp_path / "b.sld"
    write_dataset(a, generate_dataset(m))
    write_dataset(b, generate_dataset(m))
    assert a.read_bytes() == b.read_bytes()


def test_corrupt_magic(tmp_path, small_ds):
    path = tmp_path / "bad.sld"
    path.write_bytes(b"XLD1" + small_ds.to_bytes()[4:])
    with pytest.raises(BadMagicError, match="bad magic"):
        read_dataset(path)


def test_truncated_payload(tmp_path, small_ds):
    path = tmp_path / "short.sld"
    path.write_bytes(small_ds.to_bytes()[:-10])
    with pytest.raises(TruncatedFileError, match="truncated"):
        read_dataset(path)


def test_dimension_mismatch(tmp_path, small_ds):
    raw = bytearray(small_ds.to_bytes())
    raw[20:24] = (3).to_bytes(4, "little")  # claims three classes
    path = tmp_path / "dims.sld"
    path.write_bytes(bytes(raw))
    with pytest.raises(DimensionMismatchError):
        read_dataset(path)


def test_resplit_keeps_sizes():
    a = synth.split_assignment(100, (0.6, 0.2, 0.2), 0, 1)
    b = synth.split_assignment(100, (0.6, 0.2, 0.2), 0, 2)
    assert np.bincount(a).tolist() == np.bincount(b).tolist() == [60, 20, 20]
    assert not np.array_equal(a, b)
