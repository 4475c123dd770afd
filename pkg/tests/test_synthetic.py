import dataclasses

import numpy as np
import pytest

from pcc.config import SyntheticSpec
from pcc.errors import ConfigError
from pcc.geometry import chamfer_l2
from pcc.synthetic import depth_render, make_dataset, make_synthetic

FAMILIES = ["sphere", "box", "cylinder", "composite"]


def test_half_sphere_centroid_moves_against_cut_normal():
    s = make_synthetic(SyntheticSpec(family="sphere", occlusion=0.5), 0)
    c = s.partial.mean(axis=0)
    # the kept half lies on the negative side of the cut normal
    assert float(c @ s.cut_normal) < -0.3


@pytest.mark.parametrize("family", FAMILIES)
def test_same_seed_bit_identical(family):
    spec = SyntheticSpec(family=family)
    a, b = make_synthetic(spec, 7), make_synthetic(spec, 7)
    for f in ("partial", "complete", "features", "pixels"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.complete, make_synthetic(spec, 8).complete)


@pytest.mark.parametrize("family", FAMILIES)
def test_shapes_and_scale(family):
    spec = SyntheticSpec(family=family)
    s = make_synthetic(spec, 3)
    assert s.partial.shape == (spec.n_partial, 3)
    assert s.complete.shape == (spec.n_complete, 3)
    assert s.features.shape == ((spec.render_size // spec.patch) ** 2, spec.d_image)
    assert np.linalg.norm(s.complete, axis=1).max() <= 1.0 + 1e-6
    assert s.category == family


@pytest.mark.parametrize("family", FAMILIES)
def test_resampling_noise_floor(family):
    # two independent dense samplings of the same surface at N_c = 2048
    spec = SyntheticSpec(family=family, n_complete=2048)
    a = make_synthetic(spec, 11)
    b = make_synthetic(dataclasses.replace(spec, n_partial=spec.n_partial + 1), 11)
    assert chamfer_l2(a.complete, b.complete) < 0.01


def test_partial_is_subset_of_cut_half():
    s = make_synthetic(SyntheticSpec(family="box"), 2)
    proj = s.partial @ s.cut_normal
    assert proj.max() < (s.complete @ s.cut_normal).max()


def test_occlusion_limits():
    with pytest.raises(ConfigError):
        make_synthetic(SyntheticSpec(occlusion=0.9), 0)
    with pytest.raises(ConfigError):
        make_synthetic(SyntheticSpec(occlusion=1.0), 0)


def test_depth_render_values():
    img = depth_render(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]), 4)
    assert img.shape == (4, 4, 3)
    assert img.max() == 1.0 and img.min() == 0.0
    assert (img[..., 0] > 0).sum() == 1


def test_dataset_splits_differ_and_are_deterministic():
    spec = SyntheticSpec(n_complete=64, n_partial=32)
    tr, te = make_dataset(spec, 3, 0, "train"), make_dataset(spec, 3, 0, "test")
    assert not np.array_equal(tr[0].complete, te[0].complete)
    again = make_dataset(spec, 3, 0, "train")
    assert all(np.array_equal(a.partial, b.partial) for a, b in zip(tr, again))
    assert [s.id for s in tr] == [f"sphere_train_{i:04d}" for i in range(3)]
