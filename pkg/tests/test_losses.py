import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from cyclecorr import losses as L
from cyclecorr import synth
from cyclecorr.cycle import MAP_KEYS
from cyclecorr.field import Tape, value_of
from cyclecorr.warp import warp

unit = st.floats(0, 1, allow_nan=False)


def const(h, w, u, v=0.0):
    f = np.zeros((h, w, 2))
    f[..., 0], f[..., 1] = u, v
    return f


def test_default_weights_and_validation():
    w = L.LossWeights()
    assert (w.alpha, w.beta, w.lambda_sm, w.lambda_lr, w.lambda_2warp) == (0.85, 10, 10, 0.5, 0.2)
    assert (w.ssim_c1, w.ssim_c2, w.ssim_window) == (1e-4, 9e-4, 3)
    for bad in ({"lambda_sm": -1}, {"alpha": 1.5}, {"ssim_window": 4}):
        with pytest.raises(ValueError):
            L.LossWeights(**bad)


def test_reconstruction_identity_and_pure_l1():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert float(L.reconstruction_loss(img, img)) == 0.0
    w = L.LossWeights(alpha=0.0)
    assert float(L.reconstruction_loss(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), weights=w)) == 1.0


def test_reconstruction_l1_gradient_is_zero_at_ties():
    img = np.random.default_rng(1).random((6, 6, 1))
    tape = Tape()
    r = tape.variable(img)
    tape.backward(L.reconstruction_loss(img, r, weights=L.LossWeights(alpha=0.0)))
    assert np.all(r.grad == 0)


def test_reconstruction_respects_mask_normalisation():
    t = np.zeros((2, 2, 1))
    r = np.array([[1.0, 0.0], [0.0, 0.0]])[..., None]
    m = np.array([[1.0, 1.0], [0.0, 0.0]])[..., None]
    assert float(L.reconstruction_loss(t, r, m, L.LossWeights(alpha=0.0))) == 0.5


@given(arrays(np.float64, (5, 6, 2), elements=unit), arrays(np.float64, (5, 6, 2), elements=unit))
def test_ssim_bounded(a, b):
    s = L.ssim(a, b)
    assert np.all(s >= -1 - 1e-12) and np.all(s <= 1 + 1e-12)


def test_smoothness_examples():
    img = np.random.default_rng(2).random((6, 6, 3))
    assert float(L.smoothness_loss(const(6, 6, 2.5, -1.0), img)) == 0.0
    ys, xs = np.mgrid[0:6, 0:6].astype(float)
    affine = np.stack([ys + 2 * xs, 3 * ys - xs], axis=-1)
    assert float(L.smoothness_loss(affine, img)) == pytest.approx(0.0, abs=1e-12)
    row = np.zeros((1, 4, 2))
    row[0, :, 0] = [0, 0, 4, 4]
    assert float(L.smoothness_loss(row, np.full((1, 4, 1), 0.5), beta=123.0)) == 2.0


def test_smoothness_edge_weight_follows_image_gradient():
    row = np.zeros((1, 4, 2))
    row[0, :, 0] = [0, 0, 4, 4]
    img = np.array([0.0, 0.0, 0.1, 0.1]).reshape(1, 4, 1)
    # |dI/dx| = 0.1 at column 1, 0 at column 2
    expected = (4 * np.exp(-10 * 0.1) + 4 * 1.0) / 4
    assert float(L.smoothness_loss(row, img, beta=10)) == pytest.approx(expected)


def test_lr_examples():
    assert float(L.lr_consistency_loss(np.zeros((5, 5, 2)), np.zeros((5, 5, 2)))) == 0.0
    assert float(L.lr_consistency_loss(const(8, 10, 3.0), const(8, 10, -3.0))) == 0.0
    assert float(L.lr_consistency_loss(const(8, 10, 3.0), const(8, 10, -1.0))) == 2.0


def _gt_two_warp_masks(cyc, variant, erode=1):
    """Pixels whose chained and direct reconstructions both see the target surface."""
    out = []
    for path in L.two_warp_paths(variant):
        first, second = path.via_maps
        occ = cyc.gt_occlusion
        chain = occ[first][..., 0] * (warp(occ[second], cyc.gt_maps[first])[..., 0] > 0.999)
        vis = chain * occ[path.direct][..., 0]
        out.append(_interior(vis, erode))
    return out


def _interior(mask, erode=1):
    # drop pixels whose 3x3 SSIM window touches an excluded pixel
    m = np.asarray(mask)
    m = m[..., 0] if m.ndim == 3 else m
    core = ndimage.binary_erosion(m > 0, structure=np.ones((3, 3)), iterations=erode,
                                  border_value=0)
    return core[..., None].astype(float)


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_two_warp_vanishes_on_translation_ground_truth(variant):
    cyc = synth.render_cycle(synth.translation_scene())
    occ = L.occlusion_maps(cyc.gt_maps)
    masks = [_interior(L.two_warp_mask(p, cyc.gt_maps, occ)) for p in L.two_warp_paths(variant)]
    assert float(L.two_warp_loss(cyc.images, cyc.gt_maps, variant, masks=masks)) < 1e-3
    # the full default mask only adds a thin band at its edge
    assert float(L.two_warp_loss(cyc.images, cyc.gt_maps, variant)) < 5e-3


@pytest.mark.parametrize("seed", [0, 3, 5])
@pytest.mark.parametrize("variant", [1, 2, 3])
def test_two_warp_vanishes_on_sprite_ground_truth(seed, variant):
    cyc = synth.render_cycle(synth.suite_scene(seed))
    masks = _gt_two_warp_masks(cyc, variant)
    loss = L.two_warp_loss(cyc.images, cyc.gt_maps, variant, masks=masks)
    assert float(loss) < 1e-3


def test_two_warp_zero_maps_identical_images():
    img = np.random.default_rng(3).random((8, 8, 3))
    images = {f: img for f in ("l0", "r0", "l1", "r1")}
    maps = {k: np.zeros((8, 8, 2)) for k in MAP_KEYS}
    for v in (1, 2, 3):
        assert float(L.two_warp_loss(images, maps, v)) == 0.0


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_two_warp_increases_when_flow_is_perturbed(variant):
    cyc = synth.render_cycle(synth.translation_scene())
    base = float(L.two_warp_loss(cyc.images, cyc.gt_maps, variant))
    maps = dict(cyc.gt_maps)
    maps[("l0", "l1")] = maps[("l0", "l1")] + const(64, 64, 1.0)
    maps[("r1", "r0")] = maps[("r1", "r0")] + const(64, 64, 1.0)
    occ = L.occlusion_maps(cyc.gt_maps)
    assert float(L.two_warp_loss(cyc.images, maps, variant, occlusions=occ)) > base


def test_two_warp_unknown_variant_and_carry():
    with pytest.raises(ValueError):
        L.two_warp_paths(4)
    cyc = synth.render_cycle(synth.translation_scene(size=16, disparity=2, flow=(1, 0)))
    with pytest.raises(ValueError):
        L.two_warp_loss(cyc.images, cyc.gt_maps, 1, carry="sideways")


def test_variant_descriptors_are_mirrored_pairs():
    for v in (1, 2, 3):
        p, q = L.two_warp_paths(v)
        assert q.mirrored() == p
        assert p.via_maps[0][0] == p.target == p.direct[0]
        assert p.via_maps[0][1] == p.via_maps[1][0]
        assert p.via_maps[1][1] != p.direct[1] or v == 2


def test_carry_modes_agree_for_uniform_stereo():
    cyc = synth.render_cycle(synth.translation_scene())
    a = L.two_warp_loss(cyc.images, cyc.gt_maps, 1, carry="literal")
    b = L.two_warp_loss(cyc.images, cyc.gt_maps, 1, carry="consistent")
    assert float(a) == pytest.approx(float(b), abs=1e-12)


@pytest.fixture(scope="module")
def scene():
    return synth.render_cycle(synth.occlusion_scene())


def test_total_loss_report_structure(scene):
    rep = L.total_loss(scene.images, scene.gt_maps)
    rec = {k for k in rep.terms if k[0] == "rec"}
    assert len(rec) == 8 * 4
    assert len([k for k in rep.terms if k[0] == "sm"]) == 8 * 4
    assert len([k for k in rep.terms if k[0] == "lr"]) == 4 * 4
    assert {k[1] for k in rep.terms if k[0] == "2warp"} == {0}
    assert len([k for k in rep.terms if k[0] == "2warp"]) == 2
    assert rep.total == pytest.approx(rep.combined(), rel=1e-12)
    assert np.isfinite(rep.total)


def test_total_loss_zero_weights_leave_reconstruction(scene):
    maps = synth.perturb(scene.gt_maps, 0.5, seed=1)
    w = L.LossWeights(lambda_sm=0, lambda_lr=0, lambda_2warp=0)
    rep = L.total_loss(scene.images, maps, w)
    assert rep.total == pytest.approx(rep.rec, rel=1e-12)


def test_total_loss_is_linear_in_lambda(scene):
    maps = synth.perturb(scene.gt_maps, 0.5, seed=2)
    r1 = L.total_loss(scene.images, maps, L.LossWeights(lambda_sm=10))
    r2 = L.total_loss(scene.images, maps, L.LossWeights(lambda_sm=20))
    assert r2.sm == pytest.approx(r1.sm, rel=1e-12)
    assert (r2.total - r1.total) == pytest.approx(10 * r1.sm, rel=1e-9)


def test_ground_truth_consistency_terms_are_small(scene):
    rep = L.total_loss(scene.images, scene.gt_maps)
    lr = [v for k, v in rep.terms.items() if k[0] == "lr" and k[1] == 0]
    assert max(lr) < 1e-3
    print("ground-truth total loss (photometric floor):", rep.total)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_perturbation_raises_total_loss(scene, sigma):
    gt = L.total_loss(scene.images, scene.gt_maps).total
    noisy = L.total_loss(scene.images, synth.perturb(scene.gt_maps, sigma, seed=0)).total
    assert noisy > gt


def test_total_loss_gradient_reaches_every_map(scene):
    tape = Tape()
    maps = {k: tape.variable(v) for k, v in synth.perturb(scene.gt_maps, 0.3, seed=4).items()}
    rep = L.total_loss(scene.images, maps)
    tape.backward(rep.loss)
    for k, v in maps.items():
        assert v.grad is not None and np.any(v.grad != 0), k


def test_pair_only_maps():
    cyc = synth.render_cycle(synth.translation_scene(size=32))
    maps = {k: cyc.gt_maps[k] for k in (("l0", "l1"), ("l1", "l0"))}
    rep = L.total_loss(cyc.images, maps, lr_on_stereo=True)
    assert not any(k[0] in ("lr", "2warp") for k in rep.terms)


def test_num_scales_stops_at_minimum_extent():
    assert L.num_scales((64, 64), 4) == 4
    assert L.num_scales((16, 16), 4) == 2
    assert L.num_scales((8, 8), 4) == 1
    pyr = L.map_pyramid({("l0", "r0"): const(16, 16, 4.0)}, 2)
    assert np.allclose(value_of(pyr[1][("l0", "r0")])[..., 0], 2.0)
