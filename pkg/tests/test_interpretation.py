"""Mask optimization: loss semantics, descent, and grid rendering."""

import numpy as np
import pytest
from PIL import Image

from structssl import tensor as tt
from structssl.interpretation import (InterpretationError, MaskParams,
                                      learn_masks, mask_loss, render_mask_grid)
from structssl.models import build_model
from structssl.optim import AdamState, adam_step
from structssl.tensor import ShapeError, Tape, backward


def tiny_model(seed=0, s=2, d=2):
    return build_model(seed, s=s, d=d, k=2, widths=(2, 3, 4, 5),
                       mpnn_hidden=8, critic_hidden=16)


def rand_images(rng, n=2, side=16):
    return rng.random((n, side, side, 3))


class TestMaskLoss:
    def test_open_mask_reproduces_own_latent(self):
        model = tiny_model()
        x = rand_images(np.random.default_rng(0), n=1)[0]
        z = model.encode(x).data
        phi = tt.parameter(np.full((16, 16), 20.0))
        for row in range(model.s):
            loss = mask_loss(model, x, z[row], phi, row)
            assert loss.item() < 1e-6

    def test_closed_mask_matches_direct_masked_image_evaluation(self):
        model = tiny_model()
        x = rand_images(np.random.default_rng(1), n=1)[0]
        z = model.encode(x).data
        # sigmoid(-20) is tiny but not zero, and the normalized encoder is
        # nearly scale-invariant, so the oracle must mask the image exactly
        masked = x * (1.0 / (1.0 + np.exp(20.0)))
        zm = model.encode(masked).data
        phi = tt.parameter(np.full((16, 16), -20.0))
        for row in range(model.s):
            expected = float(((z[row] - zm[row]) ** 2).sum())
            assert mask_loss(model, x, z[row], phi, row).item() == pytest.approx(
                expected, rel=1e-4, abs=1e-9)

    def test_gradient_wrt_phi(self):
        model = tiny_model()
        rng = np.random.default_rng(2)
        x = rand_images(rng, n=1)[0]
        target = rng.standard_normal(model.d)
        phi = tt.Tensor(rng.standard_normal((16, 16)))
        discrepancy = tt.grad_check_sample(
            lambda: mask_loss(model, x, target, phi, 1),
            [phi], coords_per_tensor=12, eps=1e-7, seed=0)
        assert discrepancy < 1e-4

    def test_zero_pixels_give_exactly_zero_gradient(self):
        model = tiny_model()
        rng = np.random.default_rng(3)
        x = rand_images(rng, n=1)[0]
        x[:, :8, :] = 0.0
        target = rng.standard_normal(model.d)
        phi = tt.parameter(rng.standard_normal((16, 16)))
        with Tape() as tape:
            loss = mask_loss(model, x, target, phi, 0)
        backward(loss, tape)
        np.testing.assert_array_equal(phi.grad[:, :8], np.zeros((16, 8)))

    def test_shape_validation(self):
        model = tiny_model()
        x = rand_images(np.random.default_rng(4), n=1)[0]
        with pytest.raises(ShapeError):
            mask_loss(model, x, np.zeros(model.d), tt.parameter(np.zeros((8, 8))), 0)
        with pytest.raises(ShapeError):
            mask_loss(model, x, np.zeros(model.d + 1),
                      tt.parameter(np.zeros((16, 16))), 0)
        with pytest.raises(ShapeError):
            mask_loss(model, x, np.zeros(model.d),
                      tt.parameter(np.zeros((16, 16))), model.s)


class TestLearnMasks:
    def test_single_iteration_is_exactly_one_adam_step(self):
        model = tiny_model()
        images = rand_images(np.random.default_rng(5), n=2)
        b, s = 2, model.s
        result, trace = learn_masks(model, images, iters=1, lr=0.05, seed=9)

        # replay the internal sampling: one permutation draw, full pairing
        z_pool = model.encode(images).data
        rng = np.random.default_rng([9, 8])
        targets = z_pool[rng.permutation(b)].reshape(b * s, -1)
        phi = tt.parameter(np.zeros((b, s, 16, 16)))
        x_rep = np.repeat(images, s, axis=0)
        row_hot = np.tile(np.eye(s), (b, 1)).reshape(b * s, s, 1)
        for t in model.params.values():
            t.requires_grad = False
        with Tape() as tape:
            mask = tt.reshape(tt.sigmoid(tt.reshape(phi, (b * s, 16, 16))),
                              (b * s, 16, 16, 1))
            z = model.encode(tt.mul(mask, tt.constant(x_rep)))
            picked = tt.sum(tt.mul(z, tt.constant(row_hot)), axis=1)
            diff = tt.sub(picked, tt.constant(targets))
            loss = tt.mul(tt.mean(tt.sum(tt.mul(diff, diff), axis=1)),
                          tt.constant(float(s)))
        backward(loss, tape)
        for t in model.params.values():
            t.requires_grad = True
        expected = tt.parameter(np.zeros((b, s, 16, 16)))
        adam_step(expected, phi.grad, AdamState(lr=0.05))

        assert trace[0] == pytest.approx(loss.item(), rel=1e-12)
        np.testing.assert_allclose(result.phi.data, expected.data, atol=1e-15)

    def test_masks_property_in_unit_interval(self):
        model = tiny_model()
        images = rand_images(np.random.default_rng(6), n=2)
        result, _ = learn_masks(model, images, iters=3, lr=0.1, seed=0)
        m = result.masks
        assert m.shape == (2, model.s, 16, 16)
        assert m.min() > 0.0 and m.max() < 1.0

    def test_descent_on_every_tested_image_set(self):
        model = tiny_model(seed=2)
        for ds_seed in (0, 1, 2):
            images = rand_images(np.random.default_rng(ds_seed), n=2)
            _, trace = learn_masks(model, images, iters=120, lr=0.1, seed=1)
            assert all(np.isfinite(v) for v in trace)
            assert np.mean(trace[-20:]) < np.mean(trace[:20])

    def test_pair_subsampling_still_descends(self):
        model = tiny_model(seed=3, s=4)
        images = rand_images(np.random.default_rng(7), n=4)
        _, trace = learn_masks(model, images, iters=150, lr=0.1, seed=2,
                               pairs_per_iter=6)
        assert np.mean(trace[-25:]) < np.mean(trace[:25])

    def test_encoder_params_restored_after_run(self):
        model = tiny_model()
        images = rand_images(np.random.default_rng(8), n=2)
        before = {n: t.data.copy() for n, t in model.params.items()}
        learn_masks(model, images, iters=2, lr=0.1, seed=0)
        for n, t in model.params.items():
            np.testing.assert_array_equal(t.data, before[n])
            assert t.requires_grad

    def test_zero_iters_rejected(self):
        with pytest.raises(InterpretationError):
            learn_masks(tiny_model(), rand_images(np.random.default_rng(9)), iters=0)


class TestRenderMaskGrid:
    def test_layout_one_image_row(self, tmp_path):
        model = tiny_model(s=8, d=8)
        images = rand_images(np.random.default_rng(10), n=1, side=16)
        masks = MaskParams(phi=tt.parameter(np.zeros((1, 8, 16, 16))))
        out = render_mask_grid(masks, images, tmp_path / "grid.png")
        with Image.open(out) as im:
            assert im.size == (9 * 16, 16)

    def test_all_ones_masks_reproduce_grayscale(self, tmp_path):
        images = rand_images(np.random.default_rng(11), n=2, side=8)
        masks = MaskParams(phi=tt.parameter(np.full((2, 3, 8, 8), 40.0)))
        out = render_mask_grid(masks, images, tmp_path / "grid.png")
        arr = np.asarray(Image.open(out), dtype=np.float64) / 255.0
        gray = images.mean(axis=3)
        for i in range(2):
            for j in range(3):
                tile = arr[i * 8:(i + 1) * 8, (1 + j) * 8:(2 + j) * 8, 0]
                expected = np.clip(np.round(gray[i] * 255), 0, 255) / 255.0
                np.testing.assert_allclose(tile, expected, atol=1e-12)

    def test_bit_stable_across_runs(self, tmp_path):
        images = rand_images(np.random.default_rng(12), n=2, side=8)
        masks = MaskParams(phi=tt.parameter(
            np.random.default_rng(13).standard_normal((2, 4, 8, 8))))
        a = render_mask_grid(masks, images, tmp_path / "a.png")
        b = render_mask_grid(masks, images, tmp_path / "b.png")
        assert a.read_bytes() == b.read_bytes()

    def test_misaligned_masks_rejected(self, tmp_path):
        images = rand_images(np.random.default_rng(14), n=2, side=8)
        masks = MaskParams(phi=tt.parameter(np.zeros((3, 4, 8, 8))))
        with pytest.raises(ShapeError):
            render_mask_grid(masks, images, tmp_path / "grid.png")
