"""Subnets, fusion, heads, pooling, and the whole-image forward pass."""

import math

import numpy as np
import pytest

from jscar.dataset import PatchQuad
from jscar.network import (
    ForwardOutput,
    NetworkConfig,
    config_hash,
    count_parameters,
    forward_image,
    fuse,
    heads,
    img_subnet,
    init_network_params,
    jnd_subnet,
    pool_score,
    sal_subnet,
)
from jscar.tensor import Tensor, gradcheck


def tiny_config(**overrides):
    base = dict(
        stem_channels=4,
        stage_channels=(8, 8, 8, 8),
        sal_channels=4,
        ca_ratio=2,
        split_count=2,
        head_hidden=8,
        patch_size=32,
    )
    base.update(overrides)
    return NetworkConfig(**base)


def make_quads(rng, n=3, patch=32, identical_pair=False, zero_jnd=False, same_priors=False):
    quads = []
    sal = rng.uniform(0, 1, size=(1, patch, patch)).astype(np.float32)
    jnd = rng.uniform(0, 1, size=(1, patch, patch)).astype(np.float32)
    for i in range(n):
        ref = rng.uniform(-0.5, 0.5, size=(3, patch, patch)).astype(np.float32)
        dst = ref.copy() if identical_pair else rng.uniform(-0.5, 0.5, size=(3, patch, patch)).astype(np.float32)
        q_sal = sal if same_priors else rng.uniform(0, 1, size=(1, patch, patch)).astype(np.float32)
        q_jnd = np.zeros_like(jnd) if zero_jnd else (jnd if same_priors else rng.uniform(0, 1, size=(1, patch, patch)).astype(np.float32))
        quads.append(PatchQuad(ref, dst, q_sal, q_jnd, origin=(0, 32 * i)))
    return quads


class TestSalSubnet:
    def test_output_spatial_sizes(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 0)
        p = Tensor(rng.uniform(0, 1, size=(2, 1, 32, 32)).astype(np.float32))
        f1, f2 = sal_subnet(p, params, cfg)
        assert f1.shape == (2, 4, 16, 16)
        assert f2.shape == (2, 4, 8, 8)

    def test_zero_input_zero_features(self):
        cfg = tiny_config()
        params = init_network_params(cfg, 0)
        p = Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32))
        f1, f2 = sal_subnet(p, params, cfg)
        assert np.all(f1.data == 0) and np.all(f2.data == 0)

    def test_wrong_patch_size_rejected(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 0)
        with pytest.raises(ValueError, match="patches"):
            sal_subnet(Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32)), params, cfg)


class TestImgSubnet:
    def test_weight_sharing_bit_identical(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 1)
        p = Tensor(rng.uniform(-0.5, 0.5, size=(2, 3, 32, 32)).astype(np.float32))
        sal = Tensor(rng.uniform(0, 1, size=(2, 1, 32, 32)).astype(np.float32))
        f1, f2 = sal_subnet(sal, params, cfg)
        a = img_subnet(p, f1, f2, params, cfg)
        b = img_subnet(p, f1, f2, params, cfg)
        assert np.array_equal(a.data, b.data)

    def test_feature_length_matches_config(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 1)
        p = Tensor(rng.uniform(-0.5, 0.5, size=(1, 3, 32, 32)).astype(np.float32))
        sal = Tensor(rng.uniform(0, 1, size=(1, 1, 32, 32)).astype(np.float32))
        f1, f2 = sal_subnet(sal, params, cfg)
        out = img_subnet(p, f1, f2, params, cfg)
        # 32 -> 16 -> 8 -> 4 -> 2 spatial, so 2*2*C features
        assert cfg.final_spatial == 2
        assert out.shape == (1, 2 * 2 * 8)

    def test_jnd_subnet_independent_of_img_params(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 2)
        p = Tensor(rng.uniform(0, 1, size=(1, 1, 32, 32)).astype(np.float32))
        sal = Tensor(rng.uniform(0, 1, size=(1, 1, 32, 32)).astype(np.float32))
        f1, f2 = sal_subnet(sal, params, cfg)
        before = jnd_subnet(p, f1, f2, params, cfg).data.copy()
        params["img.stem.w"].data[...] += 5.0
        after = jnd_subnet(p, f1, f2, params, cfg).data
        assert np.array_equal(before, after)

    def test_zero_jnd_map_zero_features_without_fusion(self):
        cfg = tiny_config(enable_saliency_fusion=False)
        params = init_network_params(cfg, 3)
        p = Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32))
        out = jnd_subnet(p, None, None, params, cfg)
        assert np.all(out.data == 0)


class TestFuse:
    def test_identical_features_zero_difference_segment(self, rng):
        a = Tensor(rng.normal(size=(2, 6)).astype(np.float32))
        b = Tensor(a.data.copy())
        j = Tensor(rng.normal(size=(2, 6)).astype(np.float32))
        out = fuse(a, b, j)
        assert np.all(out.data[:, :6] == 0.0)

    def test_zero_dst_keeps_ref_segment(self, rng):
        a = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
        z = Tensor(np.zeros((1, 4), dtype=np.float32))
        j = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
        np.testing.assert_array_equal(fuse(a, z, j).data[:, :4], a.data)

    def test_segment_order_difference_then_jnd(self):
        a = Tensor(np.full((1, 2), 3.0, dtype=np.float32))
        b = Tensor(np.zeros((1, 2), dtype=np.float32))
        sentinel = Tensor(np.full((1, 2), 77.0, dtype=np.float32))
        out = fuse(a, b, sentinel).data
        assert np.all(out[:, :2] == 3.0) and np.all(out[:, 2:] == 77.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            fuse(
                Tensor(np.zeros((1, 3), dtype=np.float32)),
                Tensor(np.zeros((1, 4), dtype=np.float32)),
                None,
            )


class TestHeads:
    def test_weights_strictly_positive(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 4)
        fused = Tensor(rng.normal(size=(5, cfg.fused_length)).astype(np.float32) * 10)
        w, _ = heads(fused, params, cfg)
        assert np.all(w.data > 0)

    def test_zero_params_give_ln2_weight_and_zero_quality(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 5)
        for name in ("head_w", "head_q"):
            for p in ("fc1.w", "fc1.b", "fc2.w", "fc2.b"):
                params[f"{name}.{p}"].data[...] = 0.0
        fused = Tensor(rng.normal(size=(3, cfg.fused_length)).astype(np.float32))
        w, q = heads(fused, params, cfg)
        np.testing.assert_allclose(w.data, math.log(2.0) + 1e-6, rtol=1e-6)
        assert np.all(q.data == 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck_through_both_heads(self, seed):
        cfg = tiny_config()
        params = init_network_params(cfg, seed)
        head_names = [n for n in params.names() if n.startswith("head_")]
        shadow = params.shadow_copy()
        rng = np.random.default_rng(seed)
        fused = Tensor(rng.normal(size=(2, cfg.fused_length)), requires_grad=True)

        def build():
            w, q = heads(fused, shadow, cfg)
            return (w * q).sum()

        gradcheck(build, [fused] + [shadow[n] for n in head_names], max_coords=10, rng=rng)


class TestPoolScore:
    def test_uniform_weights_mean(self):
        w = Tensor(np.ones(4, dtype=np.float32))
        q = Tensor(np.array([2.0, 4.0, 6.0, 8.0], dtype=np.float32))
        assert pool_score(w, q).item() == pytest.approx(5.0)

    def test_single_patch_ignores_weight(self):
        w = Tensor(np.array([13.7], dtype=np.float32))
        q = Tensor(np.array([2.5], dtype=np.float32))
        assert pool_score(w, q).item() == pytest.approx(2.5)

    def test_weighted_example(self):
        w = Tensor(np.array([1.0, 3.0], dtype=np.float32))
        q = Tensor(np.array([0.0, 4.0], dtype=np.float32))
        assert pool_score(w, q).item() == pytest.approx(3.0)

    def test_bounded_by_quality_range(self, rng):
        w = Tensor(rng.uniform(0.1, 5.0, size=20).astype(np.float32))
        q = Tensor(rng.normal(size=20).astype(np.float32))
        s = pool_score(w, q).item()
        assert q.data.min() <= s <= q.data.max()

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pool_score(Tensor(np.ones(0, dtype=np.float32)), Tensor(np.ones(0, dtype=np.float32)))

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            pool_score(Tensor(np.array([1.0, 0.0], dtype=np.float32)), Tensor(np.ones(2, dtype=np.float32)))


class TestForwardImage:
    def test_constant_collapse_identical_pair(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 6)
        quads = make_quads(rng, n=4, identical_pair=True, zero_jnd=True, same_priors=True)
        out = forward_image(quads, params, cfg)
        # same fused vector per patch -> all qualities equal -> S collapses
        assert np.all(out.qualities.data == out.qualities.data[0])
        assert out.score.item() == out.qualities.data[0]

    def test_permutation_invariant_score(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 7)
        quads = make_quads(rng, n=6)
        s1 = forward_image(quads, params, cfg).score.item()
        perm = [quads[i] for i in rng.permutation(6)]
        s2 = forward_image(perm, params, cfg).score.item()
        assert s1 == s2

    def test_pair_count_matches_quads(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 8)
        out = forward_image(make_quads(rng, n=5), params, cfg)
        assert out.n_patches == 5
        assert out.weights.shape == (5,) and out.qualities.shape == (5,)

    def test_normalized_weights_sum_to_one(self, rng):
        cfg = tiny_config()
        params = init_network_params(cfg, 9)
        out = forward_image(make_quads(rng, n=7), params, cfg)
        assert out.normalized_weights().sum() == pytest.approx(1.0, abs=1e-6)

    def test_empty_quads_rejected(self):
        cfg = tiny_config()
        params = init_network_params(cfg, 0)
        with pytest.raises(ValueError, match="at least one"):
            forward_image([], params, cfg)

    def test_end_to_end_gradcheck_two_quads(self):
        # toy widths and 16px patches keep the finite differences cheap
        cfg = tiny_config(
            stem_channels=4, stage_channels=(4, 4, 4, 4), sal_channels=2,
            ca_ratio=2, split_count=2, head_hidden=4, patch_size=16,
        )
        rng = np.random.default_rng(0)
        params = init_network_params(cfg, 0)
        shadow = params.shadow_copy()
        quads = make_quads(rng, n=2, patch=16)
        for q in quads:  # float64 shadow inputs
            q.ref_patch = q.ref_patch.astype(np.float64)
            q.dst_patch = q.dst_patch.astype(np.float64)
            q.sal_patch = q.sal_patch.astype(np.float64)
            q.jnd_patch = q.jnd_patch.astype(np.float64)
        gradcheck(
            lambda: forward_image(quads, shadow, cfg).score,
            shadow.tensors(),
            max_coords=4,
            rng=rng,
        )


class TestParameterCounting:
    def test_single_conv_closed_form(self):
        from jscar.checkpoint import ParameterSet

        ps = ParameterSet()
        ps.add("w", np.zeros((32, 3, 3, 3), dtype=np.float32))
        ps.add("b", np.zeros(32, dtype=np.float32))
        assert count_parameters(ps) == 3 * 32 * 9 + 32

    def test_empty_set_is_zero(self):
        from jscar.checkpoint import ParameterSet

        assert count_parameters(ParameterSet()) == 0

    def test_split_reduces_parameters_at_default_schedule(self):
        split = init_network_params(NetworkConfig(split_count=32), 0)
        dense = init_network_params(NetworkConfig(split_count=1), 0)
        assert count_parameters(split) < count_parameters(dense)

    def test_config_hash_stable_and_sensitive(self):
        a = config_hash(NetworkConfig())
        b = config_hash(NetworkConfig())
        c = config_hash(NetworkConfig(stem_channels=16))
        assert a == b
        assert a != c
