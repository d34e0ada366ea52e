import numpy as np
import pytest

from gradcheck import sampled_param_check
from semlink.codec import (
    CodecConfig,
    CodecParams,
    SemanticTensor,
    _block,
    decode,
    embed,
    encode,
    reconstruct,
    zero_fill,
)
from semlink.errors import ConfigError, ContractError
from semlink.masking import PatchGrid, patchify, unpatchify
from semlink.rng import RngStream
from semlink.scenes import Loc, SceneConfig, generate_scene, locate_any
from semlink.tensor import Tensor, layer_norm, mul, sinusoid_table, tmean


def small_cfg(num_patches=16, patch_dim=8):
    return CodecConfig(feature_dim=16, enc_layers=2, dec_layers=1, num_heads=2,
                       patch_dim=patch_dim, num_patches=num_patches)


def zero_block_weights(params: CodecParams):
    """Zero every attention/FF weight and bias; keep LN affines at identity."""
    for blk in params.enc_blocks + params.dec_blocks:
        for t in blk.attn.tensors().values():
            t.data[...] = 0.0
        blk.ff_weight.data[...] = 0.0
        blk.ff_bias.data[...] = 0.0


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            CodecConfig(feature_dim=10, num_heads=4).validate()

    def test_layer_minimum(self):
        with pytest.raises(ConfigError):
            CodecConfig(enc_layers=0).validate()

    def test_dict_roundtrip(self):
        cfg = small_cfg()
        assert CodecConfig.from_dict(cfg.to_dict()) == cfg


class TestEmbed:
    def test_zero_weights_give_pure_position_codes(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(1))
        params.patch_embed_w.data[...] = 0.0
        params.patch_embed_b.data[...] = 0.0
        idx = [0, 3, 9]
        patches = Tensor(np.random.default_rng(0).normal(size=(3, cfg.patch_dim)))
        out = embed(patches, idx, params, cfg)
        np.testing.assert_array_equal(out.data, params.pos_table[idx])

    def test_positional_injectivity(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(2))
        row = np.random.default_rng(1).normal(size=(1, cfg.patch_dim))
        patches = Tensor(np.vstack([row, row]))
        out = embed(patches, [2, 7], params, cfg)
        assert not np.allclose(out.data[0], out.data[1])

    def test_sinusoid_table_oracle(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(3))
        table = sinusoid_table(cfg.num_patches, cfg.feature_dim)
        for pos in (0, 5, 15):
            for i in range(cfg.feature_dim // 2):
                angle = pos / 10000 ** (2 * i / cfg.feature_dim)
                assert abs(params.pos_table[pos, 2 * i] - np.sin(angle)) < 1e-12
                assert abs(params.pos_table[pos, 2 * i + 1] - np.cos(angle)) < 1e-12
        np.testing.assert_array_equal(params.pos_table, table)


class TestEncode:
    def test_output_shapes(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(4))
        rng = np.random.default_rng(2)
        for length in (1, 6, 16):
            idx = np.arange(length)
            z = encode(Tensor(rng.normal(size=(length, cfg.patch_dim))), idx, params, cfg)
            assert z.values.shape == (length, cfg.feature_dim)
            assert z.length == length

    def test_empty_keep_rejected(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(5))
        with pytest.raises(ContractError):
            encode(Tensor(np.zeros((0, cfg.patch_dim))), [], params, cfg)

    def test_block_permutation_equivariance(self):
        # position codes travel with indices, so the residual blocks must be
        # permutation-equivariant over rows
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(6))
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(7, cfg.feature_dim)))
        perm = rng.permutation(7)
        out = x
        out_p = Tensor(x.data[perm])
        for blk in params.enc_blocks:
            out = _block(out, blk, cfg.num_heads)
            out_p = _block(out_p, blk, cfg.num_heads)
        np.testing.assert_allclose(out_p.data, out.data[perm], atol=1e-10)

    def test_zero_weights_reduce_to_layernormed_embedding(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(7))
        zero_block_weights(params)
        rng = np.random.default_rng(4)
        idx = np.array([1, 4, 11])
        patches = Tensor(rng.normal(size=(3, cfg.patch_dim)))
        z = encode(patches, idx, params, cfg)
        embedded = embed(patches, idx, params, cfg)
        expected = layer_norm(embedded, params.enc_final_gain, params.enc_final_bias, 1e-6)
        np.testing.assert_allclose(z.values.data, expected.data, atol=1e-12)

    def test_residual_blocks_are_identity_with_zero_weights(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(8))
        zero_block_weights(params)
        x = Tensor(np.random.default_rng(5).normal(size=(4, cfg.feature_dim)))
        out = x
        for blk in params.enc_blocks:
            out = _block(out, blk, cfg.num_heads)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)


class TestZeroFill:
    def test_all_kept_identity(self):
        cfg = small_cfg(num_patches=4)
        vals = np.random.default_rng(6).normal(size=(4, cfg.feature_dim))
        sem = SemanticTensor(Tensor(vals), np.arange(4), 4)
        np.testing.assert_array_equal(zero_fill(sem).data, vals)

    def test_masked_slots_zero(self):
        vals = np.random.default_rng(7).normal(size=(2, 5))
        sem = SemanticTensor(Tensor(vals), [0, 2], 4)
        full = zero_fill(sem).data
        np.testing.assert_array_equal(full[[1, 3]], np.zeros((2, 5)))
        np.testing.assert_array_equal(full[[0, 2]], vals)

    def test_nonzero_rows_equal_keep_set(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(4, 20))
            keep = np.sort(rng.choice(n, int(rng.integers(1, n + 1)), replace=False))
            vals = rng.normal(size=(len(keep), 6)) + 0.1  # rows never all-zero
            sem = SemanticTensor(Tensor(vals), keep, n)
            full = zero_fill(sem).data
            nonzero = {i for i in range(n) if np.any(full[i] != 0)}
            assert nonzero == set(int(i) for i in keep)

    def test_duplicate_indices_rejected(self):
        with pytest.raises(ContractError):
            SemanticTensor(Tensor(np.ones((2, 3))), [1, 1], 4)

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            SemanticTensor(Tensor(np.ones((2, 3))), [0, 9], 4)


class TestDecode:
    def test_output_shape(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(9))
        z = Tensor(np.random.default_rng(9).normal(size=(cfg.num_patches, cfg.feature_dim)))
        out = decode(z, params, cfg)
        assert out.shape == (cfg.num_patches, cfg.patch_dim)

    def test_zero_projection_gives_constant_rows(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(10))
        params.out_w.data[...] = 0.0
        params.out_b.data[...] = 0.25
        z = Tensor(np.random.default_rng(10).normal(size=(cfg.num_patches, cfg.feature_dim)))
        out = decode(z, params, cfg)
        np.testing.assert_array_equal(out.data, np.full((cfg.num_patches, cfg.patch_dim), 0.25))

    def test_fuzz_random_inputs_finite(self):
        cfg = small_cfg()
        params = CodecParams.init(cfg, RngStream(11))
        rng = np.random.default_rng(11)
        for _ in range(100):
            z = Tensor(rng.normal(size=(cfg.num_patches, cfg.feature_dim)) * 3)
            out = decode(z, params, cfg)
            assert np.all(np.isfinite(out.data))


class TestReconstruct:
    def test_all_masked_surfaces_contract_error(self):
        cfg = SceneConfig()
        grid = cfg.grid()
        scene = generate_scene(RngStream(1, 50), cfg)
        ccfg = CodecConfig.for_grid(grid, feature_dim=16, enc_layers=1, dec_layers=1, num_heads=2)
        params = CodecParams.init(ccfg, RngStream(12))
        loc = Loc(frozenset(range(grid.num_patches)))
        with pytest.raises(ContractError):
            reconstruct(scene, loc, 1.0, params, ccfg, RngStream(13), grid=grid)

    def test_deterministic(self):
        cfg = SceneConfig()
        grid = cfg.grid()
        scene = generate_scene(RngStream(2, 51), cfg)
        ccfg = CodecConfig.for_grid(grid, feature_dim=16, enc_layers=1, dec_layers=1, num_heads=2)
        params = CodecParams.init(ccfg, RngStream(14))
        loc = locate_any(scene, grid)
        q1, z1, plan1 = reconstruct(scene, loc, 0.3, params, ccfg, RngStream(15), grid=grid)
        q2, z2, plan2 = reconstruct(scene, loc, 0.3, params, ccfg, RngStream(15), grid=grid)
        np.testing.assert_array_equal(q1.data, q2.data)
        np.testing.assert_array_equal(plan1.masked, plan2.masked)

    def test_shapes(self):
        cfg = SceneConfig()
        grid = cfg.grid()
        scene = generate_scene(RngStream(3, 52), cfg)
        ccfg = CodecConfig.for_grid(grid, feature_dim=16, enc_layers=1, dec_layers=1, num_heads=2)
        params = CodecParams.init(ccfg, RngStream(16))
        loc = locate_any(scene, grid)
        q, z, plan = reconstruct(scene, loc, 0.3, params, ccfg, RngStream(17), grid=grid)
        assert q.shape == scene.image.shape
        assert z.values.shape == (plan.keep_count, ccfg.feature_dim)


class TestCodecGradients:
    def test_reconstruction_loss_matches_finite_differences(self):
        # 2-layer, feature_dim 16 model per the module contract
        cfg = CodecConfig(feature_dim=16, enc_layers=2, dec_layers=2, num_heads=2,
                          patch_dim=8, num_patches=8)
        params = CodecParams.init(cfg, RngStream(18))
        rng_np = np.random.default_rng(12)
        patches = Tensor(rng_np.normal(size=(8, cfg.patch_dim)))
        keep = np.array([0, 2, 3, 6])
        target = Tensor(rng_np.normal(size=(cfg.num_patches, cfg.patch_dim)))

        def loss_fn():
            z = encode(Tensor(patches.data[keep]), keep, params, cfg)
            q = decode(zero_fill(z), params, cfg)
            d = q - target
            return tmean(mul(d, d))

        worst = sampled_param_check(loss_fn, params.tensors(), RngStream(19),
                                    coords_per_tensor=4)
        assert worst < 1e-4
