"""Windowed-attention extractor against brute-force dense attention oracles."""

import numpy as np
import pytest
import torch

from ivfuse.global_features import (
    AttentionBlock,
    FeatureExtractorConfig,
    GlobalFeatureExtractor,
    PatchMerging,
    build_feature_extractor,
    window_partition,
    window_reverse,
)


def naive_group_attention(attn, grid, groups):
    """Dense attention restricted to explicit token groups.

    ``grid`` is (H, W, C) of already-normalized tokens; ``groups`` is a list
    of coordinate lists. Relative-position bias is indexed straight from the
    original token coordinates.
    """
    H, W, C = grid.shape
    ws = attn.window_size
    nh = attn.num_heads
    hd = C // nh
    out = torch.zeros_like(grid)
    for group in groups:
        toks = torch.stack([grid[r, c] for r, c in group])  # (n, C)
        n = toks.shape[0]
        q, k, v = attn.qkv(toks).chunk(3, dim=-1)
        q = q.view(n, nh, hd).permute(1, 0, 2)
        k = k.view(n, nh, hd).permute(1, 0, 2)
        v = v.view(n, nh, hd).permute(1, 0, 2)
        scores = (q * hd**-0.5) @ k.transpose(-2, -1)
        bias = torch.zeros(nh, n, n, dtype=grid.dtype)
        for i, (r1, c1) in enumerate(group):
            for j, (r2, c2) in enumerate(group):
                index = ((r1 - r2) + ws - 1) * (2 * ws - 1) + ((c1 - c2) + ws - 1)
                bias[:, i, j] = attn.relative_bias_table[index]
        probs = (scores + bias).softmax(dim=-1)
        merged = (probs @ v).permute(1, 0, 2).reshape(n, C)
        merged = attn.proj(merged)
        for i, (r, c) in enumerate(group):
            out[r, c] = merged[i]
    return out


def naive_block(block, grid, groups):
    """Full block output using the naive grouped attention."""
    x = block.norm1(grid)
    attn_out = naive_group_attention(block.attn, x, groups)
    x = grid + attn_out
    return x + block.mlp(block.norm2(x))


def regular_windows(H, W, ws):
    groups = []
    for r0 in range(0, H, ws):
        for c0 in range(0, W, ws):
            groups.append(
                [(r, c) for r in range(r0, r0 + ws) for c in range(c0, c0 + ws)]
            )
    return groups


def shifted_bands(n, ws, shift):
    """Index bands of the displaced window partition along one axis."""
    edges = [0, shift]
    t = shift
    while t < n:
        t = min(t + ws, n)
        edges.append(t)
    return [range(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def shifted_windows(H, W, ws, shift):
    groups = []
    for rows in shifted_bands(H, ws, shift):
        for cols in shifted_bands(W, ws, shift):
            groups.append([(r, c) for r in rows for c in cols])
    return groups


def make_block(shifted, dim=12, heads=3, ws=4, seed=0):
    torch.manual_seed(seed)
    block = AttentionBlock(dim, heads, ws, shifted=shifted).double()
    with torch.no_grad():
        for p in block.parameters():
            p.uniform_(-0.5, 0.5)
    return block


class TestWindowHelpers:
    def test_partition_reverse_round_trip(self, rng):
        x = torch.from_numpy(rng.standard_normal((2, 8, 12, 5)))
        windows = window_partition(x, 4)
        assert windows.shape == (2 * 2 * 3, 16, 5)
        back = window_reverse(windows, 4, 8, 12)
        assert torch.equal(back, x)


class TestWindowAttention:
    def test_matches_dense_per_window_on_8x8(self, rng):
        block = make_block(shifted=False)
        grid = torch.from_numpy(rng.standard_normal((8, 8, 12)))
        got = block(grid.unsqueeze(0)).squeeze(0)
        expected = naive_block(block, grid, regular_windows(8, 8, 4))
        assert (got - expected).abs().max().item() < 1e-5

    def test_attention_rows_sum_to_one(self, rng):
        block = make_block(shifted=False)
        grid = torch.from_numpy(rng.standard_normal((1, 8, 8, 12)))
        _, attn = block(grid, return_attn=True)
        sums = attn.sum(dim=-1)
        assert (sums - 1.0).abs().max().item() < 1e-6

    def test_shifted_rows_sum_to_one(self, rng):
        block = make_block(shifted=True)
        grid = torch.from_numpy(rng.standard_normal((1, 8, 8, 12)))
        _, attn = block(grid, return_attn=True)
        # masked positions get -100 before softmax; rows still normalize
        assert (attn.sum(dim=-1) - 1.0).abs().max().item() < 1e-6


class TestShiftedWindows:
    def test_matches_displaced_partition_oracle(self, rng):
        block = make_block(shifted=True)
        grid = torch.from_numpy(rng.standard_normal((8, 8, 12)))
        got = block(grid.unsqueeze(0)).squeeze(0)
        expected = naive_block(block, grid, shifted_windows(8, 8, 4, 2))
        assert (got - expected).abs().max().item() < 1e-5

    def test_mask_blocks_cross_region_attention(self, rng):
        block = make_block(shifted=True)
        grid = torch.from_numpy(rng.standard_normal((1, 8, 8, 12)))
        _, attn = block(grid, return_attn=True)
        # wrapped windows: some pairs must receive (near) zero attention
        assert attn.min().item() < 1e-20

    def test_single_window_shift_is_noop(self, rng):
        shifted = make_block(shifted=True)
        plain = make_block(shifted=False)
        plain.load_state_dict(shifted.state_dict())
        grid = torch.from_numpy(rng.standard_normal((1, 4, 4, 12)))
        assert torch.equal(shifted(grid), plain(grid))

    def test_bands_cover_grid_exactly(self):
        bands = shifted_bands(8, 4, 2)
        flat = [i for band in bands for i in band]
        assert flat == list(range(8))
        assert [len(b) for b in bands] == [2, 4, 2]


class TestZeroPropagation:
    def test_zero_tokens_through_zero_block(self):
        block = AttentionBlock(8, 2, 4, shifted=False)
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
        grid = torch.zeros(1, 8, 8, 8)
        assert torch.all(block(grid) == 0.0)

    def test_zero_image_zero_bias_embedding(self):
        ext = build_feature_extractor(FeatureExtractorConfig(rng_seed=0))
        tokens = ext.patch_embed(torch.zeros(1, 1, 32, 32))
        assert torch.all(tokens == 0.0)


class TestPatchEmbedding:
    def test_grid_shape(self):
        ext = build_feature_extractor()
        tokens = ext.patch_embed(torch.rand(1, 1, 128, 128) * 2 - 1)
        assert tokens.shape == (1, 32, 32, 96)

    def test_reflect_padding_to_next_multiple(self):
        ext = build_feature_extractor()
        tokens = ext.patch_embed(torch.rand(1, 1, 130, 128) * 2 - 1)
        assert tokens.shape == (1, 33, 32, 96)

    def test_single_channel_replicated(self, rng):
        ext = build_feature_extractor()
        img = torch.from_numpy(rng.uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32))
        explicit = ext.patch_embed(img.expand(-1, 3, -1, -1))
        assert torch.equal(ext.patch_embed(img), explicit)


class TestPatchMerging:
    def test_halves_grid_doubles_channels(self, rng):
        merge = PatchMerging(96)
        x = torch.from_numpy(rng.standard_normal((1, 32, 32, 96)).astype(np.float32))
        assert merge(x).shape == (1, 16, 16, 192)

    def test_two_by_two_to_single_token(self, rng):
        merge = PatchMerging(8)
        x = torch.from_numpy(rng.standard_normal((1, 2, 2, 8)).astype(np.float32))
        assert merge(x).shape == (1, 1, 1, 16)

    def test_odd_grid_padded(self, rng):
        merge = PatchMerging(8)
        x = torch.from_numpy(rng.standard_normal((1, 5, 7, 8)).astype(np.float32))
        assert merge(x).shape == (1, 3, 4, 16)

    def test_zero_tokens_zero_output(self):
        merge = PatchMerging(8)
        with torch.no_grad():
            merge.norm.bias.zero_()
        assert torch.all(merge(torch.zeros(1, 4, 4, 8)) == 0.0)


class TestExtractor:
    def test_config_depths(self):
        cfg = FeatureExtractorConfig()
        assert cfg.depths == (2, 2, 6, 2)
        ext = build_feature_extractor(cfg)
        assert [len(stage) for stage in ext.stages] == [2, 2, 6, 2]

    def test_odd_depths_rejected(self):
        with pytest.raises(ValueError):
            FeatureExtractorConfig(depths=(2, 3, 6, 2))

    def test_same_seed_identical(self):
        a = build_feature_extractor(FeatureExtractorConfig(rng_seed=9))
        b = build_feature_extractor(FeatureExtractorConfig(rng_seed=9))
        for va, vb in zip(a.state_dict().values(), b.state_dict().values()):
            assert torch.equal(va, vb)

    def test_frozen_by_default(self):
        ext = build_feature_extractor()
        assert not any(p.requires_grad for p in ext.parameters())
        assert ext.config.frozen

    def test_pyramid_progression_64(self, rng):
        ext = build_feature_extractor()
        img = torch.from_numpy(rng.uniform(-1, 1, (1, 1, 64, 64)).astype(np.float32))
        pyramid = ext(img)
        shapes = [tuple(t.shape) for t in pyramid]
        assert shapes == [
            (1, 16, 16, 96),
            (1, 8, 8, 192),
            (1, 4, 4, 384),
            (1, 2, 2, 768),
        ]

    def test_purity_and_determinism(self, rng):
        ext = build_feature_extractor()
        img = torch.from_numpy(rng.uniform(-1, 1, (1, 1, 32, 32)).astype(np.float32))
        first = ext(img)
        second = ext(img)
        for a, b in zip(first, second):
            assert torch.equal(a, b)

    def test_identical_inputs_identical_pyramids(self, rng):
        ext = build_feature_extractor()
        img = torch.from_numpy(rng.uniform(-1, 1, (32, 32)).astype(np.float32))
        for a, b in zip(ext(img), ext(img.clone())):
            assert torch.equal(a, b)

    def test_gradient_flows_to_input_despite_frozen_weights(self):
        ext = build_feature_extractor()
        img = (torch.rand(1, 1, 16, 16) * 2 - 1).requires_grad_(True)
        sum(t.sum() for t in ext(img)).backward()
        assert img.grad is not None
        assert torch.isfinite(img.grad).all()
