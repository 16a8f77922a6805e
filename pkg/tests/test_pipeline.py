"""Local-feature extraction across hierarchy levels."""

import numpy as np
import pytest

from anomhead.errors import ConfigError, InvalidArgumentError
from anomhead.pipeline import HierarchyStack, PipelineConfig, extract_local_features


def rand_map(rng, h, w, c):
    return rng.normal(size=(h, w, c)).astype(np.float32)


def test_single_level_patch1_is_identity():
    rng = np.random.default_rng(0)
    fmap = rand_map(rng, 5, 6, 3)
    stack = HierarchyStack([(2, fmap)])
    cfg = PipelineConfig(patch_size=1, selected_levels=(2,))
    assert np.array_equal(extract_local_features(stack, cfg), fmap)


def test_default_levels_shapes_match_backbone_hierarchy():
    rng = np.random.default_rng(1)
    stack = HierarchyStack([(2, rand_map(rng, 28, 28, 512)), (3, rand_map(rng, 14, 14, 1024))])
    out = extract_local_features(stack, PipelineConfig())
    assert out.shape == (28, 28, 1536)


def test_constant_levels_fill_their_channel_blocks():
    a = np.full((4, 4, 3), 1.5, dtype=np.float32)
    b = np.full((2, 2, 2), -2.0, dtype=np.float32)
    stack = HierarchyStack([(2, a), (3, b)])
    out = extract_local_features(stack, PipelineConfig())
    assert out.shape == (4, 4, 5)
    assert np.allclose(out[:, :, :3], 1.5, atol=1e-6)
    assert np.allclose(out[:, :, 3:], -2.0, atol=1e-6)


def test_missing_level_raises_config_error_naming_it():
    stack = HierarchyStack([(2, np.ones((2, 2, 1), dtype=np.float32))])
    with pytest.raises(ConfigError, match="level 3"):
        extract_local_features(stack, PipelineConfig(selected_levels=(2, 3)))


def test_stack_order_does_not_change_output():
    rng = np.random.default_rng(2)
    a, b = rand_map(rng, 8, 8, 4), rand_map(rng, 4, 4, 6)
    cfg = PipelineConfig(selected_levels=(2, 3))
    out1 = extract_local_features(HierarchyStack([(2, a), (3, b)]), cfg)
    out2 = extract_local_features(HierarchyStack([(3, b), (2, a)]), cfg)
    assert np.array_equal(out1, out2)


def test_output_dims_follow_largest_area_level():
    rng = np.random.default_rng(3)
    stack = HierarchyStack([(1, rand_map(rng, 3, 10, 2)), (2, rand_map(rng, 5, 4, 2))])
    out = extract_local_features(stack, PipelineConfig(selected_levels=(1, 2)))
    assert out.shape[:2] == (3, 10)  # 30 cells beats 20


def test_area_ties_go_to_the_lowest_level_index():
    rng = np.random.default_rng(4)
    stack = HierarchyStack([(1, rand_map(rng, 2, 8, 1)), (2, rand_map(rng, 4, 4, 1))])
    out = extract_local_features(stack, PipelineConfig(selected_levels=(1, 2)))
    assert out.shape[:2] == (2, 8)


def test_channel_order_is_ascending_level_order():
    a = np.full((2, 2, 1), 7.0, dtype=np.float32)
    b = np.full((2, 2, 1), 9.0, dtype=np.float32)
    # Construct with the higher level first; output blocks must still be 2 then 5.
    stack = HierarchyStack([(5, b), (2, a)])
    out = extract_local_features(stack, PipelineConfig(patch_size=1, selected_levels=(2, 5)))
    assert np.allclose(out[:, :, 0], 7.0)
    assert np.allclose(out[:, :, 1], 9.0)


def test_stack_rejects_duplicates_and_empty():
    fmap = np.ones((2, 2, 1), dtype=np.float32)
    with pytest.raises(InvalidArgumentError):
        HierarchyStack([(2, fmap), (2, fmap)])
    with pytest.raises(InvalidArgumentError):
        HierarchyStack([])


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        PipelineConfig(patch_size=2)
    with pytest.raises(InvalidArgumentError):
        PipelineConfig(selected_levels=())
    cfg = PipelineConfig(selected_levels=(3, 2))
    assert cfg.selected_levels == (2, 3)
