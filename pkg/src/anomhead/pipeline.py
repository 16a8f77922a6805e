"""From per-level backbone maps to a single local-feature map.

Each selected hierarchy level is neighborhood-averaged, resampled to the
spatial size of the largest selected level, and the results are concatenated
channel-wise in ascending level order.  The backbone forward pass itself lives
in the exporter; this module treats level indices as opaque labels.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .tensors import aggregate_neighborhood, as_feature_map, concat_channels, resize_bilinear

__all__ = ["HierarchyStack", "PipelineConfig", "extract_local_features"]


@dataclass(frozen=True)
class HierarchyStack:
    """An ordered set of (level_index, feature map) pairs for one sample.

    Levels are sorted by index at construction, so the input order never
    matters; duplicate indices are rejected.
    """

    levels: tuple

    def __init__(self, levels):
        pairs = [(int(idx), as_feature_map(fmap)) for idx, fmap in levels]
        if not pairs:
            raise InvalidArgumentError("a hierarchy stack needs at least one level")
        pairs.sort(key=lambda p: p[0])
        for (a, _), (b, _) in zip(pairs, pairs[1:]):
            if a == b:
                raise InvalidArgumentError(f"duplicate level index {a}")
        object.__setattr__(self, "levels", tuple(pairs))

    @property
    def indices(self):
        return tuple(idx for idx, _ in self.levels)

    def level_map(self, index: int) -> np.ndarray:
        for idx, fmap in self.levels:
            if idx == index:
                return fmap
        raise ConfigError(f"level {index} not present in stack (have {self.indices})")


@dataclass(frozen=True)
class PipelineConfig:
    """Neighborhood size and hierarchy-level subset for feature extraction."""

    patch_size: int = 3
    selected_levels: tuple = (2, 3)

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise InvalidArgumentError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        levels = tuple(sorted(int(l) for l in self.selected_levels))
        if not levels:
            raise InvalidArgumentError("selected_levels must not be empty")
        if len(set(levels)) != len(levels):
            raise InvalidArgumentError(f"selected_levels has duplicates: {levels}")
        object.__setattr__(self, "selected_levels", levels)


def extract_local_features(stack: HierarchyStack, config: PipelineConfig) -> np.ndarray:
    """Build the combined local-feature map for one sample.

    For each selected level: average the patch neighborhood, resample to the
    spatial size of the largest selected level (greatest H*W, ties broken by
    the lowest level index), then concatenate channels in ascending level
    order.

    Returns:
        (H0, W0, sum of level channels) float32 map.
    """
    maps = [stack.level_map(idx) for idx in config.selected_levels]
    pooled = [aggregate_neighborhood(m, config.patch_size) for m in maps]

    # Target size: largest area wins; the ascending level order makes the
    # lowest index win ties automatically.
    target_h, target_w = max(
        ((m.shape[0], m.shape[1]) for m in pooled), key=lambda hw: hw[0] * hw[1]
    )
    resized = [resize_bilinear(m, target_h, target_w) for m in pooled]
    return concat_channels(resized)
