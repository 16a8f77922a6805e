"""Export intermediate CNN feature maps into SNFT files plus a manifest.

The one place a deep-learning framework appears: a frozen torchvision
backbone turns images into per-level feature maps, written in the binary
format its consumer reads.  Features are exported before any neighborhood
aggregation so downstream ablations never require a re-export.
"""

from .backbone import BACKBONES, FeatureBackbone
from .export import export_category, preprocess_image, preprocess_mask
from .snft import write_feature_file, write_manifest, write_mask

__version__ = "0.1.0"
