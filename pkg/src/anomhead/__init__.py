"""Feature-space anomaly detection head.

Turns precomputed backbone feature maps into per-pixel anomaly maps and
image-level scores: local features are neighborhood-averaged and fused across
hierarchy levels, a learned adaptor projects them toward the target domain,
negatives are counterfeited by adding Gaussian noise in feature space, and a
small discriminator trained with a truncated L1 objective scores normality.
Includes exact AUROC/F1 evaluation, bit-exact file formats, and a CLI.
"""

from .errors import (
    AnomheadError,
    BadMagicError,
    ChecksumError,
    ConfigError,
    ConsistencyError,
    FileFormatError,
    InvalidArgumentError,
    ManifestError,
    ProtocolViolationError,
    SampleFailureError,
    ShapeError,
    StateError,
    TruncatedFileError,
    UndefinedMetricError,
    UnsupportedVersionError,
)
from .evaluation import LabeledScores, StdProfile, auroc, best_f1_threshold, pixel_auroc, std_profile
from .gradcheck import GradcheckReport, run_gradient_checks
from .inference import AnomalyResult, BenchReport, benchmark, build_result, infer_batch, score_features
from .io_formats import (
    Checkpoint,
    DatasetManifest,
    SampleRecord,
    read_anomaly_map_raw,
    read_checkpoint,
    read_feature_file,
    read_manifest,
    read_map_sidecar,
    read_mask,
    write_anomaly_map,
    write_checkpoint,
    write_feature_file,
    write_manifest,
    write_mask,
)
from .model import (
    AdaptorParams,
    DiscriminatorParams,
    HeadParams,
    NoiseConfig,
    adaptor_forward,
    discriminator_forward,
    generate_anomalous,
    head_backward,
    init_head,
)
from .pipeline import HierarchyStack, PipelineConfig, extract_local_features
from .synth import SynthConfig, generate_dataset
from .tensors import aggregate_neighborhood, concat_channels, gaussian_filter, resize_bilinear
from .training import AdamState, EpochStats, TrainConfig, adam_step, cross_entropy_loss, train, truncated_l1_loss

__version__ = "0.1.0"
