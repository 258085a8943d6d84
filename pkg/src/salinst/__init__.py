"""Proposal-free salient instance segmentation toolkit."""

from .crf import CrfParams, UnaryField, binarize, crf_energy, mean_field_refine, pairwise_kernel
from .metrics import (
    EvalReport,
    ap_r,
    ap_r_scored,
    evaluate_manifest,
    f_measure,
    instance_iou,
    mae,
    masks_from_labels,
    max_f_measure,
)
from .netblocks import (
    DenseLayerParams,
    SeParams,
    dense_block_forward,
    finite_diff_check,
    se_forward,
    se_gate,
    weighted_cross_entropy,
)
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .slic import (
    SuperpixelPartition,
    enforce_connectivity,
    rgb_to_lab,
    slic_segment,
    superpixel_means,
)
from .spectral import (
    AffinityGraph,
    InstanceCountError,
    InstanceSegmentation,
    SpectralEmbedding,
    SpectralParams,
    build_affinity,
    cluster_instances,
    fractile_percentages,
    kmeans,
    normalized_laplacian,
    quantile_init,
    smallest_k_eigenvectors,
)
from .synth import PlacementError, SynthFixture, synth_fixture, write_fixture
from .tensorio import (
    FormatError,
    ImageBuffer,
    UnsupportedFormatError,
    image_to_tensor,
    read_npy,
    read_pnm,
    resize_bilinear,
    tensor_to_image,
    write_npy,
    write_pnm,
)

__version__ = "0.1.0"
