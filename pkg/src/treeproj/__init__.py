"""Point-cloud toolkit for projection-image tree species classification.

Converts labeled single-tree point clouds into multi-view orthographic
projection images (silhouette, intensity and normal-vector colorings),
registers and matches segments against reference positions, aggregates
per-image classifier probabilities into per-tree predictions and computes
the evaluation metrics suite.
"""

from .cloud import INTENSITY_MAX, SPECIES_LABELS, PointCloud, TreeSegment
from .config import ConfigError, PipelineConfig, load_config_file
from .evaluation import (EvalReport, ProbabilityRecord, ProbabilityTable,
                         TreePrediction, aggregate_predictions,
                         baseline_classify, compute_metrics, grouped_split,
                         read_probability_csv, read_truth_csv,
                         write_probability_csv, write_truth_csv)
from .io import (DatasetManifest, ManifestEntry, SegmentIOError,
                 read_manifest, read_segment, scan_manifest, write_manifest,
                 write_segment)
from .normals import (NormalParams, estimate_normals, orient_outward,
                      plane_fit_normals)
from .preprocess import (SorParams, TrunkEstimate, estimate_trunk,
                         min_spacing_subsample, sor_filter)
from .projection import (COLORINGS, TRAINING_ANGLES, ImageMeta,
                         ProjectionImage, RasterFrame, RenderConfig,
                         bilinear_resize, emit_dataset, empty_pixel_ratio,
                         gaussian_kernel_3x3, image_filename, inference_angles,
                         load_image_dir, load_png, parse_image_filename,
                         pixel_ground_size, rasterize, render_tree,
                         resize_bilinear, rotate_trunk, rotate_z, save_png,
                         slice_points, smooth_channels)
from .registration import (MatchResult, RigidTransform, apply_transform,
                           fit_rigid, mutual_nn_match)

__version__ = "0.1.0"
