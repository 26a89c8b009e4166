"""Adaptive surface-normal recovery from depth maps.

The package turns depth maps into 3D points and surface normals, weighs
randomly sampled local plane hypotheses by projected area and per-pixel
context similarity, supplies the matching losses with analytic gradients,
and evaluates results with standard depth / normal / point-cloud metrics.
Synthetic scenes with analytic ground truth drive the bundled experiments.
"""

from .camera import (DepthMap, Intrinsics, NormalMap, PointMap, extract_patch,
                     orient_to_camera, project, unproject)
from .context import (ContextFit, ContextMap, GuidanceMap, SampleSet,
                      fit_context_demo, guidance_weights, intensity_map,
                      normalized_similarities, similarity, top_v_sample,
                      triplet_confidence)
from .estimators import (AsnConfig, TripletSet, WeightedCandidate, asn_candidates,
                         asn_normal, average_normal, combine_candidates,
                         enumerate_patch_triplets, least_squares_normal,
                         projected_area, recover_normal_map, sample_triplets,
                         sobel_normal, triplet_normal)
from .losses import (LossConfig, ScaleStack, asn_loss, asn_loss_from_depth,
                     finite_difference_oracle, grad_asn_wrt_context,
                     grad_asn_wrt_depth, grad_silog_wrt_depth,
                     multiscale_depth_loss, silog_loss, total_loss,
                     virtual_normal_loss, weighted_normal_loss)
from .metrics import (DepthMetrics, MetricsReport, NormalMetrics,
                      PointcloudMetrics, angle_errors_deg, depth_metrics,
                      normal_metrics, pointcloud_metrics)
from .scenes import (Scene, SceneSpec, SweepResult, SweepRow,
                     crease_adjacent_mask, gen_scene, run_noise_experiment,
                     run_patch_sweep, run_triplet_sweep, window_from_ratio)

__version__ = "0.1.0"
