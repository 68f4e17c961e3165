"""Camera and jaw pose recovery from teeth silhouettes, stage rendering and mouth compositing."""

from .camera import PoseParams, project_points, rotation_matrix
from .fit import (FDSteps, FitError, FitOptions, FitResult, SilhouetteLoss, fd_gradient, fit_pose,
                  masked_silhouette_loss, silhouette_distance)
from .imaging import (CropRect, color_transfer, extract_crop, fuse, lab_to_rgb, paste_crop,
                      rgb_to_lab)
from .render import (RenderOptions, depth_to_mask, id_map_to_silhouette, render_depth, render_id_map,
                     render_modalities, render_silhouette, render_stage)
from .synth import (ArchSpec, PoseRanges, RecoveryReport, SyntheticCase, default_pose,
                    evaluate_recovery, make_arch_model, make_synthetic_case, perturb_pose)
from .teeth import (MeshFormatError, TeethModel, Tooth, ToothSetMismatch, TreatmentSeries,
                    apply_jaw_offset, load_treatment_series, model_bounds, save_treatment_series)

__version__ = "0.1.0"
