"""Hand kinematics toolkit.

Parametric hand mesh with linear-blend-skinning forward kinematics, a
biomechanically feasible 23-DoF pose space with learned and
optimization-based inverse kinematics, 1D lixel heatmaps, synthetic
pose/camera generation, pose-estimation metrics, and an analytic MAC
profiler for neural architectures.
"""

from .bio_dof import (AxisTable, BioPose, DofLimits, clamp, derive_axes,
                      expand, is_feasible)
from .hand_model import (FullPose, HandModel, Mesh, ShapeParams, Skeleton,
                         forward, from_mano_arrays, load_model,
                         make_desk_hand, make_desk_hand_small, regress_joints,
                         rest_joints, save_model, shape_offset, write_obj)
from .ik_net import (BoneFeatures, MlpIk, SynthPairSet, TrainConfig, featurize,
                     generate_pairs, ik_loss, load_checkpoint, predict,
                     save_checkpoint, train)
from .ik_optim import (FitConfig, FitResult, FitTarget, bend_penalty, fit,
                       fit_jacobian, fit_loss)
from .lixel import Heatmap1D, decode, encode, marginalize
from .metrics import EvalReport, evaluate, fscore, mpjpe, pa_mpjpe, procrustes_align
from .profiler import (LayerSpec, NetGraph, compare_decoders, layer_macs,
                       profile)
from .synth import (CameraPose, PoseLibrary, augment_library, project,
                    sample_cameras, swap_fingers)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
