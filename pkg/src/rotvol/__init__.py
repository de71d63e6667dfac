"""Relative rotation estimation for image pairs via dense correlation volumes."""

from .rotations import (AngleBins, EulerTriple, OverlapClass, RelPoseParam,
                        angle_to_bin, bin_to_angle, euler_to_matrix, geodesic_error,
                        matrix_to_euler, overlap_class, relative_from_params,
                        top_k_angles, wrap_angle)
from .panorama import CameraSpec, Panorama, render_perspective
from .synth import synth_panorama, synth_panorama_set

__version__ = "0.1.0"

__all__ = [
    "AngleBins", "CameraSpec", "EulerTriple", "OverlapClass", "Panorama",
    "RelPoseParam", "angle_to_bin", "bin_to_angle", "euler_to_matrix",
    "geodesic_error", "matrix_to_euler", "overlap_class", "relative_from_params",
    "render_perspective", "synth_panorama", "synth_panorama_set", "top_k_angles",
    "wrap_angle",
]
