from .action import path_action, path_step_terms, step_terms
from .kernel import (TransitionKernel, build_kernel, propagate, propagate_sequence,
                     propagate_spec)
from .mpp import PathSample, action_gradient, most_probable_path
from .sampler import PathSamples, integrated_autocorrelation, sample_paths_metropolis

__all__ = [
    "PathSample", "PathSamples", "TransitionKernel", "action_gradient", "build_kernel",
    "integrated_autocorrelation", "most_probable_path", "path_action", "path_step_terms",
    "propagate", "propagate_sequence", "propagate_spec", "sample_paths_metropolis",
    "step_terms",
]
