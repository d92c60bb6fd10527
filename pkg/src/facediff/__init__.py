"""Multi-modal conditioned diffusion on a procedurally generated face domain.

Submodules: numerics (autodiff + tensor IO), kernels (numba/numpy raster
kernels), facegen (domain + oracles), conditioning (encoders + surrogates),
denoiser (noise network + EAM), diffusion (schedule, sampler, CFG),
trainer (variants, Adam, checkpoints), analytic (Gaussian-mixture oracle),
evalkit (metrics), cli (entry point).
"""

__version__ = "0.1.0"
