"""Text-driven video editing with disentangled motion/content latents.

Subsystems:
    scenes      synthetic moving-shapes dataset (render, describe, store)
    textenc     text embeddings and the projection to the text-relevant latent
    odeint      differentiable ODE solvers (adaptive 5th order + fixed RK4)
    repnet      set-based variational video encoder with latent dynamics
    tranet      text/content-conditioned translation generator
    adversary   multi-scale conditional patch discriminator
    objectives  loss terms and their weighted composition
    metrics     disentanglement, fidelity and manipulation metrics
    train/cli   training loop, checkpointing and the command-line interface
"""

__version__ = "0.1.0"
