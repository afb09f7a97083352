"""Text-guided fine-grained 3D facial expression editing.

A linear morphable mesh model, cross-attention dual mappers that produce
residual latent edits, an embedding-subspace projection and augmentation
objective, and a small reverse-mode autodiff engine that trains the whole
pipeline end to end against frozen differentiable surrogates.
"""

__version__ = "0.1.0"
