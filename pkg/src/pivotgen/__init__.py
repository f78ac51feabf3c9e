"""pivotgen: zero-shot captioning and translation on a synthetic world.

One shared latent space, four toy languages and a vision modality,
trained only on pivot-centric pairs; generation then crosses domain
pairs never seen together during training.
"""

__version__ = "0.1.0"

from .tensor import Tensor, grad_check  # noqa: F401
