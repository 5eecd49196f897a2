"""Desk-scale textless audio-visual transformer.

Raw video frames and log-mel spectrograms are patch-tokenized and fed to a
modality-agnostic encoder; pretraining pairs a vision-audio matching
objective with masked autoencoding through a shallow shared decoder. The
numerics stack (reverse-mode autodiff, AdamW, cosine schedule) is built in
and verified against independent oracles via `avmae selfcheck`.
"""

__version__ = "0.1.0"

from .tensor import Tensor  # noqa: F401
