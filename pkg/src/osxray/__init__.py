"""One-shot chest X-ray triage engine.

GAN-based augmentation feeding an attention-gated convolutional Siamese
network with a contrastive energy objective, plus the serving, evaluation
and semi-live retraining machinery around it.
"""

__version__ = "0.1.0"
