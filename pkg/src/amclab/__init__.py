"""Desk-scale adversarial robustness laboratory.

Attack suite (FGSM, PGM, EAP, VAP), adversarial training, model cascades
with parameter transfer and forgetting mitigation, a simulated adaptive
black-box adversary, feature-squeezing quantization, and a deterministic
evaluation harness.
"""

__version__ = "0.1.0"
