"""Semi-supervised singing voice synthesis with dual classifier-free diffusion guidance.

The package covers the full desk-scale pipeline: score-label parsing and
frame alignment, log-mel feature extraction, score-matching training of a
conditional score estimator, reverse-SDE sampling with separately weighted
text and pitch guidance, and objective evaluation. A closed-form Gaussian
mixture oracle verifies the guidance algebra and the samplers.
"""

__version__ = "0.1.0"
