"""trajdiff: trajectory-conditioned toy video diffusion.

Annotated point trajectories are rasterized into id-coded and color-cue
condition videos, tokenized by a fixed linear codec, and injected into a
small diffusion transformer through sequence concatenation with a causal
condition mask, condition-only low-rank adapters, and a condition KV cache.
Training follows a density/alignment annealing curriculum; trajectory
metrics evaluate how faithfully generated videos follow the given motion.
"""

__version__ = "0.1.0"
