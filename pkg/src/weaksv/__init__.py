"""weaksv: a desk-scale lab for weakly-supervised speaker-embedding training.

Pipeline: synthetic corpus generation -> simulated diarization -> stage-1
multi-instance training on recording-level labels -> self-labeling ->
stage-2 supervised retraining (optionally with an extra unknown class) ->
verification scoring (EER / minDCF).
"""

__version__ = "0.1.0"
