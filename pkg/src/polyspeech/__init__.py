"""Multilingual contrastive speech pre-training on numpy, at desk scale.

Subpackages:
  numerics   autodiff tensors, gradient checking, gumbel sampling
  encoder    conv feature encoder, conformer context network, quantizer

Modules:
  objectives loss functions (contrastive, diversity, adversarial, orthogonal)
  langcond   language-conditioning mechanisms and parameter accounting
  data       synthetic multilingual corpus, batching, span masking
  model      variant assembly (xlsr / la / le / lsa / lsaw)
  trainer    Adam, schedules, the pre-training loop, checkpoints
  evaluation linear probes and variant comparison
  verify     self-checks runnable from the command line
  cli        the ``polyspeech`` entry point
"""

__version__ = "0.1.0"
