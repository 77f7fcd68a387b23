"""Modular multilingual formality transfer at toy scale.

A numpy autograd core, a small pre-LN seq2seq transformer, bottleneck
adapters with cross-attention transplantation, the three training regimes
(language adaptation, task adaptation, supervised fine-tuning / IBT), a
synthetic bilingual formality corpus, and the BLEU/ACC/HM evaluation.
"""
from .exceptions import ConfigError, ContractError, DimensionError, FormatError, GenerationError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DimensionError", "FormatError", "GenerationError", "__version__"]
