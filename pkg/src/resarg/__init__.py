"""Multi-task residual networks for argument mining.

Corpus ingestion, pair dataset construction with argumentative-distance
encoding, ResArg/ResAttArg training, ensemble prediction, and the
evaluation suite.
"""

__version__ = "0.1.0"
