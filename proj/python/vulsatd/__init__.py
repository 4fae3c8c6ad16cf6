"""SATD and vulnerability classification pipeline for C functions.

Thin Python layer over the native `_vulsatd` extension: corpus ingestion and
C comment/function lexing, MAT/pattern SATD annotation with the chi-square
independence test, from-scratch BPE tokenization with head-only truncation,
a compact bimodal transformer with single- and multi-task heads, and the
experiment machinery (splits, metrics, delta reports, MT-vs-ST benchmark).
"""

from ._vulsatd import *  # noqa: F401,F403
from ._vulsatd import __version__  # noqa: F401
