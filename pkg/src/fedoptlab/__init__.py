"""fedoptlab: a deterministic, desk-scale federated-optimization laboratory.

Building blocks: gradient compression operators with declared variance
classes and bit-exact wire costs, client sampling schemes with variance
certificates and budgeted importance sampling, synthetic finite-sum
problems with exact oracles, a zoo of compressed / variance-reduced /
local-update optimizers, linear ordered dropout, and a config-driven
experiment harness with CSV metrics.
"""

from . import algorithms, codec, compressors, ordered_dropout, problems, sampling
from .records import RoundRecord, RunResult
from .rng import RandomStream

__version__ = "0.1.0"

__all__ = [
    "algorithms",
    "codec",
    "compressors",
    "ordered_dropout",
    "problems",
    "sampling",
    "RoundRecord",
    "RunResult",
    "RandomStream",
    "__version__",
]
