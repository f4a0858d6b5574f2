"""Bridge from pretrained vision-language checkpoints to the massrank
wire protocol and table formats.

The adapter owns everything model-specific: tokenization (reported
verbatim, the engine never re-tokenizes), per-token conditional
log-probability extraction, rendering of the reserved "null" image as a
black-filled input at the model's native resolution, and deterministic
inference configuration.  It communicates with the scoring engine only
through the documented line-delimited JSON protocol and file formats.
"""

__version__ = "0.1.0"

from .model import CaptioningScorer
from .tiny import make_tiny_checkpoint
