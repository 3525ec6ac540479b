"""Topic-conditioned image paragraph generation at desk scale.

A convolutional auto-encoder distills a fixed number of topic vectors
from region-level image features; a two-level LSTM with region attention
emits one sentence per topic. Training runs in two phases: cross-entropy
plus reconstruction, then self-critical policy optimization with a
combined coverage + CIDEr-D reward.
"""

from paragen.config import TrainConfig
from paragen.estimator import ParagraphCaptioner

__version__ = "0.1.0"

__all__ = ["TrainConfig", "ParagraphCaptioner", "__version__"]
