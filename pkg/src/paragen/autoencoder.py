"""Topic auto-encoder over region features.

A linear embed layer (with batch normalization over the region axis)
maps raw detector features to the region feature map; a valid strided
convolution with full-height filters distills K topic vectors; a
transposed convolution reconstructs the map for an L1 loss; a linear
stop head scores CONTINUE/STOP per topic.
"""

from __future__ import annotations

import numpy as np

from paragen import tensor as T
from paragen.config import TrainConfig
from paragen.corpus import RawRegionSet
from paragen.tensor import Parameter, RngStream, Tensor


def conv_encode(v: Tensor, filters: Tensor, bias: Tensor, stride: int) -> Tensor:
    """(M, D1) map -> (K, D2) topic rows; valid convolution, no padding."""
    return T.conv1d_regions(v, filters, bias, stride)


def deconv_decode(topics: Tensor, filters: Tensor, bias: Tensor, stride: int,
                  d_region: int) -> Tensor:
    """(K, D2) topics -> reconstructed (M, D1) map; exact adjoint geometry."""
    return T.deconv1d_regions(topics, filters, bias, stride, d_region)


def reconstruction_loss(reconstructed: Tensor, v: Tensor) -> Tensor:
    return T.l1_loss(reconstructed, v)


class TopicAutoencoder:
    """Embed + batch norm, conv encoder, deconv decoder, stop head.

    Conv and deconv filters are independent parameters; tying them is a
    test-only mode for the adjoint property.
    """

    def __init__(self, cfg: TrainConfig, rng: RngStream, prefix: str = "cae"):
        self.cfg = cfg
        d0, d1, d2 = cfg.d_raw, cfg.d_region, cfg.d_topic
        k, m, c1 = cfg.max_sentences, cfg.m_regions, cfg.conv_width
        p = prefix
        self.embed_w = Parameter(f"{p}.embed_w", T.init_uniform(rng, (d0, d1), d0))
        self.embed_b = Parameter(f"{p}.embed_b", np.zeros((1, d1)))
        self.bn_gamma = Parameter(f"{p}.bn_gamma", np.ones((1, d1)))
        self.bn_beta = Parameter(f"{p}.bn_beta", np.zeros((1, d1)))
        fan_conv = m * c1
        self.conv_f = Parameter(f"{p}.conv_f", T.init_uniform(rng, (k, m, c1), fan_conv))
        self.conv_b = Parameter(f"{p}.conv_b", np.zeros(k))
        self.deconv_f = Parameter(f"{p}.deconv_f",
                                  T.init_uniform(rng, (k, m, c1), k))
        self.deconv_b = Parameter(f"{p}.deconv_b", np.zeros(d1))
        self.stop_w = Parameter(f"{p}.stop_w", T.init_uniform(rng, (d2, 2), d2))
        self.stop_b = Parameter(f"{p}.stop_b", np.zeros((1, 2)))

    def parameters(self) -> list:
        return [self.embed_w, self.embed_b, self.bn_gamma, self.bn_beta,
                self.conv_f, self.conv_b, self.deconv_f, self.deconv_b,
                self.stop_w, self.stop_b]

    def embed_regions(self, raw: RawRegionSet, training: bool = False,
                      normalize: bool = True) -> Tensor:
        """Raw (M, D0) features -> normalized (M, D1) region feature map.

        Normalization is over the region axis of the image at hand, in
        training and evaluation alike, so decode-time embeddings match
        what the losses saw.
        """
        if raw.features.shape != (self.cfg.m_regions, self.cfg.d_raw):
            raise T.ShapeError(
                f"region features {raw.features.shape} do not match config"
                f" ({self.cfg.m_regions}, {self.cfg.d_raw})")
        x = T.add_rowvec(T.matmul(Tensor(raw.features), self.embed_w.tensor),
                         self.embed_b.tensor)
        if not normalize:
            return x
        out, _mu, _var = T.batchnorm_train(x, self.bn_gamma.tensor,
                                           self.bn_beta.tensor)
        return out

    def encode(self, v: Tensor) -> Tensor:
        return conv_encode(v, self.conv_f.tensor, self.conv_b.tensor,
                           self.cfg.conv_stride)

    def decode(self, topics: Tensor) -> Tensor:
        return deconv_decode(topics, self.deconv_f.tensor, self.deconv_b.tensor,
                             self.cfg.conv_stride, self.cfg.d_region)

    def stop_logits(self, topics: Tensor) -> Tensor:
        """(K, 2) CONTINUE/STOP logits, one row per topic."""
        return T.add_rowvec(T.matmul(topics, self.stop_w.tensor),
                            self.stop_b.tensor)

    def predict_stop(self, topics: Tensor) -> np.ndarray:
        """P(STOP) per topic, as plain floats."""
        probs = T.softmax(self.stop_logits(topics), axis=-1)
        return probs.data[:, 1].copy()

    def reconstruction_loss(self, v: Tensor) -> Tensor:
        return reconstruction_loss(self.decode(self.encode(v)), v)
