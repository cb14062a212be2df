"""Neural building blocks: dense layers, conv blocks, the visual attention
gate, and the twin embedding network they assemble into.

Parameters are plain Tensors; weight sharing between the Siamese twins is
by identity (one network object embeds both sides of every pair).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def glorot_uniform(shape, fan_in: int, fan_out: int, rng) -> Tensor:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return T.uniform(shape, -a, a, rng, requires_grad=True)


class DenseLayer:
    """Affine map x @ W + b."""

    def __init__(self, in_features: int, out_features: int, rng):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = glorot_uniform([in_features, out_features], in_features, out_features, rng)
        self.bias = T.zeros([out_features], requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense layer expects [N,{self.in_features}], got {x.shape}")
        return T.matmul(x, self.weight) + self.bias

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self, prefix: str):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class ConvBlock:
    """Convolution + bias + activation, optionally followed by max pooling."""

    def __init__(self, in_channels: int, out_channels: int, rng, ksize: int = 3,
                 activation: str = "relu", slope: float = 0.2,
                 pool: int | None = 2, pool_stride: int | None = None,
                 padding: int | None = None):
        self.activation = activation
        self.slope = slope
        self.pool = pool
        self.pool_stride = pool_stride if pool_stride is not None else pool
        self.padding = padding if padding is not None else ksize // 2
        fan_in = in_channels * ksize * ksize
        fan_out = out_channels * ksize * ksize
        self.kernel = glorot_uniform([out_channels, in_channels, ksize, ksize],
                                     fan_in, fan_out, rng)
        self.bias = T.zeros([out_channels], requires_grad=True)

    def features(self, x: Tensor) -> Tensor:
        """The activated feature map before any pooling."""
        out = T.conv2d(x, self.kernel, self.bias, stride=1, padding=self.padding)
        return T.activation(out, self.activation, self.slope)

    def forward(self, x: Tensor) -> Tensor:
        out = self.features(x)
        if self.pool:
            out = T.max_pool2d(out, self.pool, self.pool_stride)
        return out

    def parameters(self):
        return [self.kernel, self.bias]

    def named_parameters(self, prefix: str):
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


class AttentionGate:
    """Additive attention over convolutional features.

    alpha = sigmoid(psi(relu(W_x*x + W_g*g + b))); the gated output is
    alpha broadcast over x's channels. x and g must share spatial extents.
    """

    def __init__(self, x_channels: int, gate_channels: int, rng,
                 inter_channels: int | None = None):
        inter = inter_channels if inter_channels is not None else max(x_channels // 2, 1)
        self.inter_channels = inter
        self.w_x = glorot_uniform([inter, x_channels, 1, 1], x_channels, inter, rng)
        self.w_g = glorot_uniform([inter, gate_channels, 1, 1], gate_channels, inter, rng)
        self.bias = T.zeros([inter], requires_grad=True)
        self.psi = glorot_uniform([1, inter, 1, 1], inter, 1, rng)
        self.psi_bias = T.zeros([1], requires_grad=True)

    def forward(self, x: Tensor, g: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[2:] != g.shape[2:] or x.shape[0] != g.shape[0]:
            raise ShapeError(f"x {x.shape} and gating signal {g.shape} must share "
                             "batch and spatial extents")
        mix = T.conv2d(x, self.w_x) + T.conv2d(g, self.w_g) \
            + self.bias.reshape(self.inter_channels, 1, 1)
        alpha = T.sigmoid(T.conv2d(T.relu(mix), self.psi, self.psi_bias))
        return alpha * x, alpha

    def parameters(self):
        return [self.w_x, self.w_g, self.bias, self.psi, self.psi_bias]

    def named_parameters(self, prefix: str):
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_g": self.w_g,
                f"{prefix}.bias": self.bias, f"{prefix}.psi": self.psi,
                f"{prefix}.psi_bias": self.psi_bias}


class EmbeddingNetwork:
    """The shared-weight embedding tower G mapping images to latent vectors.

    Three conv blocks halve the resolution each; the attention gate sits
    between the last two blocks, gating the middle feature map with the
    upsampled deepest one, and the gated map feeds two dense layers ending
    at ``latent_dim``.
    """

    def __init__(self, input_hw: tuple[int, int] = (64, 64), latent_dim: int = 64,
                 channels: tuple[int, int, int] = (8, 16, 32), hidden: int = 128,
                 seed: int = 0):
        h, w = input_hw
        if h % 8 or w % 8:
            raise ShapeError(f"input resolution must be divisible by 8, got {input_hw}")
        self.input_hw = (h, w)
        self.latent_dim = latent_dim
        self.channels = tuple(channels)
        self.hidden = hidden
        c1, c2, c3 = channels
        rng = np.random.default_rng(seed)
        self.block1 = ConvBlock(1, c1, rng)
        self.block2 = ConvBlock(c1, c2, rng)
        self.block3 = ConvBlock(c2, c3, rng)
        self.gate = AttentionGate(c2, c3, rng)
        self.gated_hw = (h // 4, w // 4)
        flat = c2 * self.gated_hw[0] * self.gated_hw[1]
        self.fc1 = DenseLayer(flat, hidden, rng)
        self.fc2 = DenseLayer(hidden, latent_dim, rng)

    def _check_input(self, images: Tensor) -> None:
        if images.data.ndim != 4 or images.shape[1] != 1 \
                or images.shape[2:] != self.input_hw:
            raise ShapeError(
                f"expected images [N,1,{self.input_hw[0]},{self.input_hw[1]}], "
                f"got {images.shape}")

    def forward(self, images: Tensor, return_attention: bool = False):
        self._check_input(images)
        h1 = self.block1.forward(images)
        h2 = self.block2.forward(h1)
        h3 = self.block3.forward(h2)
        gated, alpha = self.gate.forward(h2, T.upsample2d(h3, 2))
        n = gated.shape[0]
        z = self.fc2.forward(T.relu(self.fc1.forward(gated.reshape(n, -1))))
        if return_attention:
            return z, alpha
        return z

    def attention_map(self, images: Tensor) -> np.ndarray:
        """Per-image attention mask upsampled to the input resolution, in [0,1]."""
        _, alpha = self.forward(images, return_attention=True)
        up = T.upsample2d(alpha, self.input_hw[0] // alpha.shape[2])
        return up.data[:, 0, :, :]

    def parameters(self):
        params = []
        for part in (self.block1, self.block2, self.block3, self.gate, self.fc1, self.fc2):
            params.extend(part.parameters())
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for prefix, part in (("block1", self.block1), ("block2", self.block2),
                             ("block3", self.block3), ("gate", self.gate),
                             ("fc1", self.fc1), ("fc2", self.fc2)):
            named.update(part.named_parameters(prefix))
        return named

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = set(named) - set(state)
        if missing:
            raise ShapeError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, p in named.items():
            value = state[name]
            if tuple(value.shape) != p.shape:
                raise ShapeError(f"parameter {name} has shape {value.shape}, "
                                 f"expected {p.shape}")
            p.data = value.astype(np.float32).copy()

    def freeze(self) -> "EmbeddingNetwork":
        """Mark all parameters read-only for inference sharing."""
        T.set_requires_grad(self.parameters(), False)
        return self

    def config(self) -> dict:
        return {"input_hw": list(self.input_hw), "latent_dim": self.latent_dim,
                "channels": list(self.channels), "hidden": self.hidden}

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 0) -> "EmbeddingNetwork":
        return cls(input_hw=tuple(cfg["input_hw"]), latent_dim=cfg["latent_dim"],
                   channels=tuple(cfg["channels"]), hidden=cfg["hidden"], seed=seed)
