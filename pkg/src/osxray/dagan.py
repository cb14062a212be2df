"""Data-augmentation GAN.

The generator encodes an image to a latent vector, perturbs it with scaled
Gaussian noise and decodes it back, producing class-preserving variants.
The discriminator scores (reference image, candidate image) channel pairs,
conditioning real/fake discrimination on a genuine same-class reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ImageSample, normalize_resize
from .errors import DomainError, ShapeError, StateError
from .layers import ConvBlock, DenseLayer
from .tensor import Tensor


class DaganGenerator:
    """Encoder -> noisy latent -> decoder; outputs stay within [0,1]."""

    def __init__(self, input_hw: tuple[int, int] = (64, 64), latent_dim: int = 64,
                 channels: tuple[int, int, int] = (8, 16, 32), noise_scale: float = 0.5,
                 seed: int = 0):
        h, w = input_hw
        if h % 8 or w % 8:
            raise ShapeError(f"input resolution must be divisible by 8, got {input_hw}")
        if noise_scale < 0:
            raise DomainError(f"noise_scale must be >= 0, got {noise_scale}")
        self.input_hw = (h, w)
        self.latent_dim = latent_dim
        self.channels = tuple(channels)
        self.noise_scale = noise_scale
        self.train_steps = 0
        c1, c2, c3 = channels
        self.bottleneck_hw = (h // 8, w // 8)
        flat = c3 * self.bottleneck_hw[0] * self.bottleneck_hw[1]
        rng = np.random.default_rng(seed)
        self.enc1 = ConvBlock(1, c1, rng)
        self.enc2 = ConvBlock(c1, c2, rng)
        self.enc3 = ConvBlock(c2, c3, rng)
        self.enc_fc = DenseLayer(flat, latent_dim, rng)
        self.dec_fc = DenseLayer(latent_dim, flat, rng)
        self.dec1 = ConvBlock(c3, c2, rng, pool=None)
        self.dec2 = ConvBlock(c2, c1, rng, pool=None)
        self.dec3 = ConvBlock(c1, 1, rng, activation="sigmoid", pool=None)

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != self.input_hw:
            raise ShapeError(f"expected images [N,1,{self.input_hw[0]},"
                             f"{self.input_hw[1]}], got {x.shape}")

    def encode(self, x: Tensor) -> Tensor:
        self._check_input(x)
        h = self.enc3.forward(self.enc2.forward(self.enc1.forward(x)))
        z = self.enc_fc.forward(h.reshape(x.shape[0], -1))
        # RMS-normalize each code so the injected noise has a meaningful,
        # fixed scale and the encoder cannot drown it by growing magnitudes
        mean_sq = (z * z).sum(axis=1) / z.shape[1]
        scale = T.rsqrt(mean_sq + T.full([z.shape[0]], 1e-6))
        return z * scale.reshape(z.shape[0], 1)

    def decode(self, z: Tensor) -> Tensor:
        n = z.shape[0]
        c3 = self.channels[2]
        bh, bw = self.bottleneck_hw
        h = T.relu(self.dec_fc.forward(z)).reshape(n, c3, bh, bw)
        h = self.dec1.forward(T.upsample2d(h, 2))
        h = self.dec2.forward(T.upsample2d(h, 2))
        return self.dec3.forward(T.upsample2d(h, 2))

    def parameters(self):
        params = []
        for part in (self.enc1, self.enc2, self.enc3, self.enc_fc,
                     self.dec_fc, self.dec1, self.dec2, self.dec3):
            params.extend(part.parameters())
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for prefix, part in (("enc1", self.enc1), ("enc2", self.enc2),
                             ("enc3", self.enc3), ("enc_fc", self.enc_fc),
                             ("dec_fc", self.dec_fc), ("dec1", self.dec1),
                             ("dec2", self.dec2), ("dec3", self.dec3)):
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

    def config(self) -> dict:
        return {"input_hw": list(self.input_hw), "latent_dim": self.latent_dim,
                "channels": list(self.channels), "noise_scale": self.noise_scale}


class DaganDiscriminator:
    """Conv stack over the 2-channel (reference, candidate) stack -> logit."""

    def __init__(self, input_hw: tuple[int, int] = (64, 64),
                 channels: tuple[int, int, int] = (8, 16, 32), hidden: int = 64,
                 seed: int = 1):
        h, w = input_hw
        if h % 8 or w % 8:
            raise ShapeError(f"input resolution must be divisible by 8, got {input_hw}")
        self.input_hw = (h, w)
        c1, c2, c3 = channels
        rng = np.random.default_rng(seed)
        self.block1 = ConvBlock(2, c1, rng, activation="leaky_relu")
        self.block2 = ConvBlock(c1, c2, rng, activation="leaky_relu")
        self.block3 = ConvBlock(c2, c3, rng, activation="leaky_relu")
        flat = c3 * (h // 8) * (w // 8)
        self.fc1 = DenseLayer(flat, hidden, rng)
        self.fc2 = DenseLayer(hidden, 1, rng)

    def logits(self, reference: Tensor, candidate: Tensor) -> Tensor:
        if reference.shape != candidate.shape:
            raise ShapeError(f"reference {reference.shape} and candidate "
                             f"{candidate.shape} must match")
        stacked = T.concat([reference, candidate], axis=1)
        h = self.block3.forward(self.block2.forward(self.block1.forward(stacked)))
        h = T.leaky_relu(self.fc1.forward(h.reshape(stacked.shape[0], -1)), 0.2)
        return self.fc2.forward(h)

    def parameters(self):
        params = []
        for part in (self.block1, self.block2, self.block3, self.fc1, self.fc2):
            params.extend(part.parameters())
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for prefix, part in (("block1", self.block1), ("block2", self.block2),
                             ("block3", self.block3), ("fc1", self.fc1),
                             ("fc2", self.fc2)):
            named.update(part.named_parameters(prefix))
        return named


@dataclass
class GanTrainState:
    """Optimizers plus aligned, append-only loss histories."""

    g_opt: T.Adam
    d_opt: T.Adam
    step: int = 0
    d_history: list[float] = field(default_factory=list)
    g_history: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, gen: DaganGenerator, disc: DaganDiscriminator,
               g_lr: float = 1e-3, d_lr: float = 5e-4) -> "GanTrainState":
        # discriminator steps gentler than the generator so it cannot run away
        return cls(T.Adam(gen.parameters(), lr=g_lr), T.Adam(disc.parameters(), lr=d_lr))


def generate(gen: DaganGenerator, x: Tensor, noise) -> Tensor:
    """decode(encode(x) + noise_scale * noise); same shape as x, values in [0,1].

    ``noise`` is a latent-length vector or an [N, latent] batch; the sigmoid
    output layer already confines pixels to [0,1], so no clamp can bind.
    """
    gen._check_input(x)
    noise = np.asarray(noise, dtype=np.float32)
    if noise.ndim == 1:
        noise = np.broadcast_to(noise, (x.shape[0], gen.latent_dim))
    if noise.shape != (x.shape[0], gen.latent_dim):
        raise ShapeError(f"noise shape {noise.shape} does not match "
                         f"[N,{gen.latent_dim}]")
    z = gen.encode(x)
    z = z + Tensor(gen.noise_scale * noise)
    return gen.decode(z)


def discriminate(disc: DaganDiscriminator, reference: Tensor, candidate: Tensor) -> float:
    """Probability that the candidate is a real image of the reference's class."""
    score = T.sigmoid(disc.logits(reference, candidate)).item()
    return float(np.clip(score, 1e-7, 1 - 1e-7))


def dagan_train_step(state: GanTrainState, gen: DaganGenerator,
                     disc: DaganDiscriminator, batch: Tensor, rng,
                     recon_weight: float = 10.0) -> tuple[float, float]:
    """One discriminator update then one generator update on a same-class batch.

    Discriminator: binary cross-entropy, real (reference, image) pairs vs
    (reference, generated) pairs with the generator frozen. Generator:
    non-saturating adversarial loss plus L1 reconstruction, discriminator
    frozen. Reconstruction carries the dominant weight: with it anywhere
    near parity the adversarial gradients drown the fidelity signal and
    generated samples stop carrying their class.
    """
    n = batch.shape[0]
    if n < 2:
        raise DomainError(f"a training batch needs at least 2 images, got {n}")
    refs = Tensor(np.roll(batch.data, 1, axis=0))

    noise = rng.standard_normal((n, gen.latent_dim)).astype(np.float32)
    fake = generate(gen, batch, noise).detach()
    d_loss = T.bce_with_logits(disc.logits(refs, batch), 1).mean() \
        + T.bce_with_logits(disc.logits(refs, fake), 0).mean()
    T.backward(d_loss)
    state.d_opt.step()

    T.set_requires_grad(disc.parameters(), False)
    try:
        noise = rng.standard_normal((n, gen.latent_dim)).astype(np.float32)
        fake = generate(gen, batch, noise)
        adversarial = T.bce_with_logits(disc.logits(refs, fake), 1).mean()
        reconstruction = (fake - batch).abs().mean()
        g_loss = adversarial + T.full([1], recon_weight) * reconstruction
        T.backward(g_loss)
        state.g_opt.step()
    finally:
        T.set_requires_grad(disc.parameters(), True)

    gen.train_steps += 1
    state.step += 1
    d_val, g_val = d_loss.item(), g_loss.item()
    state.d_history.append(d_val)
    state.g_history.append(g_val)
    return d_val, g_val


def augment_dataset(gen: DaganGenerator, samples: list[ImageSample], k: int,
                    rng) -> list[ImageSample]:
    """Return the originals plus k generated variants per sample.

    Generated samples keep the source image's category, carry source
    "generated" and are confined to the train split.
    """
    if k < 0:
        raise DomainError(f"k must be >= 0, got {k}")
    if k > 0 and gen.train_steps == 0:
        raise StateError("generator has not been trained; refusing to augment")
    out = list(samples)
    for sample in samples:
        x = normalize_resize(sample, gen.input_hw)
        for j in range(k):
            noise = rng.standard_normal(gen.latent_dim).astype(np.float32)
            img = generate(gen, x, noise).data[0, 0]
            pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
            out.append(ImageSample(f"{sample.id}.gen{j}", pixels, sample.category,
                                   source="generated", split="train"))
    return out
