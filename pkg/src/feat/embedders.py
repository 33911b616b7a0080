"""Joint text-image embedders.

The training objective only needs something that maps images and prompts
into one unit sphere; anything with that shape can stand behind the
JointEmbedder interface. Two synthetic embedders ship here:

RegionStatEmbedder embeds the per-channel means of one pixel rectangle
through a fixed orthonormal projection, so its image embedding provably
ignores everything outside the rectangle. Its prompts come from a small
vocabulary of unit target vectors. This is the oracle used to test that
masks localize edits.

ProjectionEmbedder is a generic stand-in: box-pool to 8x8, a fixed seeded
linear map, normalization. Its text side hashes the token sequence to a
unit vector. It also serves as the identity embedder for the evaluation
metrics.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ConfigurationError, NumericError, VocabularyError
from .generator import ImageTensor
from .seeding import tensor_rng

POOL_SIZE = 8


def _unit_graph(v: Tensor) -> Tensor:
    return v / ad.l2norm(v)


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ConfigurationError(f"{what} must be a nonzero vector")
    return v / norm


class JointEmbedder(ABC):
    """Deterministic text-image embedding pair with unit-norm outputs."""

    embed_dim: int
    input_resolution: int

    @abstractmethod
    def embed_image_graph(self, image: Tensor) -> Tensor:
        """Differentiable embedding of a (3, R, R) image tensor; unit norm."""

    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        """Unit-norm embedding of a prompt."""

    def embed_image(self, image: ImageTensor | np.ndarray) -> np.ndarray:
        pixels = image.pixels if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
        if not np.all(np.isfinite(pixels)):
            raise NumericError("image contains non-finite pixels")
        return self.embed_image_graph(Tensor.constant(pixels)).data.copy()

    def _prepare(self, image: Tensor) -> Tensor:
        """Shape check plus in-graph bilinear resize to the input resolution."""
        if image.ndim != 3 or image.shape[0] != 3:
            raise ArgumentError(f"image must be (3, H, W), got shape {image.shape}")
        res = self.input_resolution
        if image.shape[1:] != (res, res):
            image = ad.resize_bilinear(image, (res, res))
        return image

    @staticmethod
    def _check_text(text: str) -> list[str]:
        if not isinstance(text, str) or not text.strip():
            raise ArgumentError("prompt must be a nonempty string")
        return text.split()


class RegionStatEmbedder(JointEmbedder):
    """Embeds one rectangle's channel means; blind to all other pixels.

    The region is (top, left, bottom, right), half-open, in pixel
    coordinates of the input resolution. Images must arrive at exactly that
    resolution: resizing would smear gradients across the region boundary
    and break the exclusivity guarantee this embedder exists to provide.
    """

    def __init__(
        self,
        embed_dim: int,
        input_resolution: int,
        region: tuple[int, int, int, int],
        vocabulary: Mapping[str, np.ndarray],
        seed: int = 0,
    ):
        if embed_dim < 3:
            raise ConfigurationError(f"embed_dim must be >= 3, got {embed_dim}")
        if input_resolution < 1:
            raise ConfigurationError("input_resolution must be >= 1")
        top, left, bottom, right = (int(v) for v in region)
        if not (0 <= top < bottom <= input_resolution and 0 <= left < right <= input_resolution):
            raise ConfigurationError(
                f"region {region} is not a valid rectangle inside {input_resolution}x{input_resolution}"
            )
        self.embed_dim = embed_dim
        self.input_resolution = input_resolution
        self.region = (top, left, bottom, right)
        self.seed = seed
        # QR of a seeded Gaussian: orthonormal columns, so color-space
        # distances survive the lift into embedding space.
        gauss = tensor_rng(seed, "region_stat.projection").standard_normal((embed_dim, 3))
        q, r = np.linalg.qr(gauss)
        self.projection = q * np.sign(np.diag(r))
        self.vocabulary = {
            token: _unit(np.asarray(vec, dtype=np.float64), f"vocabulary[{token!r}]")
            for token, vec in vocabulary.items()
        }

    def target_for_color(self, color) -> np.ndarray:
        """The embedding an image would get if its region means equalled color."""
        rgb = np.asarray(color, dtype=np.float64)
        if rgb.shape != (3,):
            raise ArgumentError(f"color must have 3 components, got shape {rgb.shape}")
        return _unit(self.projection @ rgb, "projected color")

    def embed_image_graph(self, image: Tensor) -> Tensor:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ArgumentError(f"image must be (3, H, W), got shape {image.shape}")
        res = self.input_resolution
        if image.shape[1:] != (res, res):
            raise ConfigurationError(
                f"region embedder needs {res}x{res} input, got {image.shape[1:]}"
            )
        top, left, bottom, right = self.region
        means = image[:, top:bottom, left:right].mean(axis=(1, 2))
        lifted = ad.matmul(Tensor.constant(self.projection), means.reshape(3, 1)).reshape(self.embed_dim)
        return _unit_graph(lifted)

    def embed_text(self, text: str) -> np.ndarray:
        tokens = self._check_text(text)
        vectors = []
        for token in tokens:
            if token not in self.vocabulary:
                raise VocabularyError(f"token {token!r} not in vocabulary {sorted(self.vocabulary)}")
            vectors.append(self.vocabulary[token])
        return _unit(np.mean(vectors, axis=0), f"embedding of {text!r}")


class ProjectionEmbedder(JointEmbedder):
    """Fixed random linear readout of the pooled image; hashed text side."""

    def __init__(self, embed_dim: int, input_resolution: int, seed: int = 0):
        if embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {embed_dim}")
        if input_resolution < POOL_SIZE or input_resolution % POOL_SIZE != 0:
            raise ConfigurationError(
                f"input_resolution must be a positive multiple of {POOL_SIZE}, got {input_resolution}"
            )
        self.embed_dim = embed_dim
        self.input_resolution = input_resolution
        self.seed = seed
        flat = 3 * POOL_SIZE * POOL_SIZE
        self.projection = tensor_rng(seed, "projection.readout").standard_normal((embed_dim, flat)) / np.sqrt(flat)

    def embed_image_graph(self, image: Tensor) -> Tensor:
        image = self._prepare(image)
        res = self.input_resolution
        box = res // POOL_SIZE
        pooled = image.reshape(3, POOL_SIZE, box, POOL_SIZE, box).mean(axis=(2, 4))
        flat = pooled.reshape(3 * POOL_SIZE * POOL_SIZE, 1)
        out = ad.matmul(Tensor.constant(self.projection), flat).reshape(self.embed_dim)
        return _unit_graph(out)

    def embed_text(self, text: str) -> np.ndarray:
        tokens = self._check_text(text)
        digest = hashlib.sha256(("\x1f".join(tokens)).encode("utf-8")).digest()
        key = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, key]))
        return _unit(rng.standard_normal(self.embed_dim), f"embedding of {text!r}")


def from_spec(spec: Mapping, generator_resolution: int) -> JointEmbedder:
    """Build an embedder from its run-config description.

    Vocabulary entries are either explicit vectors (list of embed_dim
    floats) or {"color": [r, g, b]} shorthands lifted through the region
    projection.
    """
    kind = spec.get("kind")
    embed_dim = int(spec.get("embed_dim", 8))
    seed = int(spec.get("seed", 0))
    resolution = int(spec.get("input_resolution", generator_resolution))
    if kind == "region_stat":
        region = tuple(spec.get("region", (0, 0, resolution // 2, resolution // 2)))
        embedder = RegionStatEmbedder(embed_dim, resolution, region, {}, seed=seed)
        vocab: dict[str, np.ndarray] = {}
        for token, value in dict(spec.get("vocabulary", {})).items():
            if isinstance(value, Mapping):
                if "color" not in value:
                    raise ConfigurationError(f"vocabulary[{token!r}] needs a 'color' or a vector")
                vocab[token] = embedder.target_for_color(np.asarray(value["color"], dtype=np.float64))
            else:
                vocab[token] = np.asarray(value, dtype=np.float64)
        return RegionStatEmbedder(embed_dim, resolution, region, vocab, seed=seed)
    if kind == "projection":
        return ProjectionEmbedder(embed_dim, resolution, seed=seed)
    raise ConfigurationError(f"unknown embedder kind {kind!r}")
