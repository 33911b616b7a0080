"""Training losses and evaluation metrics.

The four training terms: cosine distance between the edited image's
embedding and the prompt's, the mask mean (compactness), anisotropic total
variation of the mask (smoothness), and the Euclidean norm of the latent
offset (identity preservation). Each has a differentiable graph form and a
plain-float convenience form; total_loss folds them into a LossReport
whose total is exactly the weighted sum.

Evaluation side: Fréchet distance between embedding Gaussians and the
cosine-similarity / Euclidean-distance identity metrics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionMask
from .autodiff import Tensor
from .embedders import JointEmbedder
from .errors import ArgumentError, ConfigurationError
from .generator import ImageTensor, LatentWPlus

log = logging.getLogger(__name__)

LAMBDA_ATT = 0.005
LAMBDA_TV = 0.00001
LAMBDA_L2 = 0.8

REPORT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class LossWeights:
    lambda_att: float = LAMBDA_ATT
    lambda_tv: float = LAMBDA_TV
    lambda_l2: float = LAMBDA_L2

    def __post_init__(self):
        for name in ("lambda_att", "lambda_tv", "lambda_l2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    clip: float
    att: float
    tv: float
    l2: float
    total: float

    def check(self, weights: LossWeights) -> None:
        want = self.clip + weights.lambda_att * self.att + weights.lambda_tv * self.tv + weights.lambda_l2 * self.l2
        if abs(self.total - want) > REPORT_TOLERANCE:
            raise ArgumentError(f"loss report total {self.total} deviates from weighted sum {want}")

    def as_dict(self) -> dict[str, float]:
        return {"clip": self.clip, "att": self.att, "tv": self.tv, "l2": self.l2, "total": self.total}


# -- differentiable loss terms --------------------------------------------


def clip_loss_graph(image: Tensor, prompt: str, embedder: JointEmbedder) -> Tensor:
    """1 - <embed(image), embed(prompt)>; both embeddings are unit vectors."""
    img_emb = embedder.embed_image_graph(image)
    target = Tensor.constant(embedder.embed_text(prompt))
    return 1.0 - (img_emb * target).sum()


def att_loss_graph(mask: Tensor) -> Tensor:
    """Mean mask value; small means a compact edit region."""
    return mask.mean()


def tv_loss_graph(mask: Tensor, squared: bool = False) -> Tensor:
    """Sum of absolute (optionally squared) neighbour differences."""
    if mask.shape[-1] < 2 or mask.shape[-2] < 2:
        raise ArgumentError(f"total variation needs at least 2x2, got {mask.shape}")
    dv = mask[:, 1:, :] - mask[:, :-1, :]
    dh = mask[:, :, 1:] - mask[:, :, :-1]
    if squared:
        return (dv * dv).sum() + (dh * dh).sum()
    return dv.abs().sum() + dh.abs().sum()


def latent_loss_graph(original: Tensor, edited: Tensor) -> Tensor:
    """Euclidean norm of the full flattened offset between the style matrices."""
    if original.shape != edited.shape:
        raise ArgumentError(f"latent shapes differ: {original.shape} vs {edited.shape}")
    return ad.l2norm(edited - original)


def total_loss_graph(
    clip_t: Tensor, att_t: Tensor, tv_t: Tensor, l2_t: Tensor, weights: LossWeights
) -> tuple[Tensor, LossReport]:
    """Weighted sum as a graph node, plus the matching float report."""
    total = clip_t + weights.lambda_att * att_t + weights.lambda_tv * tv_t + weights.lambda_l2 * l2_t
    report = LossReport(
        clip=float(clip_t.data),
        att=float(att_t.data),
        tv=float(tv_t.data),
        l2=float(l2_t.data),
        total=float(total.data),
    )
    return total, report


# -- float conveniences ----------------------------------------------------


def _mask_array(mask: AttentionMask | np.ndarray) -> np.ndarray:
    values = mask.values if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    if values.ndim != 3:
        raise ArgumentError(f"mask must be (H, W) or (1, H, W), got shape {values.shape}")
    return values


def clip_loss(edited: ImageTensor, prompt: str, embedder: JointEmbedder) -> float:
    pixels = edited.pixels if isinstance(edited, ImageTensor) else np.asarray(edited, dtype=np.float64)
    return float(clip_loss_graph(Tensor.constant(pixels), prompt, embedder).data)


def att_loss(mask: AttentionMask | np.ndarray) -> float:
    return float(_mask_array(mask).mean())


def tv_loss(mask: AttentionMask | np.ndarray, squared: bool = False) -> float:
    return float(tv_loss_graph(Tensor.constant(_mask_array(mask)), squared=squared).data)


def latent_loss(wplus: LatentWPlus, edited: LatentWPlus) -> float:
    return float(
        latent_loss_graph(Tensor.constant(wplus.rows), Tensor.constant(edited.rows)).data
    )


def total_loss(parts: tuple[float, float, float, float], weights: LossWeights) -> LossReport:
    """Fold (clip, att, tv, l2) floats into a consistent LossReport."""
    clip, att, tv, l2 = (float(v) for v in parts)
    for name, v in (("clip", clip), ("att", att), ("tv", tv), ("l2", l2)):
        if not math.isfinite(v):
            raise ArgumentError(f"loss part {name} is not finite: {v}")
    total = clip + weights.lambda_att * att + weights.lambda_tv * tv + weights.lambda_l2 * l2
    return LossReport(clip=clip, att=att, tv=tv, l2=l2, total=total)


# -- evaluation metrics ----------------------------------------------------


def _check_covariance(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ArgumentError(f"{what} must be square, got shape {cov.shape}")
    asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
    if asym > 1e-8:
        raise ArgumentError(f"{what} is not symmetric (max asymmetry {asym:.3e})")
    return (cov + cov.T) / 2.0


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    clipped = np.clip(eigvals, 0.0, None)
    if eigvals.min() < -1e-10:
        log.debug("clamped negative eigenvalue %.3e in matrix square root", eigvals.min())
    return (eigvecs * np.sqrt(clipped)) @ eigvecs.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """Fréchet distance between two Gaussians.

    The cross term Tr((S1 S2)^(1/2)) is computed as the trace square root of
    the symmetric product sqrt(S2) S1 sqrt(S2); negative eigenvalues from
    rounding are clamped to zero and the final value is clamped at >= 0.
    """
    mu1 = np.asarray(mu1, dtype=np.float64).reshape(-1)
    mu2 = np.asarray(mu2, dtype=np.float64).reshape(-1)
    cov1 = _check_covariance(cov1, "cov1")
    cov2 = _check_covariance(cov2, "cov2")
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape[0] != mu1.shape[0]:
        raise ArgumentError(
            f"dimension mismatch: mu {mu1.shape}/{mu2.shape}, cov {cov1.shape}/{cov2.shape}"
        )
    diff = mu1 - mu2
    s2 = _psd_sqrt(cov2)
    inner = s2 @ cov1 @ s2
    eigvals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if eigvals.min() < -1e-10:
        log.debug("clamped negative eigenvalue %.3e in Fréchet cross term", eigvals.min())
    tr_sqrt = float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)
    if value < 0.0:
        log.debug("clamped negative Fréchet distance %.3e to 0", value)
        value = 0.0
    return value


def gaussian_stats(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and (population) covariance of a row-stacked embedding sample."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ArgumentError(f"embeddings must be (N, D) with N >= 1, got shape {arr.shape}")
    mu = arr.mean(axis=0)
    centered = arr - mu
    cov = centered.T @ centered / arr.shape[0]
    return mu, cov


def identity_metrics(orig_embs, edit_embs) -> tuple[float, float]:
    """Mean cosine similarity and mean Euclidean distance over paired rows."""
    a = np.asarray(orig_embs, dtype=np.float64)
    b = np.asarray(edit_embs, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ArgumentError(f"paired embeddings must share shape (N, D), got {a.shape} vs {b.shape}")
    cs = float(np.sum(a * b, axis=1).mean())
    ed = float(np.linalg.norm(a - b, axis=1).mean())
    return cs, ed
