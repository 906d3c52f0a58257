"""Forward math of keypoint attention: cosine heatmaps, aggregation, FiLM, latent pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import DimensionMismatch, ZeroNormRow

NORM_EPS = 1e-12


@dataclass(frozen=True)
class FeatureSet:
    f: np.ndarray
    pts: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        pts = np.asarray(self.pts, dtype=np.float64)
        if f.ndim != 2 or pts.shape != (len(f), 3) or len(f) < 1:
            raise DimensionMismatch("FeatureSet needs (K, D) features and (K, 3) points, K >= 1")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "pts", pts)


@dataclass(frozen=True)
class KeypointSet:
    x: np.ndarray
    feat: np.ndarray


def _unit_rows(a, name):
    a = np.asarray(a, dtype=np.float64)
    n = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(n <= NORM_EPS):
        raise ZeroNormRow(f"{name} contains a zero-norm row")
    return a / n


def cosine_attention(queries, keys, temperature: float = 1.0) -> np.ndarray:
    """Row-stochastic ``(M, K)`` heatmap: softmax over keys of cosine / temperature."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    q = _unit_rows(queries, "queries")
    k = _unit_rows(keys, "keys")
    if q.shape[1] != k.shape[1]:
        raise DimensionMismatch("queries and keys have different widths")
    return softmax(q @ k.T / temperature, axis=1)


def aggregate(h, fs: FeatureSet) -> KeypointSet:
    """Keypoints and keypoint features as heatmap-weighted convex combinations."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != len(fs.pts):
        raise DimensionMismatch(f"heatmap {h.shape} does not match {len(fs.pts)} keys")
    return KeypointSet(h @ fs.pts, h @ fs.f)


def film(features, gamma, beta) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if features.ndim != 2 or gamma.shape != (features.shape[1],) or beta.shape != gamma.shape:
        raise DimensionMismatch("gamma and beta must match the feature width")
    return features * gamma + beta


def pool_latent(per_frame_latents) -> np.ndarray:
    """Mean of per-frame latents, renormalized to unit length."""
    z = np.asarray(per_frame_latents, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if len(z) < 1 or not np.all(np.isfinite(z)):
        raise ValueError("need at least one finite latent")
    mean = z.mean(axis=0)
    n = np.linalg.norm(mean)
    if n < NORM_EPS:
        raise ZeroNormRow("pooled latent has zero norm")
    return mean / n
