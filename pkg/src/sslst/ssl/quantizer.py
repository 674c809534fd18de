"""k-means vector quantization of encoder latents (vq-wav2vec, k-means variant)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import Tensor, ops
from .cpc import CpcConfig, CpcModel, cpc_loss


@dataclass
class Codebook:
    centroids: np.ndarray  # (V, D)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError("a codebook needs at least one centroid")
        if not np.isfinite(self.centroids).all():
            raise ValueError("codebook centroids must be finite")

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class KMeansResult:
    codebook: Codebook
    distortions: list[float]  # mean squared distance after each Lloyd iteration
    assignments: np.ndarray


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, V: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [x[rng.integers(len(x))]]
    closest = _sq_distances(x, centroids[0][None])[:, 0]
    for _ in range(1, V):
        total = closest.sum()
        if total <= 0:
            break
        i = rng.choice(len(x), p=closest / total)
        centroids.append(x[i])
        closest = np.minimum(closest, _sq_distances(x, x[i][None])[:, 0])
    return np.array(centroids)


def kmeans_fit(vectors, V: int, iters: int = 25, rng: np.random.Generator | None = None) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; empty clusters move to the worst-served point."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (N, D) matrix of vectors")
    if V < 1:
        raise ValueError("V must be >= 1")
    distinct = len(np.unique(x, axis=0))
    if distinct < V:
        raise ValueError(f"need at least {V} distinct vectors, got {distinct}")
    rng = rng or np.random.default_rng(0)
    centroids = _kmeanspp(x, V, rng)
    distortions = []
    assign = np.zeros(len(x), dtype=np.int64)
    for _ in range(iters):
        dist = _sq_distances(x, centroids)
        assign = np.argmin(dist, axis=1)
        nearest = dist[np.arange(len(x)), assign]
        new = centroids.copy()
        counts = np.bincount(assign, minlength=V)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        taken = set()
        for v in np.flatnonzero(~filled):
            order = np.argsort(-nearest, kind="stable")
            far = next(i for i in order if i not in taken)
            taken.add(far)
            new[v] = x[far]
            nearest[far] = 0.0
        centroids = new
        final = _sq_distances(x, centroids)
        distortions.append(float(final.min(axis=1).mean()))
    if iters:
        assign = np.argmin(_sq_distances(x, centroids), axis=1)
    return KMeansResult(Codebook(centroids), distortions, assign)


def kmeans_train(vectors, V: int, iters: int = 25, rng: np.random.Generator | None = None) -> Codebook:
    return kmeans_fit(vectors, V, iters, rng).codebook


def assign_codes(z: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Nearest-centroid index per row; ties resolve to the lowest index."""
    z = np.asarray(z)
    if z.shape[-1] != codebook.dim:
        raise ValueError(f"latent dimension {z.shape[-1]} does not match codebook dimension {codebook.dim}")
    flat = z.reshape(-1, z.shape[-1]).astype(np.float64)
    c = codebook.centroids.astype(np.float64)
    # exact differences, so equal distances really compare equal
    dist = ((flat[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    return np.argmin(dist, axis=1).reshape(z.shape[:-1])


def quantize(z, codebook: Codebook) -> tuple[np.ndarray, Tensor]:
    """``(tokens, z_hat)``; ``z_hat`` carries gradients straight through to ``z``."""
    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z))
    tokens = assign_codes(z.data, codebook)
    z_hat = codebook.centroids[tokens].astype(z.dtype)
    return tokens, ops.straight_through(z, z_hat)


class VqModel(CpcModel):
    """A CPC model whose aggregator reads codebook vectors instead of raw latents.

    The codebook is stored as the tensor ``vq.codebook`` and is not trained by
    gradient descent.
    """

    kind = "vq"

    def __init__(self, config: CpcConfig | None = None, codebook_size: int = 64, seed: int = 0,
                 codebook: Codebook | None = None, zero: bool = False):
        super().__init__(config, seed=seed, zero=zero)
        self.codebook_size = codebook_size
        cb = codebook.centroids if codebook is not None else np.zeros((codebook_size, self.config.channels))
        if cb.shape != (codebook_size, self.config.channels):
            raise ValueError(f"codebook shape {cb.shape} does not match ({codebook_size}, {self.config.channels})")
        self.add_param("vq.codebook", cb).requires_grad = False

    @classmethod
    def from_cpc(cls, cpc: CpcModel, codebook: Codebook) -> "VqModel":
        m = cls(cpc.config, codebook.size, codebook=codebook)
        m.load_state_dict({k: v for k, v in cpc.state_dict().items()}, strict=False)
        return m

    @property
    def codebook(self) -> Codebook:
        return Codebook(self.params["vq.codebook"].data)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config), "codebook_size": self.codebook_size}

    def codes(self, wave) -> np.ndarray:
        return assign_codes(self.encode(wave).data, self.codebook)

    def aggregate_codes(self, codes) -> Tensor:
        """Aggregator contexts over the codebook vectors of ``codes`` (``(B, T)`` or ``(T,)``)."""
        codes = np.atleast_2d(codes)
        return self.aggregate(Tensor(self.params["vq.codebook"].data[codes]))

    def loss(self, wave, rng: np.random.Generator) -> Tensor:
        z = self.encode(wave)
        _, z_hat = quantize(z, self.codebook)
        return cpc_loss(z_hat, self.aggregate(z_hat), self.heads(), self.config.prediction_steps,
                        self.config.negatives, rng)
