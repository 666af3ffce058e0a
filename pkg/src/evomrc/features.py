"""Feature mappings over instance/label pairs.

The feature vector of a pair ``(x, y)`` is the instance embedding placed in
the ``y``-th block of a vector with ``n_labels`` blocks, every other block
being zero.  Two instance embeddings are provided: the identity map over raw
(or precomputed) features and random Fourier features.

Labels are 0-based integers ``0 .. n_labels - 1`` throughout the Python API.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError

__all__ = [
    "InstanceEmbedding",
    "FeatureMap",
    "identity_embedding",
    "rff_embedding",
    "rff_weights",
]


def rff_weights(seed: int, n_weights: int, input_dim: int) -> np.ndarray:
    """Standard-normal RFF directions for ``seed``.

    The stream is ``Generator(Philox(key=seed)).standard_normal((n_weights,
    input_dim))``.  Philox is counter based, so the draw does not depend on
    platform or numpy build.
    """
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    return gen.standard_normal((n_weights, input_dim))


@dataclass(frozen=True, eq=False)
class InstanceEmbedding:
    """Instance embedding ``x -> psi(x)``.

    Parameters
    ----------
    kind : {"identity", "rff"}
    input_dim : int
        Dimension of raw instances.
    output_dim : int
        Embedding dimension ``q``.  Equal to ``input_dim`` for identity; even
        for rff.
    weights : ndarray of shape (q/2, input_dim), optional
        Standard-normal directions (rff only).
    sigma2 : float
        Squared lengthscale of the Gaussian kernel (rff only).  Directions are
        divided by ``sqrt(sigma2)`` before use.
    seed : int
        Seed the weights were drawn from.
    """

    kind: str
    input_dim: int
    output_dim: int
    weights: np.ndarray | None = None
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "rff"):
            raise InputError(f"unknown embedding kind {self.kind!r}; expected 'identity' or 'rff'")
        if self.input_dim < 1 or self.output_dim < 1:
            raise InputError("embedding dimensions must be positive")
        if self.kind == "identity":
            if self.output_dim != self.input_dim or self.weights is not None:
                raise InputError("identity embedding has q = input_dim and no weights")
        else:
            if self.output_dim % 2:
                raise InputError("rff embedding needs an even output dimension")
            if self.weights is None or self.weights.shape != (self.output_dim // 2, self.input_dim):
                raise InputError("rff weights must have shape (q/2, input_dim)")
            if not self.sigma2 > 0:
                raise InputError("rff sigma2 must be positive")
            w = np.array(self.weights, dtype=float)
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __call__(self, x) -> np.ndarray:
        return self.embed(x)

    def embed(self, x) -> np.ndarray:
        """Embed one instance (shape ``(input_dim,)``) or a batch ``(n, input_dim)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise InputError(
                f"instance dimension mismatch: expected {self.input_dim}, got shape {x.shape}"
            )
        if self.kind == "identity":
            return x.copy()
        z = x @ self.weights.T / np.sqrt(self.sigma2)
        return np.sqrt(2.0 / self.output_dim) * np.concatenate([np.cos(z), np.sin(z)], axis=-1)

    def describe(self) -> dict:
        """JSON-friendly descriptor; rff weights are rebuilt from the seed."""
        d = {"kind": self.kind, "input_dim": self.input_dim, "output_dim": self.output_dim}
        if self.kind == "rff":
            d.update(sigma2=float(self.sigma2), seed=int(self.seed))
        return d

    @classmethod
    def from_description(cls, d: dict) -> "InstanceEmbedding":
        if d["kind"] == "identity":
            return identity_embedding(int(d["input_dim"]))
        return rff_embedding(int(d["input_dim"]), int(d["output_dim"]), float(d["sigma2"]), int(d["seed"]))


def identity_embedding(input_dim: int) -> InstanceEmbedding:
    return InstanceEmbedding("identity", input_dim, input_dim)


def rff_embedding(input_dim: int, q: int = 400, sigma2: float = 10.0, seed: int = 0) -> InstanceEmbedding:
    """Random Fourier features with ``q`` outputs (``q/2`` directions)."""
    if q < 2 or q % 2:
        raise InputError("rff output dimension must be a positive even integer")
    w = rff_weights(seed, q // 2, input_dim)
    return InstanceEmbedding("rff", input_dim, q, weights=w, sigma2=sigma2, seed=seed)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One-hot label blocks times an instance embedding.

    ``m = n_labels * q``.  ``bound`` is an upper bound ``M`` on the sup norm
    of every feature vector; rff maps know it in closed form, identity maps
    take it from data via :meth:`with_bound_from`.
    """

    embedding: InstanceEmbedding
    n_labels: int
    bound: float = field(default=float("nan"))

    def __post_init__(self):
        if self.n_labels < 2:
            raise InputError("a feature map needs at least two labels")
        if np.isnan(self.bound) and self.embedding.kind == "rff":
            object.__setattr__(self, "bound", float(np.sqrt(2.0 / self.embedding.output_dim)))

    @property
    def q(self) -> int:
        return self.embedding.output_dim

    @property
    def m(self) -> int:
        return self.n_labels * self.q

    def embed(self, x) -> np.ndarray:
        return self.embedding.embed(x)

    def with_bound_from(self, X) -> "FeatureMap":
        """Return a copy whose bound covers the embeddings of ``X`` (running max)."""
        psi = self.embed(X)
        new = float(np.max(np.abs(psi))) if psi.size else 0.0
        old = 0.0 if np.isnan(self.bound) else self.bound
        return replace(self, bound=max(old, new))

    def _check_labels(self, y):
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            if np.any(y != np.round(y)):
                raise InputError("labels must be integers")
            y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.n_labels):
            raise InputError(f"label out of range 0..{self.n_labels - 1}")
        return y

    def phi(self, x, y) -> np.ndarray:
        """Feature vector(s) of pair(s) ``(x, y)``.

        A single instance with a scalar label gives shape ``(m,)``; a batch
        ``(n, input_dim)`` with labels ``(n,)`` gives ``(n, m)``.
        """
        y = self._check_labels(y)
        psi = self.embed(x)
        if psi.ndim == 1:
            if y.ndim != 0:
                raise InputError("single instance needs a scalar label")
            out = np.zeros((self.n_labels, self.q))
            out[int(y)] = psi
            return out.ravel()
        if y.shape != (psi.shape[0],):
            raise InputError("labels must match the number of instances")
        out = np.zeros((psi.shape[0], self.n_labels, self.q))
        out[np.arange(psi.shape[0]), y] = psi
        return out.reshape(psi.shape[0], self.m)

    def scores(self, x, mu) -> np.ndarray:
        """``phi(x, y) @ mu`` for every label, shape ``(..., n_labels)``."""
        psi = self.embed(x)
        return psi @ np.asarray(mu, dtype=float).reshape(self.n_labels, self.q).T

    def describe(self) -> dict:
        return {"embedding": self.embedding.describe(), "n_labels": self.n_labels, "bound": self.bound}

    @classmethod
    def from_description(cls, d: dict) -> "FeatureMap":
        return cls(InstanceEmbedding.from_description(d["embedding"]), int(d["n_labels"]), float(d["bound"]))
