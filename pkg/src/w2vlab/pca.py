"""Block-wise (per weather feature) principal component analysis.

Each feature block is centred and its population covariance
``Xc.T @ Xc / n`` is eigendecomposed. The retained eigenvectors of all
blocks are assembled block-diagonally into ``P`` (``W x K``), so the
latent code of a weather vector ``w`` is ``P.T @ w - P.T @ mu``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np


class PcaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PcaBlock:
    name: str
    columns: np.ndarray
    eigenvalues: np.ndarray     # descending, all of them
    eigenvectors: np.ndarray    # [W_f, W_f], column i pairs with eigenvalues[i]

    @property
    def width(self) -> int:
        return len(self.columns)

    @property
    def explained_fraction(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        return self.eigenvalues / total


def choose_block_components(eigenvalues: np.ndarray, max_recon_error: float) -> int:
    """Smallest K with 1 - (cumulative explained fraction) <= max_recon_error."""
    if not (0.0 < max_recon_error <= 1.0):
        raise ValueError("max_recon_error must lie in (0, 1]")
    frac = np.cumsum(eigenvalues) / eigenvalues.sum()
    for k, f in enumerate(frac, start=1):
        if 1.0 - f <= max_recon_error + 1e-15:
            return k
    return len(eigenvalues)


@dataclass(frozen=True, eq=False)
class PcaModel:
    blocks: tuple
    counts: tuple
    mean: np.ndarray

    @property
    def W(self) -> int:
        return len(self.mean)

    @property
    def K(self) -> int:
        return int(sum(self.counts))

    @property
    def feature_names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def block(self, feature: str) -> PcaBlock:
        for b in self.blocks:
            if b.name == feature:
                return b
        raise KeyError(feature)

    @property
    def eigenvalues(self) -> dict[str, np.ndarray]:
        return {b.name: b.eigenvalues for b in self.blocks}

    @property
    def explained_fraction(self) -> dict[str, np.ndarray]:
        return {b.name: b.explained_fraction for b in self.blocks}

    @cached_property
    def projection(self) -> np.ndarray:
        P = np.zeros((self.W, self.K))
        col = 0
        for b, k in zip(self.blocks, self.counts):
            P[np.ix_(b.columns, np.arange(col, col + k))] = b.eigenvectors[:, :k]
            col += k
        return P

    def with_counts(self, counts: Mapping[str, int] | Sequence[int]) -> "PcaModel":
        if isinstance(counts, Mapping):
            counts = [counts[b.name] for b in self.blocks]
        counts = tuple(int(c) for c in counts)
        for b, c in zip(self.blocks, counts):
            if not (1 <= c <= b.width):
                raise PcaError(f"component count {c} invalid for feature {b.name!r} (width {b.width})")
        return PcaModel(self.blocks, counts, self.mean)

    def project(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-1] != self.W:
            raise PcaError(f"expected last axis {self.W}, got {w.shape[-1]}")
        P = self.projection
        return w @ P - P.T @ self.mean

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.K:
            raise PcaError(f"expected last axis {self.K}, got {z.shape[-1]}")
        return z @ self.projection.T + self.mean

    def discarded_variance(self) -> float:
        """Sum of discarded eigenvalues divided by W: the expected per-entry reconstruction MSE."""
        return float(sum(b.eigenvalues[k:].sum() for b, k in zip(self.blocks, self.counts)) / self.W)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"P": self.projection, "mu": self.mean.copy(), "counts": np.array(self.counts)}
        for b in self.blocks:
            out[f"eigenvalues/{b.name}"] = b.eigenvalues.copy()
            out[f"eigenvectors/{b.name}"] = b.eigenvectors.copy()
            out[f"columns/{b.name}"] = b.columns.copy()
        out["names"] = np.array([b.name for b in self.blocks])
        return out

    @classmethod
    def from_arrays(cls, arrs: Mapping[str, np.ndarray]) -> "PcaModel":
        names = [str(n) for n in arrs["names"]]
        blocks = tuple(PcaBlock(n, np.asarray(arrs[f"columns/{n}"]), np.asarray(arrs[f"eigenvalues/{n}"]),
                                np.asarray(arrs[f"eigenvectors/{n}"])) for n in names)
        return cls(blocks, tuple(int(c) for c in arrs["counts"]), np.asarray(arrs["mu"]))


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def fit_pca(train: np.ndarray, feature_blocks: Mapping[str, Sequence[int]],
            max_recon_error: float = 0.08,
            n_components: Mapping[str, int] | None = None) -> PcaModel:
    """Fit per-block PCA; counts come from ``n_components`` or the error threshold."""
    X = np.asarray(train, dtype=np.float64)
    if X.ndim != 2:
        raise PcaError("training matrix must be 2-D")
    mu = X.mean(axis=0)
    blocks, counts = [], []
    for name, cols in feature_blocks.items():
        cols = np.asarray(cols, dtype=np.int64)
        Xc = X[:, cols] - mu[cols]
        cov = Xc.T @ Xc / X.shape[0]
        if not np.trace(cov) > 0:
            raise PcaError(f"feature block {name!r} is constant; PCA is undefined")
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(vals)[::-1]
        vals = np.clip(vals[order], 0.0, None)
        vecs = _fix_signs(vecs[:, order])
        block = PcaBlock(name, cols, vals, vecs)
        blocks.append(block)
        if n_components is not None:
            counts.append(int(n_components[name]))
        else:
            counts.append(choose_block_components(vals, max_recon_error))
    return PcaModel(tuple(blocks), tuple(counts), mu).with_counts(counts)


def choose_components(model: PcaModel, feature: str, max_recon_error: float) -> int:
    return choose_block_components(model.block(feature).eigenvalues, max_recon_error)


def project(model: PcaModel, w: np.ndarray) -> np.ndarray:
    return model.project(w)


def reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    return model.reconstruct(z)
