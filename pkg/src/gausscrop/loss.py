"""NT-Xent contrastive loss over cosine similarities, with its exact gradient.

Rows ``2k`` and ``2k + 1`` of the embedding matrix are the two views of
image ``k``. Every row acts as an anchor once; the reported loss is the
mean over all ``2N`` anchors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LossReport:
    loss: float
    tau: float
    per_anchor: np.ndarray


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


def _check(z: np.ndarray, tau: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2:
        raise ValueError(f"expected a (2N, D) embedding matrix with even row count, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("embeddings contain non-finite values")
    return z


def partner_index(m: int) -> np.ndarray:
    """Index of each row's positive partner: 0<->1, 2<->3, ..."""
    return np.arange(m) ^ 1


def _forward(z: np.ndarray, tau: float):
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise ValueError("embedding batch contains a zero-norm row")
    n = z / norms[:, None]
    m = len(z)
    logits = n @ n.T / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    denom = shifted.sum(axis=1)
    lse = row_max[:, 0] + np.log(denom)
    pos = partner_index(m)
    per_anchor = lse - logits[np.arange(m), pos]
    # the positive sits inside its own denominator, so each term is >= 0 up to rounding
    per_anchor = np.maximum(per_anchor, 0.0)
    probs = shifted / denom[:, None]
    return n, norms, per_anchor, probs


def nt_xent_loss(z, tau: float = 0.5) -> LossReport:
    z = _check(z, tau)
    _, _, per_anchor, _ = _forward(z, tau)
    return LossReport(loss=float(per_anchor.mean()), tau=tau, per_anchor=per_anchor)


def nt_xent_loss_and_grad(z, tau: float = 0.5) -> tuple[LossReport, np.ndarray]:
    """Loss report and gradient of the mean loss with respect to ``z``."""
    z = _check(z, tau)
    n, norms, per_anchor, probs = _forward(z, tau)
    m = len(z)
    # d(mean loss)/d(logit[i, k]) for k != i
    g = probs.copy()
    g[np.arange(m), partner_index(m)] -= 1.0
    g /= m
    # logit[i, k] = n_i . n_k / tau and the matrix is symmetric in (i, k)
    dn = (g + g.T) @ n / tau
    # back through n_i = z_i / |z_i|
    radial = np.sum(dn * n, axis=1, keepdims=True)
    dz = (dn - radial * n) / norms[:, None]
    report = LossReport(loss=float(per_anchor.mean()), tau=tau, per_anchor=per_anchor)
    return report, dz


def nt_xent_grad(z, tau: float = 0.5) -> np.ndarray:
    return nt_xent_loss_and_grad(z, tau)[1]
