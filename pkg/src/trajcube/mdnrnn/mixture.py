"""Gaussian mixtures with block-diagonal Cholesky-factored covariances.

The state is ``[lon, lat, alt, lon_spd, lat_spd]``; each component's
covariance is ``blockdiag(L1 L1^T, L2 L2^T)`` with a 3x3 position block and a
2x2 speed block.  A decoder head row of width ``K * 15`` is laid out as
``[logits (K) | means (K*5) | L1 entries (K*6) | L2 entries (K*3)]`` with the
lower triangles stored row by row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import elu, elu_backward

STATE_DIM = 5
LOG_2PI = math.log(2.0 * math.pi)
PARAMS_PER_COMPONENT = 1 + STATE_DIM + 6 + 3

_TRIL3 = np.tril_indices(3)
_TRIL2 = np.tril_indices(2)
_DIAG3 = np.array([0, 2, 5])  # positions of diagonal entries in the packed rows
_DIAG2 = np.array([0, 2])


def head_width(k: int) -> int:
    return k * PARAMS_PER_COMPONENT


@dataclass(frozen=True)
class MixtureParams:
    """Mixture parameters; arrays may carry leading batch dimensions.

    phi (..., K), mu (..., K, 5), L1 (..., K, 3, 3), L2 (..., K, 2, 2)
    """

    phi: np.ndarray
    mu: np.ndarray
    L1: np.ndarray
    L2: np.ndarray

    @property
    def k(self) -> int:
        return self.phi.shape[-1]

    def __getitem__(self, idx) -> "MixtureParams":
        return MixtureParams(self.phi[idx], self.mu[idx], self.L1[idx], self.L2[idx])

    def cov(self) -> np.ndarray:
        s1 = self.L1 @ np.swapaxes(self.L1, -1, -2)
        s2 = self.L2 @ np.swapaxes(self.L2, -1, -2)
        out = np.zeros(self.mu.shape + (STATE_DIM,))
        out[..., :3, :3] = s1
        out[..., 3:, 3:] = s2
        return out

    def log_mode_density(self) -> np.ndarray:
        """log N(mu | mu, Sigma) for every component."""
        logdet_half = (np.log(np.diagonal(self.L1, axis1=-2, axis2=-1)).sum(-1)
                       + np.log(np.diagonal(self.L2, axis1=-2, axis2=-1)).sum(-1))
        return -0.5 * STATE_DIM * LOG_2PI - logdet_half

    def validate(self) -> None:
        arrays = (self.phi, self.mu, self.L1, self.L2)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("mixture parameters must be finite")
        if np.any(self.phi < 0) or not np.allclose(self.phi.sum(-1), 1.0, atol=1e-9):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if (np.any(np.diagonal(self.L1, axis1=-2, axis2=-1) <= 0)
                or np.any(np.diagonal(self.L2, axis1=-2, axis2=-1) <= 0)):
            raise ValueError("Cholesky diagonals must be positive")


def split_head(raw, k: int, mu_activation: str = "identity"):
    """Map raw head outputs (..., 15K) to :class:`MixtureParams`."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != head_width(k):
        raise ValueError(f"head output width {raw.shape[-1]} != {head_width(k)}")
    lead = raw.shape[:-1]
    logits = raw[..., :k]
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    phi = e / e.sum(axis=-1, keepdims=True)
    o = k
    mu_raw = raw[..., o:o + k * STATE_DIM].reshape(lead + (k, STATE_DIM))
    mu = mu_raw if mu_activation == "identity" else elu(mu_raw)
    o += k * STATE_DIM
    l1_raw = raw[..., o:o + 6 * k].reshape(lead + (k, 6))
    o += 6 * k
    l2_raw = raw[..., o:o + 3 * k].reshape(lead + (k, 3))
    l1_vals = l1_raw.copy()
    l1_vals[..., _DIAG3] = np.exp(l1_raw[..., _DIAG3])
    l2_vals = l2_raw.copy()
    l2_vals[..., _DIAG2] = np.exp(l2_raw[..., _DIAG2])
    L1 = np.zeros(lead + (k, 3, 3))
    L1[..., _TRIL3[0], _TRIL3[1]] = l1_vals
    L2 = np.zeros(lead + (k, 2, 2))
    L2[..., _TRIL2[0], _TRIL2[1]] = l2_vals
    return MixtureParams(phi, mu, L1, L2)


def _forward_sub(L, r):
    """Solve L s = r for lower-triangular L, batched over leading dims."""
    d = r.shape[-1]
    s = np.empty_like(r)
    for i in range(d):
        acc = r[..., i].copy()
        for j in range(i):
            acc -= L[..., i, j] * s[..., j]
        s[..., i] = acc / L[..., i, i]
    return s


def _back_sub_t(L, s):
    """Solve L^T u = s for lower-triangular L."""
    d = s.shape[-1]
    u = np.empty_like(s)
    for i in range(d - 1, -1, -1):
        acc = s[..., i].copy()
        for j in range(i + 1, d):
            acc -= L[..., j, i] * u[..., j]
        u[..., i] = acc / L[..., i, i]
    return u


def component_logpdf(x, mix: MixtureParams, with_grad: bool = False):
    """log N(x | mu_i, Sigma_i) per component via the Cholesky factors.

    ``x`` has shape (..., 5) matching the mixture's leading dims.  With
    ``with_grad`` also returns d/d mu (..., K, 5) and d/d L1, d/d L2.
    """
    r = np.asarray(x, dtype=np.float64)[..., None, :] - mix.mu
    r1, r2 = r[..., :3], r[..., 3:]
    s1 = _forward_sub(mix.L1, r1)
    s2 = _forward_sub(mix.L2, r2)
    d1 = np.diagonal(mix.L1, axis1=-2, axis2=-1)
    d2 = np.diagonal(mix.L2, axis1=-2, axis2=-1)
    logp = (-0.5 * STATE_DIM * LOG_2PI - np.log(d1).sum(-1) - np.log(d2).sum(-1)
            - 0.5 * ((s1 * s1).sum(-1) + (s2 * s2).sum(-1)))
    if not with_grad:
        return logp
    u1 = _back_sub_t(mix.L1, s1)
    u2 = _back_sub_t(mix.L2, s2)
    dmu = np.concatenate([u1, u2], axis=-1)
    dL1 = np.tril(u1[..., :, None] * s1[..., None, :])
    dL2 = np.tril(u2[..., :, None] * s2[..., None, :])
    dL1[..., [0, 1, 2], [0, 1, 2]] -= 1.0 / d1
    dL2[..., [0, 1], [0, 1]] -= 1.0 / d2
    return logp, dmu, dL1, dL2


def _logsumexp(a, axis=-1):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def mixture_nll(targets, mixtures: MixtureParams) -> float:
    """Summed negative log likelihood of ``targets`` (T, 5) under per-step mixtures."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] == 0:
        return 0.0
    if mixtures.phi.shape[0] != targets.shape[0]:
        raise ValueError("targets and mixtures differ in length")
    cov_ok = (np.all(np.isfinite(mixtures.L1)) and np.all(np.isfinite(mixtures.L2))
              and np.all(np.diagonal(mixtures.L1, axis1=-2, axis2=-1) > 0)
              and np.all(np.diagonal(mixtures.L2, axis1=-2, axis2=-1) > 0))
    if not cov_ok:
        raise ValueError("degenerate covariance")
    with np.errstate(divide="ignore"):
        logphi = np.log(mixtures.phi)
    lp = component_logpdf(targets, mixtures)
    return float(-_logsumexp(logphi + lp).sum())


def mixture_nll_dense(targets, mixtures: MixtureParams) -> float:
    """Same quantity as :func:`mixture_nll` from dense covariance inverses."""
    total = 0.0
    cov = mixtures.cov()
    for t in range(targets.shape[0]):
        dens = 0.0
        for i in range(mixtures.phi.shape[-1]):
            S = cov[t, i]
            r = targets[t] - mixtures.mu[t, i]
            quad = r @ np.linalg.solve(S, r)
            sign, logdet = np.linalg.slogdet(S)
            dens += mixtures.phi[t, i] * math.exp(-0.5 * (STATE_DIM * LOG_2PI + logdet + quad))
        total -= math.log(dens)
    return total


def head_nll_and_grad(raw, targets, k: int, mu_activation: str = "identity"):
    """Summed NLL of targets (N, 5) and its gradient w.r.t. raw head rows (N, 15K)."""
    mix = split_head(raw, k, mu_activation)
    logp, dmu, dL1, dL2 = component_logpdf(targets, mix, with_grad=True)
    logphi = np.log(mix.phi)
    a = logphi + logp
    lse = _logsumexp(a)
    loss = float(-lse.sum())
    gamma = np.exp(a - lse[..., None])
    n = raw.shape[0]
    draw = np.empty_like(raw)
    draw[:, :k] = mix.phi - gamma
    g = -gamma[..., None]
    dmu_total = g * dmu
    if mu_activation != "identity":
        dmu_total = elu_backward(dmu_total, mix.mu)
    o = k
    draw[:, o:o + k * STATE_DIM] = dmu_total.reshape(n, -1)
    o += k * STATE_DIM
    dl1 = (g[..., None] * dL1)[..., _TRIL3[0], _TRIL3[1]]
    dl1[..., _DIAG3] *= mix.L1[..., [0, 1, 2], [0, 1, 2]]
    draw[:, o:o + 6 * k] = dl1.reshape(n, -1)
    o += 6 * k
    dl2 = (g[..., None] * dL2)[..., _TRIL2[0], _TRIL2[1]]
    dl2[..., _DIAG2] *= mix.L2[..., [0, 1], [0, 1]]
    draw[:, o:o + 3 * k] = dl2.reshape(n, -1)
    return loss, draw


def sample_state(mix: MixtureParams, rng) -> np.ndarray:
    """Draw one state from a single (unbatched) mixture."""
    i = int(rng.choice(mix.phi.shape[-1], p=mix.phi / mix.phi.sum()))
    eps = rng.standard_normal(STATE_DIM)
    x = mix.mu[i].copy()
    x[:3] += mix.L1[i] @ eps[:3]
    x[3:] += mix.L2[i] @ eps[3:]
    return x
