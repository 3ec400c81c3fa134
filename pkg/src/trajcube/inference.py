"""Trajectory generation: gated adaptive Kalman filtering, beam search and RTS smoothing.

Filtering runs in physical units (degrees, feet, degrees/second) with a
constant-horizontal-velocity dynamic.  Mixture likelihood terms are scored in
the network's normalized space.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from .mdnrnn.mixture import LOG_2PI, STATE_DIM, MixtureParams, component_logpdf
from .mdnrnn.network import Bundle, ModelConfig, Params, decoder_step, encode_plans, initial_decoder_bundle

PRUNED_LOGLIK = -1e12


def constant_velocity_dynamics(dt: float) -> np.ndarray:
    A = np.eye(STATE_DIM)
    A[0, 3] = dt
    A[1, 4] = dt
    return A


@dataclass(frozen=True)
class KalmanConfig:
    dt: float = 120.0
    q_diag: tuple = (1e-3, 1e-3, 1.0, 1e-6, 1e-6)
    e1: float = 0.8
    e2: float = 0.3
    qs: float = 10.0
    outlier_penalty: float = -9.0
    pi1: float = 0.8
    pi2: float = 0.2
    beam_size: Optional[int] = None
    density: str = "mode"
    diagonal_innovation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "q_diag", tuple(float(v) for v in self.q_diag))
        if len(self.q_diag) != STATE_DIM:
            raise ValueError("q_diag needs 5 entries")
        # both gates at infinity switch gating off entirely
        disabled = math.isinf(self.e1) and math.isinf(self.e2)
        if not (self.e1 > self.e2 > 0 or disabled):
            raise ValueError("gates must satisfy e1 > e2 > 0")
        if self.qs < 1:
            raise ValueError("maneuver scaling must be >= 1")
        if not math.isclose(self.pi1 + self.pi2, 1.0, abs_tol=1e-12):
            raise ValueError("pi1 + pi2 must equal 1")
        if self.density not in ("mode", "filtered"):
            raise ValueError("density must be 'mode' or 'filtered'")
        if self.beam_size is not None and self.beam_size < 1:
            raise ValueError("beam size must be positive")

    @property
    def A(self) -> np.ndarray:
        return constant_velocity_dynamics(self.dt)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    @property
    def H(self) -> np.ndarray:
        return np.eye(STATE_DIM)

    def beam_width(self, k: int) -> int:
        return k * k if self.beam_size is None else self.beam_size


class FilterStep(NamedTuple):
    x: np.ndarray
    P: np.ndarray
    outlier: int
    x_pred: np.ndarray
    P_pred: np.ndarray


def _akf_batch(x_prev, P_prev, z, R, cfg: KalmanConfig):
    """Vectorized gated filter over leading batch dims."""
    A, Q, H = cfg.A, cfg.Q, cfg.H
    x_pred = x_prev @ A.T
    base = A @ P_prev @ A.T
    resid = (z - x_pred) @ H.T
    gate = np.abs(resid[..., 0]) + np.abs(resid[..., 1])
    outlier = gate > cfg.e1
    maneuver = (gate > cfg.e2) & ~outlier
    P_pred = base + Q
    P_man = base + cfg.qs * Q
    P_use = np.where(maneuver[..., None, None], P_man, P_pred)
    S = H @ P_use @ H.T + R
    PHt = P_use @ H.T
    if cfg.diagonal_innovation:
        K = PHt / np.diagonal(S, axis1=-2, axis2=-1)[..., None, :]
    else:
        K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, -1, -2)), -1, -2)
    x_upd = x_pred + (K @ resid[..., None])[..., 0]
    IKH = np.eye(STATE_DIM) - K @ H
    # Joseph form keeps the covariance symmetric PSD for any gain
    P_upd = IKH @ P_use @ np.swapaxes(IKH, -1, -2) + K @ R @ np.swapaxes(K, -1, -2)
    P_upd = 0.5 * (P_upd + np.swapaxes(P_upd, -1, -2))
    x_out = np.where(outlier[..., None], x_pred, x_upd)
    P_out = np.where(outlier[..., None, None], P_pred, P_upd)
    return x_out, P_out, outlier.astype(np.int64), x_pred, P_use


def akf_step(x_prev, P_prev, z, R, cfg: KalmanConfig = KalmanConfig()) -> FilterStep:
    """One gated Kalman step against a measurement mean ``z`` with covariance ``R``.

    The gate is the sum of absolute lon and lat residuals.  Above ``e1`` the
    measurement is an outlier and the prediction is returned unchanged; above
    ``e2`` the process noise is inflated by ``qs`` before updating.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in (x_prev, P_prev, z, R)]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("filter inputs must be finite")
    x, P, m, xp, Pp = _akf_batch(*arrays, cfg)
    return FilterStep(x, P, int(m) if np.ndim(m) == 0 else m, xp, Pp)


def cumulative_loglik(L_parent, phi, mixture_component=None, outlier=0, cfg: KalmanConfig = KalmanConfig(),
                      log_density=None):
    """Parent score plus weighted component weight, density and outlier terms.

    ``mixture_component`` is a single-component :class:`MixtureParams`
    (phi scalar, mu (5,), L1 (3, 3), L2 (2, 2)); its density is taken at its
    own mean unless ``log_density`` is given.
    """
    if log_density is None:
        log_density = mixture_component.log_mode_density()
    with np.errstate(divide="ignore"):
        log_phi = np.where(np.asarray(phi) > 0, np.log(np.maximum(phi, 1e-300)), PRUNED_LOGLIK)
    penalty = np.where(np.asarray(outlier) == 1, cfg.outlier_penalty, 0.0)
    out = L_parent + cfg.pi1 * log_phi + cfg.pi2 * log_density + penalty
    return float(out) if np.ndim(out) == 0 else out


def rts_smooth(history, A):
    """Backward pass over ``(x_pred, P_pred, x_filt, P_filt)`` tuples.

    Returns smoothed states (T, n) and covariances (T, n, n).
    """
    T = len(history)
    xs = np.array([h[2] for h in history], dtype=np.float64)
    Ps = np.array([h[3] for h in history], dtype=np.float64)
    for t in range(T - 2, -1, -1):
        x_pred_next = np.asarray(history[t + 1][0], dtype=np.float64)
        P_pred_next = np.asarray(history[t + 1][1], dtype=np.float64)
        try:
            np.linalg.cholesky(P_pred_next)
            inv_target = P_pred_next
        except np.linalg.LinAlgError:
            warnings.warn("singular predicted covariance in smoother; regularizing", RuntimeWarning)
            inv_target = P_pred_next + 1e-9 * np.eye(P_pred_next.shape[0])
        G = np.linalg.solve(inv_target, A @ Ps[t].T).T
        xs[t] = xs[t] + G @ (xs[t + 1] - x_pred_next)
        Ps[t] = Ps[t] + G @ (Ps[t + 1] - P_pred_next) @ G.T
        Ps[t] = 0.5 * (Ps[t] + Ps[t].T)
    return xs, Ps


# -- predictors -------------------------------------------------------------------

class NetworkPredictor:
    """Adapter exposing a trained network to the trajectory generator."""

    def __init__(self, params: Params, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg

    @property
    def n_components(self) -> int:
        return self.cfg.n_components

    def start(self, plan, states, cubes):
        """Encode the plan and run the decoder over observed steps; mixture after the last."""
        enc = encode_plans([plan], self.params, self.cfg)
        bundle = initial_decoder_bundle(enc, self.cfg)
        mix = None
        for t in range(states.shape[0]):
            bundle, mix = decoder_step(bundle, states[t][None], cubes[t][None], self.params, self.cfg)
        return bundle, mix

    def step(self, bundle, states, cubes):
        return decoder_step(bundle, states, cubes, self.params, self.cfg)

    @staticmethod
    def select(bundle, idx):
        return [(h[idx], c[idx]) for h, c in bundle]


@dataclass
class Prediction:
    times: np.ndarray
    states: np.ndarray  # smoothed, physical units
    covs: np.ndarray
    filtered: np.ndarray
    loglik: np.ndarray  # cumulative score along the best path
    outliers: np.ndarray
    beam: List[np.ndarray] = field(default_factory=list)
    beam_loglik: List[float] = field(default_factory=list)
    diagnostics: List[dict] = field(default_factory=list)

    def sigma3_horizontal_nm(self) -> np.ndarray:
        blocks = self.covs[:, :2, :2]
        lam = np.linalg.eigvalsh(blocks)[:, -1]
        return 3.0 * np.sqrt(np.maximum(lam, 0.0)) * 60.0

    def sigma3_vertical_ft(self) -> np.ndarray:
        return 3.0 * np.sqrt(np.maximum(self.covs[:, 2, 2], 0.0))


def course_from_speeds(states, fallback):
    lon_spd = states[:, 3]
    lat_spd = states[:, 4]
    course = np.arctan2(lat_spd, lon_spd)
    still = (lon_spd == 0) & (lat_spd == 0)
    return np.where(still, fallback, course)


def generate_trajectory(predictor, normalizer, plan, observed_states, observed_cubes, horizon: int,
                        cube_fn: Callable, cfg: KalmanConfig = KalmanConfig(), t_last: float = 0.0,
                        course_last: Optional[float] = None) -> Prediction:
    """Beam-searched, filtered and smoothed continuation of an observed track.

    Parameters
    ----------
    predictor
        Object with ``start``, ``step``, ``select`` and ``n_components``
        (see :class:`NetworkPredictor`).
    normalizer
        Maps between physical states and the predictor's space.
    plan
        Normalized flight plan (n, 2).
    observed_states
        Physical states (T', 5) of the first T' track points.
    observed_cubes
        Normalized cubes (T', nx, ny, 4) matched to those points.
    horizon
        Total track length T; ``T - T'`` states are generated.
    cube_fn
        ``cube_fn(states, t, course) -> normalized cubes`` for a batch of
        physical states at time ``t`` (recursive-mode matching).
    """
    observed_states = np.asarray(observed_states, dtype=np.float64)
    t_obs = observed_states.shape[0]
    if t_obs < 1:
        raise ValueError("need at least one observed state")
    if t_obs >= horizon:
        raise ValueError(f"warm-up length {t_obs} must be shorter than the horizon {horizon}")
    K = predictor.n_components
    width = cfg.beam_width(K)
    A = cfg.A

    z_obs = normalizer.normalize_states(observed_states)
    bundle, mix = predictor.start(plan, z_obs, observed_cubes)
    if mix.phi.shape[-1] != K:
        raise ValueError(f"model emits {mix.phi.shape[-1]} components but is configured for {K}")

    x = observed_states[-1][None].copy()
    P = cfg.Q[None].copy()
    L = np.zeros(1)
    course = np.array([course_last if course_last is not None else math.atan2(x[0, 4], x[0, 3])])
    steps = []  # per generated step: arrays indexed by surviving hypothesis
    diagnostics = []
    std = normalizer.state_std

    n_gen = horizon - t_obs
    for s in range(1, n_gen + 1):
        B = x.shape[0]
        mu_phys = normalizer.denormalize_states(mix.mu)  # (B, K, 5)
        R = normalizer.denormalize_cov(mix.cov())  # (B, K, 5, 5)
        xb = np.repeat(x[:, None], K, axis=1)
        Pb = np.repeat(P[:, None], K, axis=1)
        xf, Pf, M, xp, Pp = _akf_batch(xb, Pb, mu_phys, R, cfg)
        if cfg.density == "mode":
            log_dens = mix.log_mode_density()
        else:
            z_f = normalizer.normalize_states(xf)
            log_dens = np.stack([component_logpdf(z_f[:, i], mix)[:, i] for i in range(K)], axis=1)
        Lc = cumulative_loglik(L[:, None], mix.phi, None, M, cfg, log_density=log_dens)
        parent = np.repeat(np.arange(B), K)
        comp = np.tile(np.arange(K), B)
        flat_L = Lc.reshape(-1)
        order = np.lexsort((parent, comp, -flat_L))
        keep = order[:width]
        pruned = order[width:]
        diagnostics.append({
            "step": s,
            "expanded": int(flat_L.size),
            "kept": int(keep.size),
            "min_kept": float(flat_L[keep].min()),
            "max_pruned": float(flat_L[pruned].max()) if pruned.size else None,
        })
        kp, kc = parent[keep], comp[keep]
        x = xf[kp, kc]
        P = Pf[kp, kc]
        L = flat_L[keep]
        course = course_from_speeds(x, course[kp])
        steps.append({
            "parent": kp, "comp": kc, "x": x, "P": P, "x_pred": xp[kp, kc], "P_pred": Pp[kp, kc],
            "L": L, "M": M[kp, kc],
        })
        if s == n_gen:
            break
        t_now = t_last + s * cfg.dt
        cubes = cube_fn(x, t_now, course)
        bundle = predictor.select(bundle, kp)
        bundle, mix = predictor.step(bundle, normalizer.normalize_states(x), cubes)

    def path(final_idx):
        idxs = []
        j = final_idx
        for st in reversed(steps):
            idxs.append(j)
            j = int(st["parent"][j])
        return list(reversed(idxs))

    final_L = steps[-1]["L"]
    best = int(np.argmax(final_L))  # survivors are already ranked, first max wins
    best_path = path(best)
    hist = [(observed_states[-1], cfg.Q, observed_states[-1], cfg.Q)]
    for st, j in zip(steps, best_path):
        hist.append((st["x_pred"][j], st["P_pred"][j], st["x"][j], st["P"][j]))
    xs, Ps = rts_smooth(hist, A)
    filtered = np.array([st["x"][j] for st, j in zip(steps, best_path)])
    beam, beam_L = [], []
    for j in range(final_L.size):
        if j == best:
            continue
        beam.append(np.array([st["x"][i] for st, i in zip(steps, path(j))]))
        beam_L.append(float(final_L[j]))
    return Prediction(
        times=t_last + cfg.dt * np.arange(1, n_gen + 1),
        states=xs[1:],
        covs=Ps[1:],
        filtered=filtered,
        loglik=np.array([st["L"][j] for st, j in zip(steps, best_path)]),
        outliers=np.array([st["M"][j] for st, j in zip(steps, best_path)]),
        beam=beam,
        beam_loglik=beam_L,
        diagnostics=diagnostics,
    )


# -- baseline -----------------------------------------------------------------------

def plan_follow_baseline(plan_waypoints, observed_track, times) -> np.ndarray:
    """Fly the filed plan at the ground speed averaged over ``observed_track``.

    Starts from the projection of the last observed point onto the plan and
    advances along it; altitude is held at the last observed value.  Returns
    (len(times), 3) rows of ``[lon, lat, alt]``.
    """
    wp = np.asarray(plan_waypoints, dtype=float)
    obs = np.asarray(observed_track, dtype=float)
    seg = np.diff(wp, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    p = obs[-1, :2]
    best_s, best_d = 0.0, np.inf
    for i in range(len(seg)):
        if seg_len[i] == 0:
            continue
        u = np.clip(np.dot(p - wp[i], seg[i]) / seg_len[i] ** 2, 0.0, 1.0)
        q = wp[i] + u * seg[i]
        d = np.hypot(*(p - q))
        if d < best_d:
            best_d, best_s = d, cum[i] + u * seg_len[i]
    elapsed = obs[-1, 3] - obs[0, 3]
    dist = np.hypot(np.diff(obs[:, 0]), np.diff(obs[:, 1])).sum()
    speed = dist / elapsed if elapsed > 0 else 0.0
    s = np.clip(best_s + speed * (np.asarray(times, dtype=float) - obs[-1, 3]), 0.0, cum[-1])
    lon = np.interp(s, cum, wp[:, 0])
    lat = np.interp(s, cum, wp[:, 1])
    return np.column_stack([lon, lat, np.full(lon.shape, obs[-1, 2])])
