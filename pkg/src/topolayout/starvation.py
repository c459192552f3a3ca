"""Linearized two-pathway gradient flow: prior shortcut versus topology pathway."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .numerics.rng import seeded_rng


@dataclass
class LinearPathwayModel:
    regime: str
    lambda_prior: float
    lambda_topo: float
    g_prior: np.ndarray  # (m, p)
    g_topo: np.ndarray  # (m, q)
    target: np.ndarray  # (m,)
    ceiling: float  # best residual of the prior pathway alone

    def predict(self, theta_node, theta_edge) -> np.ndarray:
        return self.g_prior @ theta_node + self.g_topo @ theta_edge

    def flow_matrix(self) -> np.ndarray:
        """Residual dynamics de/dt = -K e."""
        return (self.lambda_prior * self.g_prior @ self.g_prior.T
                + self.lambda_topo * self.g_topo @ self.g_topo.T)

    def stability_bound(self) -> float:
        return 1.0 / (2.0 * np.linalg.eigvalsh(self.flow_matrix()).max())


def _conditioned(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    u, _ = np.linalg.qr(rng.standard_normal((m, m)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    k = min(m, n)
    s = np.zeros((m, n))
    s[np.arange(k), np.arange(k)] = rng.uniform(0.7, 1.3, size=k)
    return u @ s @ v.T


def build_model(regime: str, lambda_prior: float, lambda_topo: float = 0.1, seed: int = 0,
                dim: int = 4, ceiling: float = 1.0) -> LinearPathwayModel:
    """``multi``: the prior pathway spans the target space and can fit it alone.
    ``single``: the prior is one translation direction u and the target keeps a
    component of norm ``ceiling`` orthogonal to u."""
    if lambda_prior <= 0 or lambda_topo < 0:
        raise ValueError("gains must be positive")
    if not 1 <= dim <= 8:
        raise ValueError("dim must lie in [1, 8]")
    rng = seeded_rng(seed, 0x57A)
    g_topo = _conditioned(rng, dim, dim)
    if regime == "multi":
        g_prior = _conditioned(rng, dim, dim)
        target = rng.standard_normal(dim)
        target /= np.linalg.norm(target)
        c = 0.0
    elif regime == "single":
        if dim < 2:
            raise ValueError("single regime needs dim >= 2")
        basis, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
        u, v = basis[:, 0], basis[:, 1]
        g_prior = u[:, None].copy()
        target = rng.uniform(0.5, 1.5) * u + ceiling * v
        c = float(ceiling)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return LinearPathwayModel(regime, float(lambda_prior), float(lambda_topo), g_prior, g_topo, target, c)


def prior_only_residual(model: LinearPathwayModel) -> float:
    theta, *_ = np.linalg.lstsq(model.g_prior, model.target, rcond=None)
    return float(np.linalg.norm(model.g_prior @ theta - model.target))


@dataclass
class FlowTrajectory:
    times: np.ndarray
    residual: np.ndarray
    cum_edge: np.ndarray
    theta_node: np.ndarray
    theta_edge: np.ndarray

    @property
    def final_residual(self) -> float:
        return float(self.residual[-1])

    @property
    def cum_update(self) -> float:
        return float(self.cum_edge[-1])


@numba.njit(cache=True)
def _euler(gp, gt, s, tn, te, lp, lt, dt, n_steps, every):
    n_rec = n_steps // every + 1
    res = np.empty(n_rec)
    cum = np.empty(n_rec)
    tn_path = np.empty((n_rec, tn.size))
    te_path = np.empty((n_rec, te.size))
    total = 0.0
    e = gp @ tn + gt @ te - s
    res[0] = np.sqrt((e * e).sum())
    cum[0] = 0.0
    tn_path[0] = tn
    te_path[0] = te
    k = 1
    for step in range(1, n_steps + 1):
        dn = -dt * lp * (gp.T @ e)
        de = -dt * lt * (gt.T @ e)
        tn = tn + dn
        te = te + de
        total += np.sqrt((de * de).sum())
        e = gp @ tn + gt @ te - s
        if step % every == 0:
            res[k] = np.sqrt((e * e).sum())
            cum[k] = total
            tn_path[k] = tn
            te_path[k] = te
            k += 1
    return res, cum, tn_path, te_path


def default_horizon(model: LinearPathwayModel, decades: float = 12.0) -> float:
    """Long enough for the slowest nonzero mode to decay by exp(-decades)."""
    eig = np.linalg.eigvalsh(model.flow_matrix())
    slow = eig[eig > 1e-12].min()
    return decades / slow


def simulate_flow(model: LinearPathwayModel, dt: float | None = None, t_end: float | None = None,
                  n_records: int = 1000) -> FlowTrajectory:
    """Explicit Euler on the squared loss, each pathway preconditioned by its gain."""
    bound = model.stability_bound()
    if dt is None:
        dt = 0.5 * bound
    if dt <= 0 or dt >= bound:
        raise ValueError(f"dt={dt} violates the stability bound dt < {bound:.6g}")
    if t_end is None:
        t_end = default_horizon(model)
    n_steps = max(1, int(np.ceil(t_end / dt)))
    every = max(1, n_steps // n_records)
    n_steps = every * int(np.ceil(n_steps / every))
    tn = np.zeros(model.g_prior.shape[1])
    te = np.zeros(model.g_topo.shape[1])
    res, cum, tn_path, te_path = _euler(np.ascontiguousarray(model.g_prior), np.ascontiguousarray(model.g_topo),
                                        model.target, tn, te, model.lambda_prior, model.lambda_topo,
                                        float(dt), n_steps, every)
    times = dt * every * np.arange(len(res))
    return FlowTrajectory(times, res, cum, tn_path, te_path)


@dataclass
class ScalingResult:
    lambdas: np.ndarray
    cum_update: np.ndarray  # trial-averaged
    final_residual: np.ndarray
    slope: float


def starvation_scaling(lambdas, lambda_topo: float = 0.1, trials: int = 3, regime: str = "multi",
                       seed: int = 0, dim: int = 4) -> ScalingResult:
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if len(lambdas) < 3 or np.log10(lambdas.max() / lambdas.min()) < 2:
        raise ValueError("need at least 3 gains spanning two decades")
    cum = np.zeros(len(lambdas))
    res = np.zeros(len(lambdas))
    for i, lp in enumerate(lambdas):
        for trial in range(trials):
            traj = simulate_flow(build_model(regime, lp, lambda_topo, seed + trial, dim))
            cum[i] += traj.cum_update / trials
            res[i] += traj.final_residual / trials
    x, y = np.log(lambdas), np.log(cum)
    if np.var(x) == 0 or not np.all(np.isfinite(y)):
        raise ValueError("degenerate log-log fit")
    slope = float(np.polyfit(x, y, 1)[0])
    return ScalingResult(lambdas, cum, res, slope)
