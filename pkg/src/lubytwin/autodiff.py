"""Differentiable mirror of the digital twin for gradient-based tuning.

Re-implements the fixed-point prediction and the congestion loss with torch
tensors so reverse-mode autodiff supplies d(loss)/d(log z) in one backward
pass instead of 2|E| finite-difference probes.  The mirror must track the
numpy implementation: tests pin forward agreement and gradient agreement
against central differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .ndt import NdtConfig
from .netgen import Instance

_LOG_FLOOR = 1e-300


@dataclass
class _Problem:
    owners: torch.Tensor     # directed conflict pair -> owning link
    indices: torch.Tensor    # directed conflict pair -> neighbor link
    lam: torch.Tensor
    rates: torch.Tensor
    loaded: torch.Tensor
    num_links: int
    cfg: NdtConfig


def build_problem(inst: Instance, cfg: NdtConfig) -> _Problem:
    indptr, indices = inst.conflicts.csr
    owners = np.repeat(np.arange(inst.num_links), np.diff(indptr))
    lam = torch.from_numpy(inst.routing.link_totals.astype(np.float64))
    return _Problem(
        owners=torch.from_numpy(owners.astype(np.int64)),
        indices=torch.from_numpy(indices.astype(np.int64)),
        lam=lam,
        rates=torch.from_numpy(np.asarray(inst.long_term_rates, dtype=np.float64)),
        loaded=lam > 0,
        num_links=inst.num_links,
        cfg=cfg,
    )


def _segment_log_product(values: torch.Tensor, owners: torch.Tensor, shape) -> torch.Tensor:
    """exp(segment-sum of logs) with exact zeros wherever any factor is <= 0."""
    logs = torch.zeros(shape, dtype=values.dtype)
    logs.index_add_(0, owners, values.clamp_min(_LOG_FLOOR).log())
    zeros = torch.zeros(shape, dtype=values.dtype)
    zeros.index_add_(0, owners, (values <= 0).to(values.dtype))
    return logs.exp() * (zeros == 0)


def _round_win_probs(prob: _Problem, cdf_drop: torch.Tensor, b_cond: torch.Tensor) -> torch.Tensor:
    cdfs = 1.0 - b_cond[:, None] * cdf_drop
    summands = _segment_log_product(cdfs, prob.owners, (prob.num_links, prob.cfg.grid_points))
    return summands.mean(dim=1)


def predict_torch(prob: _Problem, u: torch.Tensor) -> torch.Tensor:
    """Duty-cycle prediction as a function of log-priorities ``u``."""
    cfg = prob.cfg
    z = u.exp()
    nbr_sum = torch.zeros(prob.num_links, dtype=torch.float64)
    nbr_sum.index_add_(0, prob.owners, z[prob.indices])
    x = z / (z + nbr_sum)
    ratio = z[prob.owners] / z[prob.indices]
    # 1 - F = b_cond * (1 - min(ratio * l/L, 1)); the grid factor is fixed
    # across iterations and rounds, so build it once per forward pass.
    grid_points = cfg.grid_points
    fractions = torch.arange(grid_points, dtype=torch.float64) / grid_points
    cdf_drop = 1.0 - (ratio[:, None] * fractions[None, :]).clamp(max=1.0)
    zero = torch.zeros((), dtype=torch.float64)
    for _ in range(cfg.iterations):
        mu = prob.rates * x.clamp_min(cfg.duty_floor)
        b = torch.where(prob.loaded, (prob.lam / mu).clamp(max=1.0), zero)
        duty = torch.zeros(prob.num_links, dtype=torch.float64)
        b_round = b
        b_cond = b[prob.indices]
        for m in range(cfg.rounds):
            p_win = _round_win_probs(prob, cdf_drop, b_cond)
            duty = duty + b_round * p_win
            if m + 1 < cfg.rounds:
                factors = 1.0 - b_cond * p_win[prob.indices]
                prod = _segment_log_product(factors, prob.owners, (prob.num_links,))
                b_round = b_round * (1.0 - p_win) * prod
                b_cond = b_round[prob.indices]
        x = ((1.0 - cfg.ema_weight) * x + cfg.ema_weight * duty).clamp(cfg.duty_floor, 1.0)
    return x


def loss_torch(prob: _Problem, u: torch.Tensor) -> torch.Tensor:
    x = predict_torch(prob, u)
    zero = torch.zeros((), dtype=torch.float64)
    rho = torch.where(prob.loaded, prob.lam / (x * prob.rates), zero)
    per_link = torch.sigmoid(3.0 * (rho - 0.8)) + (rho - 1.0).clamp_min(0.0)
    return per_link.mean()


def loss_gradient(prob: _Problem, log_z: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss value and d(loss)/d(log z) by reverse-mode differentiation."""
    u = torch.tensor(log_z, dtype=torch.float64, requires_grad=True)
    value = loss_torch(prob, u)
    value.backward()
    return float(value.item()), u.grad.numpy().copy()
