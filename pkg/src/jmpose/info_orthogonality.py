"""Variational mutual-information bounds and the information-orthogonality loss.

All estimates are in nats and computed over a batch of B aligned samples.

* Lower bound: InfoNCE with a separable critic, in-batch negatives.
* Upper bound: leave-one-out bound built from a diagonal-Gaussian predictor
  ``q(y | x)`` fitted by maximum likelihood on the positive pairs.
* Conditional bound: ``I(X; Y | Z) = I(X; Y, Z) - I(X; Z)``, both terms from the
  upper-bound estimator (each with its own predictor of X).

The per-layer loss combines them as ``relevancy - complement + redundancy``. The
model only ever sees the estimators through :class:`Frozen`, which detaches their
parameters; the estimators are fitted on their own objective by the trainer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

LOG_2PI = math.log(2 * math.pi)


def _mlp(in_dim, hidden, out_dim, depth=2):
    layers = []
    d = in_dim
    for _ in range(depth):
        layers += [nn.Linear(d, hidden), nn.ReLU()]
        d = hidden
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


class GaussianPredictor(nn.Module):
    """Diagonal Gaussian ``q(y | x)``; ``forward`` gives the (B, B) matrix log q(y_i | x_j)."""

    def __init__(self, x_dim: int, y_dim: int, hidden: int = 64):
        super().__init__()
        self.mean = _mlp(x_dim, hidden, y_dim)
        self.log_var = _mlp(x_dim, hidden, y_dim, depth=1)

    def params(self, x):
        # soft clamp keeps exp() finite for arbitrary feature scales
        return self.mean(x), 10.0 * torch.tanh(self.log_var(x) / 10.0)

    def log_likelihood(self, x, y):
        mu, lv = self.params(x)
        return (-0.5 * ((y - mu) ** 2 / lv.exp() + lv + LOG_2PI)).sum(-1).mean()

    def forward(self, x, y):
        mu, lv = self.params(x)
        diff = y.unsqueeze(1) - mu.unsqueeze(0)  # [i, j] = y_i - mu(x_j)
        return (-0.5 * (diff**2 / lv.exp().unsqueeze(0) + lv.unsqueeze(0) + LOG_2PI)).sum(-1)


class SeparableCritic(nn.Module):
    """``forward`` gives the (B, B) score matrix f(x_i, y_j) = g(x_i) . h(y_j).

    Quadratic log-density ratios (the Gaussian case, including y == x) factor
    exactly through such embeddings.
    """

    def __init__(self, x_dim: int, y_dim: int, hidden: int = 64, embed: int = 32):
        super().__init__()
        self.g = _mlp(x_dim, hidden, embed)
        self.h = _mlp(y_dim, hidden, embed)

    def forward(self, x, y):
        return self.g(x) @ self.h(y).T


class Frozen:
    """Calls a module with detached parameters so no gradient reaches them."""

    def __init__(self, module: nn.Module):
        self.module = module

    def __call__(self, *args):
        params = {k: v.detach() for k, v in self.module.named_parameters()}
        return functional_call(self.module, params, args)


def _check_batch(*xs):
    B = xs[0].shape[0]
    if B < 2:
        raise ValueError("mutual-information bounds need a batch of at least 2 samples")
    for x in xs[1:]:
        if x.shape[0] != B:
            raise ValueError("batches are not aligned")


def mi_lower_bound(x: torch.Tensor, y: torch.Tensor, critic) -> torch.Tensor:
    """InfoNCE: mean_i [f(x_i, y_i) - logsumexp_j f(x_i, y_j)] + log B."""
    _check_batch(x, y)
    scores = critic(x, y)
    B = scores.shape[0]
    return (scores.diagonal() - torch.logsumexp(scores, dim=1)).mean() + math.log(B)


def mi_upper_bound(x: torch.Tensor, y: torch.Tensor, predictor) -> torch.Tensor:
    """Leave-one-out bound: mean_i [log q(y_i|x_i) - log mean_{j != i} q(y_i|x_j)]."""
    _check_batch(x, y)
    logq = predictor(x, y)
    B = logq.shape[0]
    eye = torch.eye(B, dtype=torch.bool, device=logq.device)
    negatives = torch.logsumexp(logq.masked_fill(eye, float("-inf")), dim=1) - math.log(B - 1)
    return (logq.diagonal() - negatives).mean()


def conditional_mi_upper(x, y, z, joint_predictor, cond_predictor, clamp: bool = False) -> torch.Tensor:
    """``I(X; Y | Z)`` as ``I(X; Y, Z) - I(X; Z)``; predictors model x from (y, z) and from z.

    With ``clamp=True`` the value is floored at zero while the gradient stays that of
    the raw difference.
    """
    _check_batch(x, y, z)
    raw = mi_upper_bound(torch.cat([y, z], dim=-1), x, joint_predictor) - mi_upper_bound(z, x, cond_predictor)
    if clamp:
        return raw + (raw.clamp(min=0.0) - raw).detach()
    return raw


def pool_features(t: torch.Tensor) -> torch.Tensor:
    """Global average pool (N, C, H, W) -> (N, C); 2-D input passes through."""
    return t.mean(dim=(2, 3)) if t.dim() == 4 else t


def standardize(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Zero mean, unit variance per dimension over the batch.

    MI is unchanged by per-dimension affine maps; fixing the scale stops the
    features from escaping the estimators simply by growing.
    """
    return (x - x.mean(0)) / (x.std(0, unbiased=False) + eps)


def prepare_features(t: torch.Tensor) -> torch.Tensor:
    return standardize(pool_features(t))


class OrthogonalityEstimators(nn.Module):
    """The four estimator networks behind one layer's orthogonality loss."""

    def __init__(self, joint_dim: int, motion_dim: int, heatmap_dim: int, hidden: int = 64):
        super().__init__()
        self.relevancy = GaussianPredictor(motion_dim, joint_dim, hidden)
        self.complement = SeparableCritic(joint_dim, heatmap_dim, hidden)
        self.redundancy_joint = GaussianPredictor(joint_dim + motion_dim, heatmap_dim, hidden)
        self.redundancy_cond = GaussianPredictor(motion_dim, heatmap_dim, hidden)

    def objective(self, motion, joint, heatmap) -> torch.Tensor:
        """Loss minimised by the estimators themselves (inputs should be detached)."""
        m, j, h = prepare_features(motion), prepare_features(joint), prepare_features(heatmap)
        fit = (
            self.relevancy.log_likelihood(m, j)
            + self.redundancy_joint.log_likelihood(torch.cat([j, m], -1), h)
            + self.redundancy_cond.log_likelihood(m, h)
        )
        return -(fit + mi_lower_bound(j, h, self.complement))


@dataclass
class OrthogonalityTerms:
    relevancy: torch.Tensor
    complement: torch.Tensor
    redundancy: torch.Tensor

    @property
    def loss(self) -> torch.Tensor:
        return self.relevancy - self.complement + self.redundancy


def io_terms(motion, joint, heatmap, estimators: OrthogonalityEstimators, frozen: bool = True) -> OrthogonalityTerms:
    m, j, h = prepare_features(motion), prepare_features(joint), prepare_features(heatmap)
    wrap = Frozen if frozen else (lambda mod: mod)
    return OrthogonalityTerms(
        relevancy=mi_upper_bound(m, j, wrap(estimators.relevancy)),
        complement=mi_lower_bound(j, h, wrap(estimators.complement)),
        redundancy=conditional_mi_upper(h, j, m, wrap(estimators.redundancy_joint), wrap(estimators.redundancy_cond)),
    )


def io_loss(motion, joint, heatmap, estimators: OrthogonalityEstimators, frozen: bool = True) -> torch.Tensor:
    """``I(M; J) - I(J; H) + I(H; J | M)`` on pooled, standardized features, estimators frozen."""
    return io_terms(motion, joint, heatmap, estimators, frozen).loss


# --- stand-alone estimator fitting, used by the calibration bench and tests ---


def gaussian_pairs(rng: np.random.Generator, n: int, rho: float):
    x = rng.standard_normal(n)
    y = rho * x + math.sqrt(1 - rho**2) * rng.standard_normal(n)
    return x[:, None], y[:, None]


def fit_bound(kind: str, sampler, steps: int = 1500, batch: int = 256, lr: float = 2e-3, seed: int = 0, hidden: int = 64):
    """Fit an estimator on fresh batches from ``sampler(rng, batch) -> (x, y)``.

    ``kind`` is ``"lower"`` (InfoNCE critic) or ``"upper"`` (Gaussian predictor).
    Returns the trained module.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    x0, y0 = sampler(rng, 2)
    if kind == "lower":
        module = SeparableCritic(x0.shape[1], y0.shape[1], hidden=hidden)
    elif kind == "upper":
        module = GaussianPredictor(x0.shape[1], y0.shape[1], hidden=hidden)
    else:
        raise ValueError(f"unknown bound kind {kind!r}")
    opt = torch.optim.Adam(module.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    for _ in range(steps):
        x, y = (torch.as_tensor(a, dtype=torch.float32) for a in sampler(rng, batch))
        if kind == "lower":
            loss = -mi_lower_bound(x, y, module)
        else:
            loss = -module.log_likelihood(x, y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
    return module


@torch.no_grad()
def evaluate_bound(kind: str, module, sampler, batches: int = 50, batch: int = 256, seed: int = 12345) -> float:
    rng = np.random.default_rng(seed)
    fn = mi_lower_bound if kind == "lower" else mi_upper_bound
    vals = []
    for _ in range(batches):
        x, y = (torch.as_tensor(a, dtype=torch.float32) for a in sampler(rng, batch))
        vals.append(float(fn(x, y, module)))
    return float(np.mean(vals))


def calibration_table(rhos=(0.0, 0.5, 0.9), steps: int = 1500, seed: int = 0):
    """Rows of ``(rho, truth, lower, upper)`` on 1-D correlated Gaussians."""
    rows = []
    for rho in rhos:
        sampler = lambda rng, n, r=rho: gaussian_pairs(rng, n, r)  # noqa: E731
        est = {}
        for kind in ("lower", "upper"):
            module = fit_bound(kind, sampler, steps=steps, seed=seed)
            est[kind] = evaluate_bound(kind, module, sampler)
        truth = -0.5 * math.log(1 - rho**2)
        rows.append((rho, truth, est["lower"], est["upper"]))
    return rows
