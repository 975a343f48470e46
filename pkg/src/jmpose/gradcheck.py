"""Central finite-difference checks of the custom differentiable pieces at float64."""

from __future__ import annotations

import time
from dataclasses import dataclass

import torch

from jmpose.deform import modulated_deform_conv2d
from jmpose.info_orthogonality import OrthogonalityEstimators, io_loss
from jmpose.mutual_learning import DetectionHead, JointMotionInteractionBlock, LayerState

MODULES = ("deform", "jmib", "head", "io_loss")


@dataclass
class GradcheckResult:
    name: str
    input: str
    rel_error: float
    seconds: float

    def passed(self, tol: float = 1e-3) -> bool:
        return self.rel_error < tol


def numeric_grad(fn, inputs, which: int, eps: float = 1e-6) -> torch.Tensor:
    """d sum(fn(*inputs)) / d inputs[which] by central differences."""
    x = inputs[which]
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = fn(*inputs).sum().item()
            flat[i] = orig - eps
            minus = fn(*inputs).sum().item()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(numeric.abs().max().item(), 1e-8)
    return (analytic - numeric).abs().max().item() / scale


def check(fn, inputs, names, eps: float = 1e-6, label: str = "") -> list[GradcheckResult]:
    """Compare autograd with finite differences for every input named in ``names``."""
    inputs = [t.detach().clone().double().requires_grad_(True) for t in inputs]
    fn(*inputs).sum().backward()
    results = []
    for i, name in enumerate(names):
        if name is None:
            continue
        t0 = time.perf_counter()
        numeric = numeric_grad(fn, [t.detach().clone() for t in inputs], i, eps)
        err = relative_error(inputs[i].grad, numeric)
        results.append(GradcheckResult(label, name, err, time.perf_counter() - t0))
    return results


def _deform_case(gen):
    N, C, H, W, O, k = 1, 2, 5, 5, 2, 3
    x = torch.randn(N, C, H, W, generator=gen, dtype=torch.float64)
    # keep offsets away from integer sample positions, where bilinear sampling has kinks
    offset = torch.rand(N, 2 * k * k, H, W, generator=gen, dtype=torch.float64) * 0.6 + 0.2
    offset = offset * torch.where(torch.rand(offset.shape, generator=gen, dtype=torch.float64) < 0.5, -1.0, 1.0)
    mask = torch.rand(N, k * k, H, W, generator=gen, dtype=torch.float64)
    weight = torch.randn(O, C, k, k, generator=gen, dtype=torch.float64)
    fn = lambda x, o, m, w: modulated_deform_conv2d(x, o, m, w)  # noqa: E731
    return check(fn, [x, offset, mask, weight], ["input", "offset", "mask", "weight"], label="deform")


def _jmib_case(gen):
    torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
    C = 4
    block = JointMotionInteractionBlock(C).double()
    j = torch.randn(2, C, 3, 3, generator=gen, dtype=torch.float64)
    m = torch.randn(2, C, 3, 3, generator=gen, dtype=torch.float64)

    def fn(j, m):
        out = block(LayerState(j, m))
        return torch.cat([out.joint, out.motion], dim=1)

    return check(fn, [j, m], ["joint", "motion"], label="jmib")


def _head_case(gen):
    torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
    C, K = 4, 3
    head = DetectionHead(C, K).double()
    j = torch.randn(1, C, 4, 3, generator=gen, dtype=torch.float64)
    m = torch.randn(1, C, 4, 3, generator=gen, dtype=torch.float64)
    fn = lambda j, m: head(LayerState(j, m))  # noqa: E731
    return check(fn, [j, m], ["joint", "motion"], label="head")


def _io_case(gen):
    torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
    C, K, B = 3, 2, 4
    est = OrthogonalityEstimators(C, C, K, hidden=8).double()
    m = torch.randn(B, C, 2, 2, generator=gen, dtype=torch.float64)
    j = torch.randn(B, C, 2, 2, generator=gen, dtype=torch.float64)
    h = torch.randn(B, K, 2, 2, generator=gen, dtype=torch.float64)
    fn = lambda m, j, h: io_loss(m, j, h, est)  # noqa: E731
    results = check(fn, [m, j, h], ["motion", "joint", "heatmap"], label="io_loss")
    if any(p.grad is not None for p in est.parameters()):
        raise AssertionError("io_loss leaked gradient into the frozen estimators")
    return results


CASES = {"deform": _deform_case, "jmib": _jmib_case, "head": _head_case, "io_loss": _io_case}


def run_gradchecks(modules=MODULES, seed: int = 0) -> list[GradcheckResult]:
    out = []
    for name in modules:
        if name not in CASES:
            raise ValueError(f"unknown module {name!r}; choose from {MODULES}")
        out += CASES[name](torch.Generator().manual_seed(seed))
    return out
