import numpy as np
import pytest
import torch

from jmpose.gradcheck import run_gradchecks
from jmpose.info_orthogonality import (
    GaussianPredictor,
    OrthogonalityEstimators,
    calibration_table,
    conditional_mi_upper,
    evaluate_bound,
    fit_bound,
    gaussian_pairs,
    io_loss,
    io_terms,
    mi_lower_bound,
    mi_upper_bound,
    prepare_features,
)

def _pairs(rho, scale=1.0):
    def sampler(rng, n):
        x, y = gaussian_pairs(rng, n, rho)
        return x, scale * y

    return sampler


def _estimate(kind, sampler, steps=1500):
    return evaluate_bound(kind, fit_bound(kind, sampler, steps=steps), sampler)


def test_batch_of_one_errors():
    x = torch.zeros(1, 2)
    with pytest.raises(ValueError):
        mi_lower_bound(x, x, lambda a, b: a @ b.T)
    with pytest.raises(ValueError):
        mi_upper_bound(x, x, GaussianPredictor(2, 2))


def test_lower_bound_independent():
    assert -0.05 <= _estimate("lower", _pairs(0.0)) <= 0.1


def test_upper_bound_independent():
    assert -0.1 <= _estimate("upper", _pairs(0.0)) <= 0.1


def test_lower_bound_correlated():
    assert 0.65 <= _estimate("lower", _pairs(0.9)) <= 0.84


def test_upper_bound_correlated():
    assert 0.80 <= _estimate("upper", _pairs(0.9)) <= 1.10


def test_lower_bound_identity_is_large():
    def same(rng, n):
        x = rng.standard_normal((n, 1))
        return x, x.copy()

    assert _estimate("lower", same) >= 2.0


def test_upper_bound_scale_invariance():
    assert abs(_estimate("upper", _pairs(0.9, 10.0)) - _estimate("upper", _pairs(0.9))) <= 0.1


def test_calibration_suite_and_ordering():
    for rho, truth, lower, upper in calibration_table():
        tol = max(0.1, 0.15 * truth)
        assert abs(lower - truth) <= tol, (rho, lower)
        assert abs(upper - truth) <= tol, (rho, upper)
        if rho == 0.9:
            assert upper >= lower


def _conditional(sampler, steps=1500):
    """Fit the two predictors of the difference construction and evaluate the raw value."""
    joint = fit_bound("upper", lambda rng, n: _yz_x(sampler(rng, n)), steps=steps)
    cond = fit_bound("upper", lambda rng, n: _z_x(sampler(rng, n)), steps=steps, seed=1)
    rng = np.random.default_rng(999)
    vals = []
    with torch.no_grad():
        for _ in range(50):
            x, y, z = (torch.as_tensor(a, dtype=torch.float32) for a in sampler(rng, 256))
            vals.append(float(conditional_mi_upper(x, y, z, joint, cond)))
    return float(np.mean(vals))


def _yz_x(xyz):
    x, y, z = xyz
    return np.concatenate([y, z], axis=1), x


def _z_x(xyz):
    x, _, z = xyz
    return z, x


def test_conditional_on_itself_is_zero():
    def sampler(rng, n):
        x, z = gaussian_pairs(rng, n, 0.7)
        return x, z.copy(), z

    assert 0.0 <= max(_conditional(sampler), 0.0) <= 0.1


def test_conditional_independent():
    def sampler(rng, n):
        return tuple(rng.standard_normal((n, 1)) for _ in range(3))

    assert -0.1 <= _conditional(sampler) <= 0.1


def test_conditional_gaussian_sum():
    def sampler(rng, n):
        x, z, e = (rng.standard_normal((n, 1)) for _ in range(3))
        return x, x + z + e, z

    assert 0.25 <= _conditional(sampler) <= 0.55


def test_conditional_clamp_keeps_raw_gradient():
    torch.manual_seed(0)
    joint, cond = GaussianPredictor(2, 1, 8), GaussianPredictor(1, 1, 8)
    x = torch.randn(6, 1, requires_grad=True)
    y, z = torch.randn(6, 1), torch.randn(6, 1)
    raw = conditional_mi_upper(x, y, z, joint, cond)
    clamped = conditional_mi_upper(x, y, z, joint, cond, clamp=True)
    assert clamped.item() == max(raw.item(), 0.0)
    g_raw = torch.autograd.grad(raw, x)[0]
    g_clamped = torch.autograd.grad(clamped, x)[0]
    assert torch.equal(g_raw, g_clamped)


def test_assembly_with_mock_estimators(monkeypatch):
    import jmpose.info_orthogonality as io_mod

    a, b, c = torch.tensor(0.7), torch.tensor(0.25), torch.tensor(-0.125)
    monkeypatch.setattr(io_mod, "mi_upper_bound", lambda *args: a)
    monkeypatch.setattr(io_mod, "mi_lower_bound", lambda *args: b)
    monkeypatch.setattr(io_mod, "conditional_mi_upper", lambda *args, **kw: c)
    est = OrthogonalityEstimators(2, 2, 3, hidden=4)
    m, j, h = torch.randn(4, 2, 3, 3), torch.randn(4, 2, 3, 3), torch.randn(4, 3, 3, 3)
    assert io_loss(m, j, h, est).item() == (a - b + c).item()


def test_assembly_is_signed_sum_of_terms():
    torch.manual_seed(1)
    est = OrthogonalityEstimators(4, 4, 3, hidden=8)
    m, j, h = torch.randn(8, 4, 3, 3), torch.randn(8, 4, 3, 3), torch.randn(8, 3, 3, 3)
    t = io_terms(m, j, h, est)
    assert torch.equal(io_loss(m, j, h, est), t.relevancy - t.complement + t.redundancy)


def test_independent_joint_feature_gives_near_zero_loss():
    torch.manual_seed(2)
    rng = np.random.default_rng(2)
    C, K, B = 2, 2, 128
    est = OrthogonalityEstimators(C, C, K, hidden=32)
    opt = torch.optim.Adam(est.parameters(), lr=2e-3)

    def batch():
        m = torch.as_tensor(rng.standard_normal((B, C)), dtype=torch.float32)
        h = m[:, :K] + 0.5 * torch.as_tensor(rng.standard_normal((B, K)), dtype=torch.float32)
        j = torch.as_tensor(rng.standard_normal((B, C)), dtype=torch.float32)
        return m, j, h

    for _ in range(1500):
        loss = est.objective(*batch())
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        vals = [io_loss(*batch(), est).item() for _ in range(30)]
    assert abs(np.mean(vals)) <= 0.3


def test_gradient_reaches_features_not_estimators():
    torch.manual_seed(3)
    est = OrthogonalityEstimators(4, 4, 3, hidden=8)
    m = torch.randn(6, 4, 2, 2, requires_grad=True)
    j = torch.randn(6, 4, 2, 2, requires_grad=True)
    h = torch.randn(6, 3, 2, 2, requires_grad=True)
    io_loss(m, j, h, est).backward()
    assert all(t.grad is not None and t.grad.abs().sum() > 0 for t in (m, j, h))
    assert all(p.grad is None for p in est.parameters())
    # the estimators' own objective does train them
    est.objective(m.detach(), j.detach(), h.detach()).backward()
    assert all(p.grad is not None for p in est.parameters())


def test_feature_preparation_is_pooled_and_standardised():
    x = torch.randn(16, 5, 3, 3) * 7 + 2
    v = prepare_features(x)
    assert v.shape == (16, 5)
    torch.testing.assert_close(v.mean(0), torch.zeros(5), atol=1e-5, rtol=0)
    torch.testing.assert_close(v.std(0, unbiased=False), torch.ones(5), atol=1e-3, rtol=0)


def test_io_loss_gradcheck():
    assert all(r.passed(1e-3) for r in run_gradchecks(["io_loss"]))


def test_io_loss_autograd_gradcheck():
    torch.manual_seed(4)
    est = OrthogonalityEstimators(2, 2, 2, hidden=4).double()
    args = [torch.randn(4, 2, 2, 2, dtype=torch.float64, requires_grad=True) for _ in range(3)]
    assert torch.autograd.gradcheck(lambda m, j, h: io_loss(m, j, h, est), args, eps=1e-6, atol=1e-5)
