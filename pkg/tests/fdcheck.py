"""Central finite-difference gradient checking shared by the test suite."""

import numpy as np
import torch


def max_relative_grad_error(loss_fn, params, h=1e-5, sample=None, rng=None,
                            grad_floor=1e-4):
    """Compare autograd gradients of ``loss_fn()`` against central differences.

    ``params`` is an iterable of float64 tensors with requires_grad=True that
    ``loss_fn`` closes over. When ``sample`` is given, only that many randomly
    chosen scalar entries per tensor are probed. Returns the maximum relative
    error over all probed entries.

    The error denominator is floored at ``grad_floor``: entries where both
    gradients are smaller are effectively judged by absolute error
    (rtol * grad_floor), mirroring allclose semantics. Pure relative error is
    ill-conditioned for vanishing gradients, where float64 central
    differences bottom out at eps * |loss| / (2h).
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        if p.dtype != torch.float64:
            raise AssertionError("gradient checks require float64 parameters")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() for p in params]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat = p.view(-1)
            n = flat.numel()
            if sample is None or sample >= n:
                indices = range(n)
            else:
                indices = rng.choice(n, size=sample, replace=False)
            for idx in indices:
                original = flat[idx].item()
                flat[idx] = original + h
                plus = loss_fn().item()
                flat[idx] = original - h
                minus = loss_fn().item()
                flat[idx] = original
                numeric = (plus - minus) / (2.0 * h)
                a = grad.view(-1)[idx].item()
                denom = max(abs(a), abs(numeric), grad_floor)
                worst = max(worst, abs(a - numeric) / denom)
    return worst
