"""Shared test helpers: central finite differences for gradient oracles."""

import numpy as np
import pytest
import torch


def central_diff_scalar(fn, tensor: torch.Tensor, index: tuple, h: float) -> float:
    """d fn / d tensor[index] by central differences, restoring the tensor."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + h
        up = float(fn())
        tensor[index] = orig - h
        down = float(fn())
        tensor[index] = orig
    return (up - down) / (2.0 * h)


def central_diff_directional(fn, tensor: torch.Tensor, direction: torch.Tensor, h: float) -> float:
    """Directional derivative of fn along `direction` within one tensor."""
    with torch.no_grad():
        tensor += h * direction
        up = float(fn())
        tensor -= 2.0 * h * direction
        down = float(fn())
        tensor += h * direction
    return (up - down) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_excess(analytic: float, fd: float, rtol: float, atol: float) -> float:
    """gradcheck-style criterion: passes when the excess ratio is below 1.

    The absolute term absorbs central-difference cancellation noise
    (~ eps * |loss| / h), below which a relative comparison of two tiny
    numbers is meaningless.
    """
    return abs(analytic - fd) / (atol + rtol * max(abs(analytic), abs(fd)))


def check_param_gradients(loss_fn, named_params, rtol, h=1e-6, n_elements=2, seed=0,
                          atol=1e-6):
    """Compare autograd gradients against central differences.

    For every parameter tensor: one random-direction directional derivative
    plus `n_elements` randomly sampled per-element checks. Returns the worst
    excess ratio (must stay below 1). `loss_fn` must rebuild the loss from
    scratch on every call.
    """
    params = list(named_params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for (name, p), g in zip(params, grads):
        assert g is not None, f"no gradient reached parameter {name}"
        v = torch.from_numpy(rng.standard_normal(tuple(p.shape))).to(p.dtype)
        v /= v.norm()
        analytic = float((g * v).sum())
        fd = central_diff_directional(loss_fn, p.data, v, h)
        excess = grad_excess(analytic, fd, rtol, atol)
        assert excess < 1.0, (
            f"directional gradient mismatch for {name}: {analytic} vs {fd} "
            f"(excess {excess:.2f} at rtol={rtol}, atol={atol})"
        )
        worst = max(worst, excess)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(n_elements, flat.numel()), replace=False):
            idx = int(idx)
            analytic_e = float(gflat[idx])
            fd_e = central_diff_scalar(loss_fn, flat, (idx,), h)
            excess_e = grad_excess(analytic_e, fd_e, rtol, atol)
            assert excess_e < 1.0, (
                f"element gradient mismatch for {name}[{idx}]: {analytic_e} vs {fd_e} "
                f"(excess {excess_e:.2f} at rtol={rtol}, atol={atol})"
            )
            worst = max(worst, excess_e)
    return worst


@pytest.fixture(scope="session")
def torch_threads():
    return torch.get_num_threads()
