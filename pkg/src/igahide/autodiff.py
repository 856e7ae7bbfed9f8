"""Differentiation contract used across the toolkit.

All differentiable computation runs on torch tensors in reverse mode. This
module pins the small surface the rest of the code relies on (scalar-objective
gradients, detaching) and provides the finite-difference checker the test
suite uses to validate every differentiable operation.
"""

import torch


class DetachedInputError(ValueError):
    pass


def grad(objective: torch.Tensor, wrt: torch.Tensor) -> torch.Tensor:
    """d(objective)/d(wrt) for a scalar objective.

    Returns a tensor shaped like `wrt`; zero if `wrt` was recorded but did not
    influence the objective. Raises DetachedInputError if `wrt` never entered
    the graph.
    """
    if objective.dim() != 0:
        raise ValueError(f"objective must be scalar, got shape {tuple(objective.shape)}")
    if not wrt.requires_grad:
        raise DetachedInputError("detached input")
    (g,) = torch.autograd.grad(objective, wrt, allow_unused=True, retain_graph=False)
    if g is None:
        return torch.zeros_like(wrt)
    return g


def detach(t: torch.Tensor) -> torch.Tensor:
    """Same values, excluded from further gradient flow."""
    return t.detach()


def finite_difference_grad(f, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite differences of the scalar function f at x (double precision)."""
    x = x.detach().double()
    out = torch.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
            hi = float(f(x))
            flat[i] = orig - eps
            lo = float(f(x))
            flat[i] = orig
        out.reshape(-1)[i] = (hi - lo) / (2.0 * eps)
    return out


def check_gradient(f, x: torch.Tensor, eps: float = 1e-5, rtol: float = 1e-4) -> float:
    """Compare autodiff against central differences; returns the relative error.

    f must accept a tensor and return a scalar tensor. The check runs in
    double precision regardless of the input dtype.
    """
    x = x.detach().double().requires_grad_(True)
    analytic = grad(f(x), x)
    numeric = finite_difference_grad(f, x, eps=eps)
    denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    rel = (analytic - numeric).norm().item() / denom
    if rel > rtol:
        raise AssertionError(f"gradient check failed: relative error {rel:.3e} > {rtol:.1e}")
    return rel
