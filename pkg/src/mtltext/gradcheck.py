"""Finite-difference gradient verification utilities.

``finite_difference_gradients`` evaluates per-coordinate central differences
of a scalar loss module using only forward passes, so it is independent of
the autograd path it is used to check. Perturbed evaluations are batched
with ``torch.func.vmap`` (one parameter tensor stacked at a time) to keep
the full sweep fast on a laptop; the arithmetic is identical to a naive
per-coordinate loop.

The wrapped module's forward must be vmap-compatible: no data-dependent
branching (build encoders with ``verify_finite=False``).
"""

from __future__ import annotations

import torch
from torch import nn
from torch.func import functional_call, vmap


def analytic_gradients(module: nn.Module, args: tuple) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value and autograd gradients for every named parameter."""
    for p in module.parameters():
        p.requires_grad_(True)
        p.grad = None
    loss = module(*args)
    loss.backward()
    # parameters absent from the graph (e.g. a bypassed embedding table)
    # have gradient identically zero
    grads = {name: (p.grad.detach().clone() if p.grad is not None
                    else torch.zeros_like(p))
             for name, p in module.named_parameters()}
    return loss.item(), grads


def finite_difference_gradients(module: nn.Module, args: tuple, step: float = 1e-4,
                                chunk: int = 256) -> dict[str, torch.Tensor]:
    """Central differences (loss(p+h) - loss(p-h)) / 2h for every coordinate."""
    base = {name: p.detach() for name, p in module.named_parameters()}

    def loss_at(params: dict[str, torch.Tensor]) -> torch.Tensor:
        return functional_call(module, params, args)

    out: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for name, tensor in base.items():
            numel = tensor.numel()
            k = min(chunk, numel)
            stack = tensor.unsqueeze(0).expand(k, *tensor.shape).clone()
            flat = stack.reshape(k, -1)
            in_dims = ({pn: (0 if pn == name else None) for pn in base},)
            batched_loss = vmap(loss_at, in_dims=in_dims)
            fd = torch.empty(numel, dtype=tensor.dtype)
            for start in range(0, numel, k):
                idx = torch.arange(start, min(start + k, numel))
                rows = torch.arange(idx.numel())
                orig = flat[rows, idx].clone()
                params = {pn: (stack if pn == name else base[pn]) for pn in base}
                flat[rows, idx] = orig + step
                plus = batched_loss(params)[: idx.numel()]
                flat[rows, idx] = orig - step
                minus = batched_loss(params)[: idx.numel()]
                flat[rows, idx] = orig
                fd[idx] = (plus - minus) / (2.0 * step)
            out[name] = fd.reshape(tensor.shape)
    return out


def max_relative_error(analytic: dict[str, torch.Tensor],
                       numeric: dict[str, torch.Tensor],
                       floor: float = 1e-5) -> float:
    """Worst per-coordinate relative error between two gradient sets.

    The denominator is max(|analytic|, |numeric|, floor): coordinates whose
    gradients sit below the floor are effectively compared absolutely, which
    keeps finite-difference truncation noise (~step**2) from dominating.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()),
                              torch.full_like(a, floor))
        worst = max(worst, ((a - n).abs() / denom).max().item())
    return worst
