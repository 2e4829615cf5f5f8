"""Central finite-difference checks of autograd gradients on sampled parameter entries."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], n_samples: int = 16,
                    eps: float = 1e-4, seed: int = 0, floor: float = 1e-6) -> list[dict]:
    """Compare autograd with ``(f(p + eps) - f(p - eps)) / (2 eps)`` on random entries.

    ``loss_fn`` must be deterministic (eval mode, no dropout) and close over
    ``params``, which are perturbed in place and restored.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    picks = rng.choice(sizes.sum(), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    results = []
    with torch.no_grad():
        for flat in picks:
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[i])
            view = params[i].view(-1)
            orig = view[j].item()
            view[j] = orig + eps
            up = loss_fn().item()
            view[j] = orig - eps
            down = loss_fn().item()
            view[j] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[i].view(-1)[j].item()
            results.append({"param": i, "index": j, "analytic": analytic, "numeric": numeric,
                            "rel_error": relative_error(analytic, numeric, floor)})
    return results


def check_input_gradient(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, n_samples: int = 16,
                         eps: float = 1e-4, seed: int = 0, floor: float = 1e-6) -> list[dict]:
    """Same as :func:`check_gradients` for the gradient with respect to an input tensor."""
    x = x.detach().clone().requires_grad_(True)
    return check_gradients(lambda: fn(x), [x], n_samples, eps, seed, floor)
