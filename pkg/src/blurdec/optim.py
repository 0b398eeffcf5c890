"""Adan: adaptive Nesterov momentum optimizer.

Three EMA trackers per parameter: the gradient (m), the gradient
difference (d), and the squared Nesterov-corrected gradient (n):

    m_k = beta1 * m_{k-1} + (1 - beta1) * g_k
    d_k = beta2 * d_{k-1} + (1 - beta2) * (g_k - g_{k-1})
    n_k = beta3 * n_{k-1} + (1 - beta3) * (g_k + beta2 * (g_k - g_{k-1}))^2

    theta -= lr * (m_hat + beta2 * d_hat) / (sqrt(n_hat) + eps)

with the usual 1 - beta^k bias corrections on all three, then decoupled
proximal weight decay theta /= (1 + lr * wd). On the first step the
previous gradient is taken equal to the current one, so d starts at zero.
"""

from __future__ import annotations


import torch
from torch.optim import Optimizer


class Adan(Optimizer):
    def __init__(self, params, lr: float = 5e-4, betas=(0.98, 0.92, 0.99),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr < 0.0:
            raise ValueError(f"invalid learning rate: {lr}")
        if not all(0.0 <= b < 1.0 for b in betas) or len(betas) != 3:
            raise ValueError(f"betas must be three values in [0, 1), got {betas}")
        if eps <= 0.0:
            raise ValueError(f"invalid eps: {eps}")
        defaults = dict(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            beta1, beta2, beta3 = group["betas"]
            lr = group["lr"]
            eps = group["eps"]
            wd = group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if grad.is_sparse:
                    raise RuntimeError("Adan does not support sparse gradients")
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_diff"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                    state["prev_grad"] = grad.clone()
                state["step"] += 1
                k = state["step"]
                m, d, n = state["exp_avg"], state["exp_avg_diff"], state["exp_avg_sq"]
                diff = grad - state["prev_grad"]
                m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
                d.mul_(beta2).add_(diff, alpha=1.0 - beta2)
                nest = grad + beta2 * diff
                n.mul_(beta3).addcmul_(nest, nest, value=1.0 - beta3)
                bc1 = 1.0 - beta1 ** k
                bc2 = 1.0 - beta2 ** k
                bc3 = 1.0 - beta3 ** k
                denom = (n / bc3).sqrt_().add_(eps)
                update = (m / bc1 + beta2 * (d / bc2)) / denom
                p.add_(update, alpha=-lr)
                if wd != 0.0:
                    p.div_(1.0 + lr * wd)
                state["prev_grad"].copy_(grad)
        return loss
