"""Shared numeric helpers for the test suite."""
import torch


def finite_difference_grad(fn, x, eps=1e-5):
    """Central differences of a scalar function w.r.t. every element of x."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def max_relative_error(a, b):
    scale = max(float(a.abs().max()), float(b.abs().max()), 1e-12)
    return float((a - b).abs().max()) / scale
