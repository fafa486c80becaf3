"""Pure numpy implementations of the hot kernels.

Same signatures and return conventions as the compiled ``_core`` module.
"""

import numpy as np

from neural_filter import _ode


def integrate_batch(code, params, x0, t_span, rtol, atol, h0, max_steps):
    rhs = _ode.RHS_BY_CODE.get(code)
    if rhs is None:
        raise ValueError(f"unknown system code {code}")
    with np.errstate(over="ignore", invalid="ignore"):
        return _ode.dopri5(
            rhs, tuple(params), x0, t_span, rtol=rtol, atol=atol, h0=h0, max_steps=max_steps
        )


def adam_update(flat, grad, m, v, step, lr, beta1, beta2, eps):
    """In-place Adam update; ``step`` is the 1-based index of this update."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    flat -= lr * m_hat / (np.sqrt(v_hat) + eps)


def unpack(flat, input_dim, widths):
    """Views of ``flat`` as per-layer ``(W, b)`` with ``W`` shaped (out, in)."""
    layers = []
    off = 0
    fan_in = input_dim
    for width in widths:
        width = int(width)
        W = flat[off : off + width * fan_in].reshape(width, fan_in)
        off += width * fan_in
        b = flat[off : off + width]
        off += width
        layers.append((W, b))
        fan_in = width
    return layers


def batch_loss_and_grad(flat, input_dim, widths, acts, xb, yb):
    layers = unpack(flat, input_dim, widths)
    activations = [xb]
    a = xb
    for (W, b), act in zip(layers, acts):
        a = a @ W.T + b
        if act == 1:
            a = np.where(a > 0.0, a, 0.0)
        activations.append(a)
    diff = a - yb
    count = diff.size
    loss = float(np.sum(diff * diff)) / count
    delta = (2.0 / count) * diff

    grad = np.zeros_like(flat)
    gviews = unpack(grad, input_dim, widths)
    for idx in range(len(layers) - 1, -1, -1):
        gW, gb = gviews[idx]
        a_in = activations[idx]
        gW[...] = delta.T @ a_in
        gb[...] = delta.sum(axis=0)
        if idx > 0:
            delta = delta @ layers[idx][0]
            if acts[idx - 1] == 1:
                delta = np.where(a_in > 0.0, delta, 0.0)
    return loss, grad


def run_batches(flat, m, v, step, input_dim, widths, acts, X, Y, order,
                batch_start, batch_stop, batch_size, lr, beta1, beta2, eps, grad_mask):
    n = order.shape[0]
    losses = []
    status = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for bi in range(batch_start, batch_stop):
            idx = order[bi * batch_size : min((bi + 1) * batch_size, n)]
            loss, grad = batch_loss_and_grad(flat, input_dim, widths, acts, X[idx], Y[idx])
            if not np.isfinite(loss):
                status = 1
                break
            grad *= grad_mask
            if not np.isfinite(grad).all():
                status = 1
                break
            losses.append(loss)
            step += 1
            adam_update(flat, grad, m, v, step, lr, beta1, beta2, eps)
    return np.asarray(losses, dtype=np.float64), step, status


def dataset_mse(flat, input_dim, widths, acts, X, Y):
    a = X
    for (W, b), act in zip(unpack(flat, input_dim, widths), acts):
        a = a @ W.T + b
        if act == 1:
            a = np.where(a > 0.0, a, 0.0)
    diff = a - Y
    return float(np.mean(diff * diff))
