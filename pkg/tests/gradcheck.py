"""Finite-difference gradient oracle for the network.

Uses forward evaluations only, never the analytic backward pass, so it is
an independent check of backpropagation. Central differences on every
parameter would need ~740k full forward passes; instead each parameter's
effect on its own block's pre-activation is written out exactly (affine
blocks are linear in their parameters), the perturbed activations are
pushed through the real downstream blocks in batches, and the loss
difference gives the derivative. `naive_fd` is the same estimate computed
the brute-force way for cross-checking the batched construction.
"""

from __future__ import annotations

import numpy as np

from insomnia_eeg.model import CnnModel, _Conv, _Dense


def _collect(model: CnnModel, x: np.ndarray):
    """Per-block (input, cache) pairs for one example."""
    act = np.asarray(x, dtype=np.float64)[None, None, :]
    entries = []
    for block in model.blocks:
        out, cache = block.forward(act)
        entries.append((act, cache))
        act = out
    return entries


def condition_instance(
    model: CnnModel, x: np.ndarray, margin: float = 1e-3, max_rounds: int = 20
) -> None:
    """Nudge biases so no hidden pre-activation sits within `margin` of 0.

    A pre-activation inside the finite-difference step straddles the ReLU
    kink, where central differences measure the average of the two one-sided
    slopes instead of the derivative. Bias bumps are deterministic, so the
    conditioned instance is still fully fixed by the seed.
    """
    for _ in range(max_rounds):
        dirty = False
        for block, (_, cache) in zip(model.blocks, _collect(model, x)):
            if isinstance(block, _Dense) and block.relu:
                z = cache[1]
                near = np.abs(z[0]) < margin
            elif isinstance(block, _Conv):
                z = cache[2]
                near = np.any(np.abs(z[0]) < margin, axis=1)
            else:
                continue
            if near.any():
                block.b[near] += 3.7 * margin
                dirty = True
        if not dirty:
            return
    raise RuntimeError("could not condition the instance away from ReLU kinks")


def _chunked(n: int, size: int):
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


def _preactivation_deltas(block, name: str, cache, indices: np.ndarray) -> np.ndarray:
    """Exact d(pre-activation)/d(theta_j) for a chunk of flat parameter indices."""
    if isinstance(block, _Conv):
        x, windows, z = cache
        out_ch, in_ch, k = block.W.shape
        t = z.shape[2]
        if name == "W":
            o = indices // (in_ch * k)
            rem = indices % (in_ch * k)
            i, j = rem // k, rem % k
            deltas = np.zeros((len(indices), out_ch, t))
            deltas[np.arange(len(indices)), o, :] = windows[0, i, :, j]
        else:
            deltas = np.zeros((len(indices), out_ch, t))
            deltas[np.arange(len(indices)), indices, :] = 1.0
        return deltas
    assert isinstance(block, _Dense)
    x, z = cache
    out_f, in_f = block.W.shape
    deltas = np.zeros((len(indices), out_f))
    if name == "W":
        o, i = indices // in_f, indices % in_f
        deltas[np.arange(len(indices)), o] = x[0, i]
    else:
        deltas[np.arange(len(indices)), indices] = 1.0
    return deltas


def fd_gradients(
    model: CnnModel, x: np.ndarray, target, h: float = 1e-4, chunk: int = 4096
) -> list[dict | None]:
    """Central-difference gradient of the loss for every parameter tensor."""
    entries = _collect(model, x)
    grads: list[dict | None] = []
    for idx, block in enumerate(model.blocks):
        params = block.params()
        if not params:
            grads.append(None)
            continue
        _, cache = entries[idx]
        z = cache[-1][0] if isinstance(block, _Dense) else cache[2][0]
        relu = getattr(block, "relu", True)
        block_grads = {}
        for name, tensor in params.items():
            flat = np.empty(tensor.size)
            for indices in _chunked(tensor.size, chunk):
                deltas = _preactivation_deltas(block, name, cache, indices)
                z_plus = z[None, ...] + h * deltas
                z_minus = z[None, ...] - h * deltas
                y_plus = np.maximum(z_plus, 0.0) if relu else z_plus
                y_minus = np.maximum(z_minus, 0.0) if relu else z_minus
                loss_plus = model.losses_from(idx + 1, y_plus, target)
                loss_minus = model.losses_from(idx + 1, y_minus, target)
                flat[indices] = (loss_plus - loss_minus) / (2.0 * h)
            block_grads[name] = flat.reshape(tensor.shape)
        grads.append(block_grads)
    return grads


def naive_fd(
    model: CnnModel,
    x: np.ndarray,
    target,
    block_index: int,
    name: str,
    flat_index: int,
    h: float = 1e-4,
) -> float:
    """Dumb central difference: mutate one parameter, run two full forwards."""
    tensor = model.blocks[block_index].params()[name]
    original = tensor.flat[flat_index]
    tensor.flat[flat_index] = original + h
    loss_plus = model.loss(x, target)
    tensor.flat[flat_index] = original - h
    loss_minus = model.loss(x, target)
    tensor.flat[flat_index] = original
    return (loss_plus - loss_minus) / (2.0 * h)


def naive_fd_input(model: CnnModel, x: np.ndarray, target, h: float = 1e-4) -> np.ndarray:
    """Central difference of the loss with respect to each input feature."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(len(x)):
        bumped = x.copy()
        bumped[i] = x[i] + h
        loss_plus = model.loss(bumped, target)
        bumped[i] = x[i] - h
        loss_minus = model.loss(bumped, target)
        grad[i] = (loss_plus - loss_minus) / (2.0 * h)
    return grad


def max_relative_error(
    analytic: list[dict | None], numeric: list[dict | None], floor: float = 1e-6
) -> float:
    """Worst relative disagreement across every parameter of every block."""
    worst = 0.0
    for a_block, n_block in zip(analytic, numeric):
        if a_block is None:
            continue
        for name in a_block:
            a, n = a_block[name], n_block[name]
            err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(err.max()))
    return worst
