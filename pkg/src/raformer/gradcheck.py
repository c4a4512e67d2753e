"""Central finite-difference comparison against recorded analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, mul


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function at every entry of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((num / den).max())


def check_op(build, shapes, rng: np.random.Generator, points: int = 20, h: float = 1e-5) -> float:
    """Max relative error of an op's gradients over random input points.

    ``build`` maps a list of Tensors (one per entry in ``shapes``) to a
    Tensor. The scalar loss is a fixed random weighting of that output,
    which keeps the check non-degenerate for ops with constant sums
    (softmax rows, normalized rows).
    """
    worst = 0.0
    for _ in range(points):
        arrays = [rng.standard_normal(s) for s in shapes]
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        with Tape() as tape:
            out = build(tensors)
            weights = rng.standard_normal(out.shape)
            loss = mul(out, weights).sum()
        tape.backward(loss)
        for j, t in enumerate(tensors):

            def scalar(x, j=j):
                probe = [Tensor(a.copy()) for a in arrays]
                probe[j] = Tensor(x)
                return float(mul(build(probe), weights).sum().data)

            numeric = finite_difference(scalar, arrays[j].copy(), h=h)
            analytic = t.grad if t.grad is not None else np.zeros_like(arrays[j])
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_params(forward, params: dict[str, Tensor], rng: np.random.Generator,
                 points: int = 20, h: float = 1e-5) -> float:
    """Spot-check a model loss against finite differences.

    Probes ``points`` randomly chosen scalar parameter entries across all
    tensors in ``params``. ``forward`` takes no arguments and returns the
    scalar loss Tensor for a fixed input.
    """
    with Tape() as tape:
        loss = forward()
    tape.backward(loss)
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(points, total), replace=False)
    offsets = np.cumsum(sizes)
    worst = 0.0
    for pick in picks:
        owner = int(np.searchsorted(offsets, pick, side="right"))
        local = int(pick - (offsets[owner - 1] if owner else 0))
        tensor = params[names[owner]]
        flat = tensor.data.reshape(-1)
        keep = flat[local]
        flat[local] = keep + h
        fp = float(forward().data)
        flat[local] = keep - h
        fm = float(forward().data)
        flat[local] = keep
        numeric = (fp - fm) / (2.0 * h)
        analytic = 0.0 if tensor.grad is None else float(tensor.grad.reshape(-1)[local])
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
