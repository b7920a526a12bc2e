"""Central-difference gradient checks for ops and whole models.

Relative error is measured on whole gradient arrays:
``||analytic - numeric|| / max(||analytic||, ||numeric||, floor)``. The floor
keeps gradients that are exactly zero by construction (a bias feeding a batch
norm) from turning round-off into a large ratio.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def rel_error(a, b, floor: float = 0.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_op(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], seed: int = 0,
             eps: float = 1e-6) -> float:
    """Max relative error over all inputs of ``fn`` for the scalar loss sum(w * fn(...))."""
    with T.precision("float64"):
        tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        out = fn(*tensors)
        w = Tensor(np.random.default_rng([seed, 0x5eed]).normal(size=out.shape))

        def loss() -> float:
            with T.no_grad():
                return float((fn(*tensors) * w).sum().data)

        (out * w).sum().backward()
        worst = 0.0
        for t in tensors:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            worst = max(worst, rel_error(analytic, numeric_grad(loss, t.data, eps)))
        return worst


def check_model(model, loss_fn: Callable[[], Tensor], seed: int = 0, eps: float = 1e-6,
                group_depth: int | None = None, reseed: int = 1234, floor: float = 1e-5,
                kink_tol: float = 1e-3, min_eps: float = 1e-8) -> dict[str, float]:
    """Directional-derivative check on a built model (must be in 64-bit mode).

    ``loss_fn`` runs a forward pass and returns a scalar. Stochastic layers are
    reseeded before every evaluation so dropout masks repeat. Compares
    grad . d with [L(theta + eps d) - L(theta - eps d)] / 2 eps for one random
    unit direction over all parameters, plus one direction per parameter tensor
    (``group_depth=None``) or per group of tensors sharing the first
    ``group_depth`` name components.
    Unit directions keep the step small; when the two one-sided slopes still
    disagree by more than ``kink_tol`` (relative) the probe straddles a switching
    point of max pooling or relu and the step is cut tenfold, down to ``min_eps``.
    """
    rng = np.random.default_rng(seed)
    named = model.named_parameters()

    def run(record: bool) -> float:
        model.reseed(reseed)
        if record:
            loss = loss_fn()
            loss.backward()
            return float(loss.data)
        with T.no_grad():
            return float(loss_fn().data)

    model.zero_grad()
    run(True)
    grads = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in named}
    base = run(False)
    raw = {n: rng.normal(size=p.shape) for n, p in named}
    dirs = dict(raw)

    def directional(subset) -> float:
        norm = np.sqrt(sum(float(np.sum(raw[n] ** 2)) for n in subset))
        dirs.update({n: raw[n] / norm for n in subset})
        analytic = sum(float(np.sum(grads[n] * dirs[n])) for n in subset)
        params = dict(named)
        saved = {n: params[n].data.copy() for n in subset}

        def at(step: float) -> float:
            for n in subset:
                params[n].data[...] = saved[n] + step * dirs[n]
            return run(False)

        step = eps
        while True:
            hi, lo = at(step), at(-step)
            central = (hi - lo) / (2 * step)
            # one-sided slopes disagree when a max/relu switch lies inside the
            # interval; shrink the step until the probe stays on one smooth piece
            kink = abs((hi - base) - (base - lo)) / (2 * step) > kink_tol * max(abs(central), floor)
            if not kink or step <= min_eps:
                break
            step /= 10
        for n in subset:
            params[n].data[...] = saved[n]
        return rel_error(analytic, central, floor)

    out = {"*": directional([n for n, _ in named])}
    groups: dict[str, list[str]] = {}
    for n, _ in named:
        key = n if group_depth is None else ".".join(n.split(".")[:group_depth])
        groups.setdefault(key, []).append(n)
    for key, members in groups.items():
        out[key] = directional(members)
    return out
