"""Central finite-difference checks of kernel gradients."""

import time

import numpy as np

from . import numkernel as nk
from .losses import LossKind, loss_total, one_hot_targets
from .model import ArchVariant, ModelDims, forward, init_model

STEP = 1e-4
TOLERANCE = 1e-4
# below this magnitude the error is measured absolutely
REL_FLOOR = 1e-6


def numeric_jacobian(f, tensors, step=STEP):
    """Central differences of vector ``f()`` (length M): one ``[M, *shape]`` array per tensor."""
    out = []
    with nk.no_grad():
        for t in tensors:
            flat = t.data.reshape(-1)
            cols = []
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = np.array(f().data, dtype=np.float64).reshape(-1)
                flat[i] = orig - step
                fm = np.array(f().data, dtype=np.float64).reshape(-1)
                flat[i] = orig
                cols.append((fp - fm) / (2 * step))
            jac = np.stack(cols, axis=1) if cols else np.zeros((np.size(f().data), 0))
            out.append(jac.reshape((-1,) + t.data.shape))
    return out


def numeric_grad(f, tensors, step=STEP):
    """Central differences of scalar ``f()`` with respect to each tensor's data, in place."""
    return [j[0] for j in numeric_jacobian(f, tensors, step)]


def analytic_grad(f, tensors):
    for t in tensors:
        t.grad = None
    f().backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def rel_error(a, n, floor=REL_FLOOR):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised."""
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def check(f, tensors, step=STEP):
    """Max relative error between analytic and numeric gradients over ``tensors``."""
    an = analytic_grad(f, tensors)
    nu = numeric_grad(f, tensors, step)
    return max(rel_error(a, n) for a, n in zip(an, nu))


def model_gradcheck(seed=0, dims=None, arch=ArchVariant.MULTISTAGE, T=4, batch=2, kinds=None):
    """Check d(loss_total)/d(params) through a full forward for each loss kind.

    Returns ``{kind_value: max_rel_error}`` and the elapsed seconds.
    """
    dims = dims or ModelDims(d_ctx=4, d_act=4, n_classes=3, hidden=6)
    rng = np.random.default_rng(seed)
    m = init_model(dims, arch, seed=seed)
    # move every parameter off its init so no gate sits at a symmetric point
    for p in m.parameters():
        p.data = p.data + rng.uniform(-0.5, 0.5, size=p.data.shape)
    ctx = rng.uniform(-2, 2, size=(T, batch, dims.d_ctx))
    act = rng.uniform(-2, 2, size=(T, batch, dims.d_act))
    flow = rng.uniform(-2, 2, size=(T, batch, dims.d_flow)) if dims.d_flow else None
    y = one_hot_targets(rng.integers(0, dims.n_classes, size=batch), T, dims.n_classes)
    params = m.parameters()
    results = {}
    start = time.perf_counter()
    kinds = [LossKind.parse(k) for k in (kinds or list(LossKind))]

    def losses():
        pc, pa = forward(m, ctx, act, flow)
        return nk.stack([loss_total(pc, pa, y, k) for k in kinds])

    # one perturbed forward pass serves every loss kind
    numeric = numeric_jacobian(losses, params)
    for j, kind in enumerate(kinds):
        analytic = analytic_grad(lambda: losses()[j], params)
        results[kind.value] = max(rel_error(a, n[j]) for a, n in zip(analytic, numeric))
    return results, time.perf_counter() - start
