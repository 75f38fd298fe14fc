"""Central finite-difference verification of reverse-mode gradients."""

import numpy as np

from .tensor import no_grad, record_kinks


def _same_branches(a, b):
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(f, x, h=1e-5, coords=None, return_excluded=False):
    """Compare ``x.grad`` from ``f(x).backward()`` with central differences.

    ``f`` maps the tensor ``x`` (mutated in place during probing) to a scalar
    tensor. Returns ``max |ad - fd| / max(1, |fd|)`` over the probed
    coordinates. A coordinate whose ``±h`` probes change any relu mask or
    max-pool winner sits at a kink; it is skipped and, with
    ``return_excluded=True``, listed alongside the error.
    """
    x.grad = None
    with record_kinks() as base:
        y = f(x)
    y.backward()
    ad = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    worst, excluded = 0.0, []
    for i in coords:
        orig = flat[i]
        with no_grad():
            flat[i] = orig + h
            with record_kinks() as up:
                fp = f(x).item()
            flat[i] = orig - h
            with record_kinks() as down:
                fm = f(x).item()
        flat[i] = orig
        if not (_same_branches(base, up) and _same_branches(base, down)):
            excluded.append(int(i))
            continue
        fd = (fp - fm) / (2.0 * h)
        err = abs(ad.reshape(-1)[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return (worst, excluded) if return_excluded else worst
