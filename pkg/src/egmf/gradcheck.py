"""Central finite-difference gradient checking.

Used throughout the test suite: autodiff gradients of any scalar-valued
computation are compared element-wise against (f(x+h) - f(x-h)) / 2h.
"""

from __future__ import annotations

import numpy as np

from egmf.tensor import Tensor


def finite_difference_grad(build_loss, leaf: Tensor, indices, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of build_loss() w.r.t. leaf at flat indices.

    build_loss must rebuild the full forward pass from current leaf values.
    """
    flat = leaf.values.reshape(-1)
    out = np.empty(len(indices), dtype=np.float64)
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        up = build_loss().item()
        flat[i] = orig - h
        down = build_loss().item()
        flat[i] = orig
        out[n] = (up - down) / (2.0 * h)
    return out


def check_gradients(
    build_loss,
    leaves,
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    max_elements_per_leaf: int = 8,
    rng=None,
) -> float:
    """Compare autodiff gradients against central finite differences.

    Runs one backward pass, then perturbs a sample of elements per leaf
    (all of them when the leaf is small). An element passes when
    |ad - fd| < rtol * max(|ad|, |fd|) or |ad - fd| < atol (near-zero
    gradients where FD noise dominates any relative comparison).

    Returns the worst relative error seen; raises AssertionError on failure.
    """
    for leaf in leaves:
        leaf.grad = None
    loss = build_loss()
    loss.backward()
    ad_grads = []
    for leaf in leaves:
        if leaf.grad is None:
            raise AssertionError("leaf received no gradient; graph is disconnected")
        ad_grads.append(leaf.grad.reshape(-1).copy())

    worst = 0.0
    for leaf, ad in zip(leaves, ad_grads):
        n = leaf.values.size
        if n <= max_elements_per_leaf or rng is None:
            indices = list(range(min(n, max_elements_per_leaf)))
        else:
            indices = sorted({rng.randint(n) for _ in range(max_elements_per_leaf)})
        fd = finite_difference_grad(build_loss, leaf, indices, h=h)
        for j, i in enumerate(indices):
            diff = abs(ad[i] - fd[j])
            if diff < atol:
                continue
            rel = diff / max(abs(ad[i]), abs(fd[j]))
            worst = max(worst, rel)
            if rel >= rtol:
                raise AssertionError(
                    f"gradient mismatch at element {i}: autodiff={ad[i]:.10g} "
                    f"fd={fd[j]:.10g} rel_err={rel:.3g}"
                )
    return worst
