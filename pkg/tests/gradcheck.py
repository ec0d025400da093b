"""Central finite-difference gradient oracle, independent of the tape.

The oracle only ever calls the forward function: it perturbs raw
parameter arrays in place and re-evaluates the scalar loss, so it
cannot inherit mistakes from backward closures.
"""

from __future__ import annotations

import numpy as np

from coins.tensor import Tensor, backward


def fd_grad_entry(loss_fn, arr: np.ndarray, index: tuple[int, ...], h: float = 1e-5) -> float:
    """Central difference d loss / d arr[index]."""
    orig = arr[index]
    arr[index] = orig + h
    up = loss_fn()
    arr[index] = orig - h
    down = loss_fn()
    arr[index] = orig
    return (up - down) / (2.0 * h)


def rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b))
    if denom < 1e-6:
        return 0.0
    return abs(a - b) / denom


def check_tensor_grad(
    build_loss,
    leaves: dict[str, Tensor],
    rng: np.random.Generator,
    rel_tol: float = 1e-4,
    h: float = 1e-5,
    max_entries_per_leaf: int | None = None,
) -> float:
    """Compare backward() grads against finite differences on every leaf.

    ``build_loss`` recomputes the scalar loss Tensor from the current
    leaf data. Checks every entry unless ``max_entries_per_leaf`` caps a
    random (seeded) sample. Returns the worst relative error seen.
    """
    for t in leaves.values():
        t.grad = None
    loss = build_loss()
    backward(loss)

    def loss_value() -> float:
        return float(build_loss().data)

    worst = 0.0
    for name, leaf in leaves.items():
        assert leaf.grad is not None, f"no gradient reached leaf {name}"
        assert leaf.grad.shape == leaf.data.shape
        entries = list(np.ndindex(leaf.data.shape))
        if max_entries_per_leaf is not None and len(entries) > max_entries_per_leaf:
            chosen = rng.choice(len(entries), size=max_entries_per_leaf, replace=False)
            entries = [entries[int(i)] for i in chosen]
        for idx in entries:
            fd = fd_grad_entry(loss_value, leaf.data, idx, h=h)
            an = float(leaf.grad[idx])
            err = rel_err(an, fd)
            assert err <= rel_tol, (
                f"gradient mismatch at {name}{list(idx)}: analytic {an:.8g}, "
                f"finite-diff {fd:.8g}, rel err {err:.3g} > {rel_tol}"
            )
            worst = max(worst, err)
    return worst
