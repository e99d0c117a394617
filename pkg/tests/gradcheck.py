"""Central finite-difference oracle, independent of the autodiff graph."""

import numpy as np

from bifold import tensor as T

EPS = 1e-5


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps the (mutated in place) array to a float."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


FLOOR = 1e-8


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """‖a − b‖ / max(‖a‖, ‖b‖, FLOOR).

    The floor keeps gradients that are exactly zero in theory (a bias feeding a
    softmax, say) from turning finite-difference noise into a relative error of 1.
    """
    denom = max(np.linalg.norm(a), np.linalg.norm(b), FLOOR)
    return float(np.linalg.norm(a - b) / denom)


def check(build, *arrays, eps: float = EPS) -> list[float]:
    """Relative error of autodiff vs finite differences for each input of ``build``.

    ``build(*tensors)`` must return a scalar Tensor.
    """
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()
    errs = []
    for t in tensors:
        def f():
            with T.no_grad():
                return build(*[T.Tensor(u.data) for u in tensors]).item()
        errs.append(rel_error(t.grad, numeric_grad(f, t.data, eps)))
    return errs


def check_params(loss_fn, params, eps: float = EPS) -> dict[int, float]:
    """Relative error per parameter for a closure ``loss_fn() -> scalar Tensor``."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def f():
        with T.no_grad():
            return loss_fn().item()

    return {i: rel_error(a, numeric_grad(f, p.data, eps)) for i, (p, a) in enumerate(zip(params, analytic))}
