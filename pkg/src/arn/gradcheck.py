"""Central finite-difference checks against recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, record_branches


@dataclass
class BlockReport:
    name: str
    coords: list[tuple[int, ...]]
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    skipped: int = 0  # coordinates whose +-h probes landed on different linear pieces
    requested: int = 0  # min(n_coords, size)
    size: int = 0

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0


@dataclass
class GradCheckReport:
    blocks: list[BlockReport] = field(default_factory=list)
    rtol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    @property
    def complete(self) -> bool:
        """Every block got its requested number of kink-free coordinates."""
        return all(len(b.coords) >= b.requested for b in self.blocks)

    @property
    def ok(self) -> bool:
        return self.complete and self.max_rel_err < self.rtol

    def worst(self) -> BlockReport | None:
        return max(self.blocks, key=lambda b: b.max_rel_err, default=None)


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is (numerically) zero,
    e.g. conv biases cancelled by a following normalization, from dividing
    finite-difference noise by noise.
    """
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    n_coords: int = 20,
    h: float = 1e-5,
    rtol: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() against central differences on sampled coordinates.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of every
    tensor in ``params`` and return a scalar. Each block gets
    ``min(n_coords, size)`` distinct coordinates. A coordinate whose two
    probes take different relu/abs/max-pool branches straddles a kink, where
    the central difference is not a derivative estimate; it is counted in
    ``skipped`` and replaced by the next sampled coordinate.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    loss = loss_fn()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    report = GradCheckReport(rtol=rtol)
    for name, p in params.items():
        size = p.data.size
        order = rng.permutation(size)
        want = min(n_coords, size)
        coords, a_vals, n_vals = [], [], []
        skipped = 0
        for flat in order:
            if len(coords) == want:
                break
            c = np.unravel_index(int(flat), p.shape)
            orig = p.data[c]
            p.data[c] = orig + h
            with record_branches() as branch_p:
                fp = float(loss_fn().data)
            p.data[c] = orig - h
            with record_branches() as branch_m:
                fm = float(loss_fn().data)
            p.data[c] = orig
            if branch_p != branch_m:
                skipped += 1
                continue
            coords.append(c)
            n_vals.append((fp - fm) / (2 * h))
            a_vals.append(float(analytic[name][c]))
        a_arr, n_arr = np.array(a_vals), np.array(n_vals)
        report.blocks.append(
            BlockReport(name, coords, a_arr, n_arr, relative_error(a_arr, n_arr, floor), skipped, want, size)
        )
    for p in params.values():
        p.grad = None
    return report


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Dense central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g
