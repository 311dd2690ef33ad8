"""Candidate input-space generation.

Effective ranges come from observed data, widened by an expansion factor
(half per side) and clipped to optional constraints. Candidate matrices
are built either by stacking per-dimension linspaces (linear method,
optionally with a seeded per-column shuffle so the set covers more than
the diagonal) or by a full Cartesian product (combination method) with an
optional seeded subsample cap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

COMBINATION_SAFETY_BOUND = 10**8


class InfeasibleParameterError(ValueError):
    pass


@dataclass
class ParameterSpec:
    name: str
    kind: str = "continuous"  # continuous | discrete
    lower: Optional[float] = None
    upper: Optional[float] = None
    add_values: Sequence[float] = ()
    discard_values: Sequence[float] = ()
    precision: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValueError(f"{self.name}: constraint lower > upper")
        if self.precision is not None and self.precision < 0:
            raise ValueError(f"{self.name}: precision must be >= 0")
        for v in self.add_values:
            if not np.isfinite(v):
                raise ValueError(f"{self.name}: add value {v} is not finite")


@dataclass(frozen=True)
class CandidateSet:
    names: tuple[str, ...]
    points: np.ndarray  # (n_star, d), read-only
    generation: str  # linear | combination
    seed: int

    def __post_init__(self):
        self.points.setflags(write=False)

    def __len__(self):
        return self.points.shape[0]

    def row(self, i: int) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.points[i])}


def expand_ranges(ranges: dict, specs: Sequence[ParameterSpec], factor: float) -> dict:
    """Widen observed ranges/value-sets and apply constraints.

    Continuous (lo, hi) grows by factor*span in total (half per side), then
    gets clipped to the spec's constraint. Discrete value sets gain the
    spec's add_values and lose its discard_values.
    """
    if factor < 0:
        raise ValueError("expansion factor must be >= 0")
    out = {}
    for spec in specs:
        observed = ranges[spec.name]
        if spec.kind == "continuous":
            lo, hi = observed
            span = hi - lo
            lo -= factor * span / 2.0
            hi += factor * span / 2.0
            if spec.lower is not None:
                lo = max(lo, spec.lower)
            if spec.upper is not None:
                hi = min(hi, spec.upper)
            if lo > hi:
                raise InfeasibleParameterError(f"infeasible parameter {spec.name}")
            out[spec.name] = (lo, hi)
        else:
            values = set(observed) | set(spec.add_values)
            values -= set(spec.discard_values)
            if not values:
                raise InfeasibleParameterError(f"infeasible parameter {spec.name}")
            out[spec.name] = sorted(values)
    return out


def _round_column(col: np.ndarray, spec: ParameterSpec) -> np.ndarray:
    if spec.precision is None:
        return col
    return np.round(col, spec.precision)  # round-half-to-even


def _column_values(effective, spec: ParameterSpec, n: int) -> np.ndarray:
    if spec.kind == "continuous":
        lo, hi = effective
        col = np.linspace(lo, hi, n)
    else:
        values = np.asarray(effective, dtype=float)
        reps = int(np.ceil(n / len(values)))
        col = np.tile(values, reps)[:n]
    return _round_column(col, spec)


def generate_linear(
    effective: dict,
    specs: Sequence[ParameterSpec],
    n_star: int = 10000,
    seed: int = 0,
    shuffle: bool = True,
) -> CandidateSet:
    """Stack per-dimension arrays of length n_star into a candidate matrix.

    With shuffle (default) each column is independently permuted with a
    seed-derived permutation; shuffle=False keeps the strict stacked
    linspace, which sweeps only the diagonal of the box.
    """
    if n_star < 2:
        raise ValueError("n_star must be >= 2")
    rng = np.random.default_rng(seed)
    cols = []
    for spec in specs:
        col = _column_values(effective[spec.name], spec, n_star)
        if shuffle:
            col = col[rng.permutation(n_star)]
        cols.append(col)
    points = np.column_stack(cols)
    return CandidateSet(
        names=tuple(s.name for s in specs), points=points, generation="linear", seed=seed
    )


def generate_combination(
    effective: dict,
    specs: Sequence[ParameterSpec],
    steps: dict[str, int],
    cap: Optional[int] = None,
    seed: int = 0,
) -> CandidateSet:
    """Cartesian product of per-dimension grids, optionally capped.

    If cap is set and the product exceeds it, a uniform seeded subsample
    of cap rows is drawn (without replacement, original row order kept).
    """
    grids = []
    total = 1
    for spec in specs:
        n = steps[spec.name] if spec.kind == "continuous" else len(effective[spec.name])
        if spec.kind == "continuous":
            if n < 1:
                raise ValueError(f"{spec.name}: steps must be >= 1")
            lo, hi = effective[spec.name]
            grid = np.array([0.5 * (lo + hi)]) if n == 1 else np.linspace(lo, hi, n)
        else:
            grid = np.asarray(effective[spec.name], dtype=float)
        grids.append(grid)
        total *= len(grid)
    if cap is None and total > COMBINATION_SAFETY_BOUND:
        raise ValueError(
            f"combination product {total} exceeds safety bound "
            f"{COMBINATION_SAFETY_BOUND}; set a cap"
        )
    if cap is not None and total > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(total, size=cap, replace=False))
        rows = []
        keep_set = iter(keep)
        want = next(keep_set, None)
        for i, combo in enumerate(itertools.product(*grids)):
            if want is None:
                break
            if i == want:
                rows.append(combo)
                want = next(keep_set, None)
        points = np.array(rows, dtype=float)
    else:
        points = np.array(list(itertools.product(*grids)), dtype=float)
    for j, spec in enumerate(specs):
        points[:, j] = _round_column(points[:, j], spec)
    return CandidateSet(
        names=tuple(s.name for s in specs),
        points=points,
        generation="combination",
        seed=seed,
    )
