"""Quadratic variation along a partition sequence, with the
continuous/jump decomposition, the polarization matrix for several
coordinates, p-variation, and the alternative interval / uniform forms used
for cross-equivalence checks.

All level sums use the t-truncated convention

    A_n(t) = sum_i (x(t_{i+1} ^ t) - x(t_i ^ t))^2

which is defined for every t; the classical sum over t_i <= t of full
increments differs from it by two incomplete-cell terms only (an exact
algebraic identity checked in :func:`vovk_uniform_check`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convergence import ConvergenceConfig, assess
from .partitions import refine_with


def default_probe_times(seq, path=None, probe_level=6):
    """Level-``probe_level`` grid plus the path's jump times."""
    times = set(seq.level(min(probe_level, seq.top)).tolist())
    if path is not None:
        times |= set(path.jump_times)
    return np.array(sorted(times))


def _truncated_sq_sums(x, li, probe_idx):
    """A_n at probe grid indices for one scalar coordinate.

    ``x``: finest-grid values; ``li``: level-time indices into the finest
    grid; ``probe_idx``: finest-grid indices of the probe times.
    """
    lx = x[li]
    a = np.diff(lx)
    prefix = np.concatenate(([0.0], np.cumsum(a * a)))
    jstar = np.searchsorted(li, probe_idx, side="right") - 1
    boundary = (x[probe_idx] - lx[jstar]) ** 2
    return prefix[jstar] + boundary


def _jump_part(path, probe_times, i, j):
    """sum_{s <= t} dx_i(s) dx_j(s) at each probe time."""
    out = np.zeros(len(probe_times))
    for s, d in path.jumps:
        out += (d[i] * d[j]) * (probe_times >= s)
    return out


@dataclass
class QVReport:
    probe_times: np.ndarray
    levels: list
    approx: dict
    limit: np.ndarray
    continuous_part: np.ndarray
    jump_part: np.ndarray
    converged: bool
    convergence_metric: float
    scale: float
    refined: bool
    dim: int = 1

    def rows(self):
        """(level, probe_time, [i, j,] value) rows for a plot-ready table."""
        for n in self.levels:
            vals = self.approx[n]
            for k, t in enumerate(self.probe_times):
                if self.dim == 1:
                    yield (n, float(t), float(vals[k]))
                else:
                    for i in range(self.dim):
                        for j in range(self.dim):
                            yield (n, float(t), i, j, float(vals[k, i, j]))

    def to_json_dict(self):
        return {
            "probe_times": self.probe_times.tolist(),
            "levels": list(self.levels),
            "limit": self.limit.tolist(),
            "continuous_part": self.continuous_part.tolist(),
            "jump_part": self.jump_part.tolist(),
            "converged": bool(self.converged),
            "convergence_metric": self.convergence_metric,
            "scale": self.scale,
            "refined": self.refined,
            "dim": self.dim,
        }


def _prepare(path, seq):
    """Refine the sequence onto the jump times when needed."""
    if seq.num_levels < 2:
        raise ValueError("need at least two levels to talk about a limit")
    refined = False
    if path.jump_times and not seq.covers(path.jump_times):
        seq = refine_with(seq, path.jump_times)
        refined = True
    return seq, refined


def qv_along(path, seq, probe_times=None, config=None):
    """Squared-increment sums of a scalar path along every level.

    The report carries per-level values at the probe times, the top level as
    the limit estimate, the exact jump part and the continuous remainder,
    plus the shared Cauchy convergence verdict.
    """
    if path.dim != 1:
        raise ValueError("qv_along expects a scalar path; use qv_matrix for d > 1")
    seq, refined = _prepare(path, seq)
    if probe_times is None:
        probe_times = default_probe_times(seq, path)
    probe_times = np.asarray(probe_times, dtype=float)
    if np.any(np.diff(probe_times) <= 0):
        raise ValueError("probe times must be strictly increasing")
    probe_idx = path.grid_indices(probe_times)
    x = path.values[:, 0]
    approx = {}
    for n in range(seq.num_levels):
        li = path.grid_indices(seq.level(n))
        approx[n] = _truncated_sq_sums(x, li, probe_idx)
    levels = sorted(approx)
    limit = approx[levels[-1]]
    jump = _jump_part(path, probe_times, 0, 0)
    scale = max(float(np.ptp(x)) ** 2, 1e-300)
    converged, metric = assess(approx, scale, config)
    return QVReport(
        probe_times=probe_times,
        levels=levels,
        approx=approx,
        limit=limit,
        continuous_part=limit - jump,
        jump_part=jump,
        converged=converged,
        convergence_metric=metric,
        scale=scale,
        refined=refined,
        dim=1,
    )


def qv_matrix(path, seq, probe_times=None, config=None):
    """Matrix quadratic variation for d >= 2 coordinates.

    Diagonal entries are the scalar sums of each coordinate; off-diagonals
    come from the polarization of pairwise sums, which makes the matrix
    symmetric by construction.
    """
    d = path.dim
    if d < 2:
        raise ValueError("qv_matrix expects at least two coordinates")
    seq, refined = _prepare(path, seq)
    if probe_times is None:
        probe_times = default_probe_times(seq, path)
    probe_times = np.asarray(probe_times, dtype=float)
    probe_idx = path.grid_indices(probe_times)
    level_idx = [path.grid_indices(seq.level(n)) for n in range(seq.num_levels)]

    def scalar_sums(x):
        return [_truncated_sq_sums(x, li, probe_idx) for li in level_idx]

    comp = [scalar_sums(path.values[:, i]) for i in range(d)]
    nlev = seq.num_levels
    approx = {n: np.zeros((len(probe_times), d, d)) for n in range(nlev)}
    for i in range(d):
        for n in range(nlev):
            approx[n][:, i, i] = comp[i][n]
    for i in range(d):
        for j in range(i + 1, d):
            pair = scalar_sums(path.values[:, i] + path.values[:, j])
            for n in range(nlev):
                off = 0.5 * (pair[n] - comp[i][n] - comp[j][n])
                approx[n][:, i, j] = off
                approx[n][:, j, i] = off
    levels = sorted(approx)
    limit = approx[levels[-1]]
    jump = np.zeros_like(limit)
    for i in range(d):
        for j in range(d):
            jump[:, i, j] = _jump_part(path, probe_times, i, j)
    scale = max(float(np.max(np.ptp(path.values, axis=0))) ** 2, 1e-300)
    converged, metric = assess(approx, scale, config)
    return QVReport(
        probe_times=probe_times,
        levels=levels,
        approx=approx,
        limit=limit,
        continuous_part=limit - jump,
        jump_part=jump,
        converged=converged,
        convergence_metric=metric,
        scale=scale,
        refined=refined,
        dim=d,
    )


# ---------------------------------------------------------------------------
# p-variation
# ---------------------------------------------------------------------------

DP_POINT_LIMIT = 4096


def p_variation(path, p, mode="exact_dp", seq=None):
    """p-variation of a scalar path.

    ``exact_dp`` solves the sup over all subsets of sample points by an
    O(n^2) dynamic program (grids up to 4096 points); ``along_levels``
    returns the max of the level sums, a lower bound.  p < 1 is rejected:
    the sup degenerates under refinement there.
    """
    if path.dim != 1:
        raise ValueError("p_variation expects a scalar path")
    if p < 1:
        raise ValueError("p must be >= 1")
    v = path.values[:, 0]
    if mode == "exact_dp":
        n = v.size
        if n > DP_POINT_LIMIT:
            raise ValueError(
                f"exact_dp is limited to {DP_POINT_LIMIT} points, got {n}"
            )
        best = np.zeros(n)
        for j in range(1, n):
            best[j] = np.max(best[:j] + np.abs(v[j] - v[:j]) ** p)
        return float(best[-1])
    if mode == "along_levels":
        if seq is None:
            raise ValueError("along_levels mode needs a partition sequence")
        out = 0.0
        for n in range(seq.num_levels):
            lv = v[path.grid_indices(seq.level(n))]
            out = max(out, float(np.sum(np.abs(np.diff(lv)) ** p)))
        return out
    raise ValueError(f"unknown mode {mode!r}")


def level_variation_sums(path, p, seq):
    """s_p along every level; the raw material for the variation index."""
    v = path.values[:, 0]
    return [
        float(np.sum(np.abs(np.diff(v[path.grid_indices(seq.level(n))])) ** p))
        for n in range(seq.num_levels)
    ]


@dataclass
class VariationIndexReport:
    estimate: float
    diverging: dict
    table: dict
    caveat: str = "finite-resolution estimate"


def variation_index_estimate(path, p_grid, seq, growth_ratio=1.3, span=3):
    """Smallest p in the grid whose level sums stop growing.

    Divergence is declared when the top-level sum exceeds ``growth_ratio``
    times the sum ``span`` levels earlier; with a handful of levels this is a
    coarse threshold test, hence the caveat flag on the report.
    """
    p_grid = list(p_grid)
    if not p_grid:
        raise ValueError("p_grid must not be empty")
    if any(p < 1 for p in p_grid):
        raise ValueError("p values must be >= 1")
    if sorted(p_grid) != p_grid:
        raise ValueError("p_grid must be increasing")
    table = {}
    diverging = {}
    span = min(span, seq.num_levels - 1)
    for p in p_grid:
        sums = level_variation_sums(path, p, seq)
        table[p] = sums
        base = sums[-1 - span]
        diverging[p] = sums[-1] > growth_ratio * base if base > 0 else False
    finite = [p for p in p_grid if not diverging[p]]
    estimate = finite[0] if finite else math.inf
    return VariationIndexReport(estimate=estimate, diverging=diverging, table=table)


# ---------------------------------------------------------------------------
# Interval (Norvaisa) and uniform (Vovk) forms
# ---------------------------------------------------------------------------


@dataclass
class NorvaisaReport:
    intervals: list
    per_level: dict
    top_values: list
    cauchy_gaps: list
    jump_checks: list
    additivity_gaps: list

    @property
    def max_jump_gap(self):
        return max((abs(c["gap"]) for c in self.jump_checks), default=0.0)


def _interval_sq_sum(path, level, s, t):
    """s_2 over (level grid restricted to [s, t]) with both endpoints added."""
    inner = level[(level > s) & (level < t)]
    kappa = np.concatenate(([s], inner, [t]))
    vals = np.array([path.value(u)[0] for u in kappa])
    d = np.diff(vals)
    return float(np.sum(d * d))


def norvaisa_qv_check(path, seq, intervals):
    """Interval form of the squared-increment limit on a nested sequence.

    For each [s, t] the report carries the level sums and the top-level
    Cauchy gap; at each path jump the left jump of the limit candidate is
    compared with the squared path jump, and additivity across a midpoint
    split is checked at the top level.
    """
    if not seq.nested:
        raise ValueError("the interval form requires a nested sequence")
    if path.dim != 1:
        raise ValueError("norvaisa_qv_check expects a scalar path")
    per_level = {}
    top_values = []
    cauchy_gaps = []
    additivity_gaps = []
    for k, (s, t) in enumerate(intervals):
        if not 0 <= s < t <= path.T:
            raise ValueError(f"bad interval [{s}, {t}]")
        sums = [
            _interval_sq_sum(path, seq.level(n), s, t) for n in range(seq.num_levels)
        ]
        per_level[k] = sums
        top_values.append(sums[-1])
        cauchy_gaps.append(abs(sums[-1] - sums[-2]) if len(sums) > 1 else float("nan"))
        mid_idx = path.index_at((s + t) / 2.0)
        mid = float(path.times[mid_idx])
        if s < mid < t:
            top = seq.level(seq.top)
            split = (
                _interval_sq_sum(path, top, s, mid)
                + _interval_sq_sum(path, top, mid, t)
                - _interval_sq_sum(path, top, s, t)
            )
            additivity_gaps.append(split)
        else:
            additivity_gaps.append(0.0)
    jump_checks = []
    top = seq.level(seq.top)
    for tj, d in path.jumps:
        prev_idx = path.grid_indices([tj])[0] - 1
        prev = float(path.times[prev_idx])
        est = _interval_sq_sum(path, top, prev, tj)
        exact = float(d[0] * d[0])
        jump_checks.append(
            {"time": tj, "left_jump_estimate": est, "squared_jump": exact,
             "gap": est - exact, "right_jump": 0.0}
        )
    return NorvaisaReport(
        intervals=list(intervals),
        per_level=per_level,
        top_values=top_values,
        cauchy_gaps=cauchy_gaps,
        jump_checks=jump_checks,
        additivity_gaps=additivity_gaps,
    )


@dataclass
class VovkReport:
    levels: list
    sup_gaps: list
    uniform: bool
    boundary_max_gap: float
    scale: float


def vovk_uniform_check(path, seq, config=None, n_boundary_samples=8, seed=0):
    """Uniform-in-time comparison of the level sums, plus an exact check of
    the two-incomplete-cell identity linking the truncated and untruncated
    summation conventions at sampled times."""
    if not seq.nested:
        raise ValueError("the uniform form requires a nested sequence")
    if path.dim != 1:
        raise ValueError("vovk_uniform_check expects a scalar path")
    config = config or ConvergenceConfig()
    x = path.values[:, 0]
    all_idx = np.arange(path.times.size)
    per_level = []
    for n in range(seq.num_levels):
        li = path.grid_indices(seq.level(n))
        per_level.append(_truncated_sq_sums(x, li, all_idx))
    top_vals = per_level[-1]
    sup_gaps = [float(np.max(np.abs(vals - top_vals))) for vals in per_level]
    scale = max(float(np.ptp(x)) ** 2, 1e-300)
    tail = sup_gaps[-(config.window + 1):-1]
    monotone = all(b <= a for a, b in zip(tail, tail[1:]))
    uniform = monotone and (
        len(sup_gaps) < 2 or sup_gaps[-2] <= config.tol * scale
    )

    rng = np.random.default_rng(seed)
    samples = list(rng.uniform(0.0, path.T, size=n_boundary_samples))
    samples += [float(path.times[k]) for k in
                rng.integers(0, path.times.size, size=n_boundary_samples)]
    boundary_gap = 0.0
    for t in samples:
        it = path.index_at(t)
        xt = x[it]
        for n in range(seq.num_levels):
            level = seq.level(n)
            li = path.grid_indices(level)
            kbar = min(int(np.searchsorted(level, t, side="right")) - 1, level.size - 2)
            lx = x[li]
            a = np.diff(lx)
            untrunc = float(np.sum(a[: kbar + 1] ** 2))
            trunc = float(
                _truncated_sq_sums(x, li, np.array([it]))[0]
            )
            rhs = (xt - lx[kbar]) ** 2 - (lx[kbar + 1] - lx[kbar]) ** 2
            boundary_gap = max(boundary_gap, abs((trunc - untrunc) - rhs))
    return VovkReport(
        levels=list(range(seq.num_levels)),
        sup_gaps=sup_gaps,
        uniform=uniform,
        boundary_max_gap=boundary_gap,
        scale=scale,
    )
