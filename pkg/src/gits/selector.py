"""Budgeted start-index selection: joint greedy objective and baselines.

The joint objective over a selection S is

    F(S) = sum_{k in S} s_k + lambda_cov * F_cov(S) + c_win * F_win(S)

with s_k >= 0 pointwise scores and the two facility-location coverage terms
from :mod:`gits.temporal_coverage`. The score term is modular and the
coverage terms are monotone submodular, so greedy selection with exact
incremental marginal gains carries the usual (1 - 1/e) guarantee.

All samplers are deterministic; ties always break toward the lowest
candidate index. Every sampler returns a :class:`SelectionResult`. For the
greedy family, ``gains`` are the per-step marginal gains and ``objective``
is F(S) recomputed from scratch. ``sample_uniform`` has no objective
(stored as 0.0, empty gains); ``sample_grad_match`` stores the final
gradient-matching residual in ``objective`` (lower is better) and per-step
residual reductions in ``gains``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .pde_data import TrajectoryDataset
from .pilot_scoring import CandidateScores, CandidateSet, candidate_gradients
from .surrogate import SurrogateParams
from .temporal_coverage import (
    CoverageConfig,
    build_windows,
    coverage_values,
    kernel_matrix_global,
    kernel_matrix_window,
)

SAMPLERS = (
    "gits",
    "uniform",
    "loss_only",
    "coverage_only",
    "grad_only",
    "loss_div",
    "grad_match",
)


@dataclass(frozen=True)
class ObjectiveConfig:
    coverage: CoverageConfig
    lambda_cov: float = 1.0
    c_win: float = 0.5
    normalize_scores: bool = False  # optional rescale of s_k by max_k s_k; off by default

    def __post_init__(self):
        if self.lambda_cov < 0.0 or self.c_win < 0.0:
            raise ValueError("coverage weights must be non-negative")


@dataclass(eq=False)
class SelectionResult:
    selected: list[int]
    gains: list[float]
    objective: float
    sampler: str
    budget: int
    wall_time: float = 0.0


def budget_from_ratio(ratio: float, n_candidates: int) -> int:
    """K = max(1, round(ratio * |C|))."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    return max(1, min(n_candidates, round(ratio * n_candidates)))


def _score_vector(scores, candidates: CandidateSet) -> np.ndarray:
    if scores is None:
        return np.zeros(candidates.size)
    if isinstance(scores, CandidateScores):
        if not np.array_equal(scores.indices, candidates.indices):
            raise ValueError("scores are not aligned to the candidate set")
        return scores.scores.astype(np.float64)
    vec = np.asarray(scores, dtype=np.float64)
    if vec.shape != (candidates.size,):
        raise ValueError("score vector length does not match the candidate set")
    return vec


def _check_budget(budget: int, n: int):
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if budget > n:
        raise ValueError(f"budget {budget} exceeds candidate count {n}")


def greedy_select(
    scores,
    candidates: CandidateSet,
    obj: ObjectiveConfig,
    budget: int,
    label: str = "gits",
) -> SelectionResult:
    """Greedy maximization of the joint objective under |S| = budget.

    ``scores`` may be a CandidateScores, a raw vector, or None (zero scores).
    Each step picks argmax of the incremental marginal gain

        gain(k | S) = s_k + lambda_cov * sum_i (max(m_i, S_ik) - m_i)
                          + c_win      * sum_m (max(u_m, R_mk) - u_m)

    over unselected k, breaking ties toward the lowest candidate index.
    """
    t0 = time.perf_counter()
    _check_budget(budget, candidates.size)
    s = _score_vector(scores, candidates)
    if obj.normalize_scores and s.max() > 0.0:
        s = s / s.max()

    windows = build_windows(candidates, obj.coverage)
    use_cov = obj.lambda_cov > 0.0
    use_win = obj.c_win > 0.0
    s_mat = kernel_matrix_global(candidates, obj.coverage.tau) if use_cov else None
    r_mat = kernel_matrix_window(candidates, windows, obj.coverage.tau_w) if use_win else None

    n = candidates.size
    m = np.zeros(n)
    u = np.zeros(windows.count)
    available = np.ones(n, dtype=bool)
    picks: list[int] = []
    gains: list[float] = []

    for _ in range(budget):
        gain = s.copy()
        if use_cov:
            gain += obj.lambda_cov * np.maximum(s_mat - m[:, None], 0.0).sum(axis=0)
        if use_win:
            gain += obj.c_win * np.maximum(r_mat - u[:, None], 0.0).sum(axis=0)
        gain[~available] = -np.inf
        pos = int(np.argmax(gain))  # first occurrence = lowest candidate index
        picks.append(pos)
        gains.append(float(gain[pos]))
        available[pos] = False
        if use_cov:
            m = np.maximum(m, s_mat[:, pos])
        if use_win:
            u = np.maximum(u, r_mat[:, pos])

    selected = [int(candidates.indices[p]) for p in picks]
    f_cov, f_win = coverage_values(selected, candidates, windows, obj.coverage)
    objective = float(s[picks].sum() + obj.lambda_cov * f_cov + obj.c_win * f_win)
    return SelectionResult(
        selected=selected,
        gains=gains,
        objective=objective,
        sampler=label,
        budget=budget,
        wall_time=time.perf_counter() - t0,
    )


def _top_k(scores: CandidateScores, budget: int, label: str) -> SelectionResult:
    t0 = time.perf_counter()
    indices = scores.indices
    s = scores.scores
    _check_budget(budget, len(indices))
    order = np.lexsort((indices, -s))  # descending score, then lowest index
    picks = order[:budget]
    selected = [int(indices[p]) for p in picks]
    gains = [float(s[p]) for p in picks]
    return SelectionResult(
        selected=selected,
        gains=gains,
        objective=float(s[picks].sum()),
        sampler=label,
        budget=budget,
        wall_time=time.perf_counter() - t0,
    )


def sample_uniform(candidates: CandidateSet, budget: int, seed: int | None = None) -> SelectionResult:
    """Evenly spaced positions across the sorted candidate list.

    Deterministic; ``seed`` is accepted only for interface uniformity.
    """
    t0 = time.perf_counter()
    n = candidates.size
    _check_budget(budget, n)
    if budget == 1:
        positions = [round((n - 1) / 2)]
    else:
        positions = [round(j * (n - 1) / (budget - 1)) for j in range(budget)]
    selected = [int(candidates.indices[p]) for p in positions]
    return SelectionResult(
        selected=selected,
        gains=[],
        objective=0.0,
        sampler="uniform",
        budget=budget,
        wall_time=time.perf_counter() - t0,
    )


def sample_loss_only(loss_scores: CandidateScores, budget: int) -> SelectionResult:
    if loss_scores.kind != "rollout_loss":
        raise ValueError("loss_only expects rollout_loss scores")
    return _top_k(loss_scores, budget, "loss_only")


def sample_grad_only(grad_scores: CandidateScores, budget: int) -> SelectionResult:
    if grad_scores.kind != "grad_norm":
        raise ValueError("grad_only expects grad_norm scores")
    return _top_k(grad_scores, budget, "grad_only")


def sample_coverage_only(candidates: CandidateSet, obj: ObjectiveConfig, budget: int) -> SelectionResult:
    return greedy_select(None, candidates, obj, budget, label="coverage_only")


def sample_loss_div(
    loss_scores: CandidateScores, candidates: CandidateSet, obj: ObjectiveConfig, budget: int
) -> SelectionResult:
    if loss_scores.kind != "rollout_loss":
        raise ValueError("loss_div expects rollout_loss scores")
    return greedy_select(loss_scores, candidates, obj, budget, label="loss_div")


def sample_gits(
    grad_scores: CandidateScores, candidates: CandidateSet, obj: ObjectiveConfig, budget: int
) -> SelectionResult:
    if grad_scores.kind != "grad_norm":
        raise ValueError("gits expects grad_norm scores")
    return greedy_select(grad_scores, candidates, obj, budget, label="gits")


def grad_match_from_gradients(
    grads: np.ndarray, candidates: CandidateSet, budget: int
) -> SelectionResult:
    """Greedy gradient matching given the per-candidate gradient matrix."""
    t0 = time.perf_counter()
    n = candidates.size
    _check_budget(budget, n)
    if grads.shape[0] != n:
        raise ValueError("gradient matrix row count does not match the candidate set")
    g_bar = grads.mean(axis=0)
    chosen = np.zeros(n, dtype=bool)
    running_sum = np.zeros(grads.shape[1])
    residual = float(np.linalg.norm(g_bar))
    picks: list[int] = []
    gains: list[float] = []
    for step in range(budget):
        trial = (running_sum[None, :] + grads) / (step + 1)
        dist = np.linalg.norm(g_bar[None, :] - trial, axis=1)
        dist[chosen] = np.inf
        pos = int(np.argmin(dist))  # first occurrence = lowest candidate index
        picks.append(pos)
        gains.append(residual - float(dist[pos]))
        residual = float(dist[pos])
        chosen[pos] = True
        running_sum = running_sum + grads[pos]
    return SelectionResult(
        selected=[int(candidates.indices[p]) for p in picks],
        gains=gains,
        objective=residual,
        sampler="grad_match",
        budget=budget,
        wall_time=time.perf_counter() - t0,
    )


def sample_grad_match(
    pilot: SurrogateParams,
    candidates: CandidateSet,
    ds: TrajectoryDataset,
    horizon: int,
    budget: int,
    batch_traj: int = 32,
    seed: int = 0,
) -> SelectionResult:
    """Greedily match the mean full-candidate gradient with a K-subset mean."""
    t0 = time.perf_counter()
    _, grads = candidate_gradients(pilot, candidates, ds, horizon, batch_traj, seed)
    result = grad_match_from_gradients(grads, candidates, budget)
    result.wall_time = time.perf_counter() - t0
    return result


def write_selection_json(result: SelectionResult, path, config: dict | None = None) -> None:
    payload = {
        "sampler": result.sampler,
        "K": result.budget,
        "selected": result.selected,
        "gains": result.gains,
        "objective": result.objective,
        "config": config or {},
        "wall_time": result.wall_time,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
