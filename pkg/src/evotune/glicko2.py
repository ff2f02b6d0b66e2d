"""Glicko-2 ratings and the fixed-budget trajectory tournament.

Algorithms are compared pairwise: each game samples a random evaluation
budget, looks up both algorithms' best-so-far precision at that budget on a
randomly chosen run, and awards the win to the strictly smaller precision
(ties are draws).  One Glicko-2 rating period is then applied over all games.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

SCALE = 173.7178
_CONVERGENCE_TOL = 1e-6
_MAX_ITERATIONS = 100


class NonConvergence(RuntimeError):
    """The volatility root-find failed; indicates a bug, not a data condition."""


class MissingTrajectory(ValueError):
    """An algorithm lacks runs for a function it is being rated on."""


@dataclass(frozen=True)
class RatingState:
    rating: float = 1500.0
    deviation: float = 350.0
    volatility: float = 0.06
    tau: float = 0.5

    def __post_init__(self):
        if self.deviation <= 0 or self.volatility <= 0:
            raise ValueError("deviation and volatility must be positive")


@dataclass(frozen=True)
class MatchOutcome:
    function_id: object
    budget_sampled: int
    player_a: str
    player_b: str
    score_a: float  # 1, 0.5 or 0


@dataclass
class TournamentRow:
    algorithm: str
    rating: float
    deviation: float
    volatility: float
    games: int
    wins: int
    draws: int
    losses: int


@dataclass
class TournamentResult:
    rows: List[TournamentRow]
    outcomes: List[MatchOutcome] = field(default_factory=list)


def _g(phi: float) -> float:
    return 1.0 / math.sqrt(1.0 + 3.0 * phi * phi / math.pi**2)


def _expected(mu: float, mu_j: float, phi_j: float) -> float:
    return 1.0 / (1.0 + math.exp(-_g(phi_j) * (mu - mu_j)))


def glicko2_update(
    state: RatingState, results: Sequence[Tuple[float, float, float]]
) -> RatingState:
    """One rating-period update from ``(opponent rating, opponent RD, score)``
    triples.  An empty result list applies the no-play rule: the rating and
    volatility stand, the deviation inflates."""
    mu = (state.rating - 1500.0) / SCALE
    phi = state.deviation / SCALE
    sigma = state.volatility

    if not results:
        phi_star = math.sqrt(phi * phi + sigma * sigma)
        return replace(state, deviation=phi_star * SCALE)

    g_terms = []
    e_terms = []
    scores = []
    for opp_rating, opp_rd, score in results:
        mu_j = (opp_rating - 1500.0) / SCALE
        phi_j = opp_rd / SCALE
        g_terms.append(_g(phi_j))
        e_terms.append(_expected(mu, mu_j, phi_j))
        scores.append(score)

    v = 1.0 / sum(g * g * e * (1.0 - e) for g, e in zip(g_terms, e_terms))
    improvement_sum = sum(g * (s - e) for g, e, s in zip(g_terms, e_terms, scores))
    delta = v * improvement_sum

    a = math.log(sigma * sigma)
    tau = state.tau
    phi2 = phi * phi

    def f(x: float) -> float:
        ex = math.exp(x)
        num = ex * (delta * delta - phi2 - v - ex)
        den = 2.0 * (phi2 + v + ex) ** 2
        return num / den - (x - a) / (tau * tau)

    big_a = a
    if delta * delta > phi2 + v:
        big_b = math.log(delta * delta - phi2 - v)
    else:
        k = 1
        while f(a - k * tau) < 0.0:
            k += 1
            if k > _MAX_ITERATIONS:
                raise NonConvergence("failed to bracket the volatility root")
        big_b = a - k * tau

    f_a, f_b = f(big_a), f(big_b)
    iterations = 0
    while abs(big_b - big_a) > _CONVERGENCE_TOL:
        iterations += 1
        if iterations > _MAX_ITERATIONS:
            raise NonConvergence("volatility iteration did not converge")
        big_c = big_a + (big_a - big_b) * f_a / (f_b - f_a)
        f_c = f(big_c)
        if f_c * f_b <= 0.0:
            big_a, f_a = big_b, f_b
        else:
            f_a = f_a / 2.0
        big_b, f_b = big_c, f_c

    sigma_prime = math.exp(big_a / 2.0)
    phi_star = math.sqrt(phi2 + sigma_prime * sigma_prime)
    phi_prime = 1.0 / math.sqrt(1.0 / (phi_star * phi_star) + 1.0 / v)
    mu_prime = mu + phi_prime * phi_prime * improvement_sum

    return RatingState(
        rating=1500.0 + SCALE * mu_prime,
        deviation=SCALE * phi_prime,
        volatility=sigma_prime,
        tau=tau,
    )


def precision_at(trajectory: Sequence[float], budget: int) -> float:
    """Best-so-far precision after ``budget`` evaluations; runs shorter than
    the budget hold their final value."""
    if len(trajectory) == 0:
        raise MissingTrajectory("empty trajectory")
    index = min(budget, len(trajectory)) - 1
    return float(trajectory[index])


def tournament(
    trajectories: Mapping[str, Mapping[object, Sequence[Sequence[float]]]],
    games_per_function: int = 200,
    rng: np.random.Generator | None = None,
    max_budget: int = 10_000,
    initial: RatingState | None = None,
    collect_outcomes: bool = False,
) -> TournamentResult:
    """Rate algorithms from pairwise fixed-budget games over their runs.

    ``trajectories`` maps algorithm id -> function id -> list of runs, each
    run being a best-so-far precision series.  Per function and game, every
    unordered pair plays once; ratings are updated in a single period.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    base = initial if initial is not None else RatingState()

    algorithms = list(trajectories)
    if len(algorithms) < 2:
        raise ValueError("a tournament needs at least two algorithms")
    functions = sorted({f for per_algo in trajectories.values() for f in per_algo}, key=repr)
    for algo in algorithms:
        for fn in functions:
            runs = trajectories[algo].get(fn)
            if not runs or any(len(t) == 0 for t in runs):
                raise MissingTrajectory(f"algorithm {algo!r} has no runs for function {fn!r}")

    pairs = [
        (algorithms[i], algorithms[j])
        for i in range(len(algorithms))
        for j in range(i + 1, len(algorithms))
    ]
    results: Dict[str, List[Tuple[float, float, float]]] = {a: [] for a in algorithms}
    tally = {a: [0, 0, 0] for a in algorithms}  # wins, draws, losses
    outcomes: List[MatchOutcome] = []

    for fn in functions:
        for _ in range(games_per_function):
            for algo_a, algo_b in pairs:
                budget = int(rng.integers(1, max_budget + 1))
                runs_a = trajectories[algo_a][fn]
                runs_b = trajectories[algo_b][fn]
                run_a = runs_a[int(rng.integers(0, len(runs_a)))]
                run_b = runs_b[int(rng.integers(0, len(runs_b)))]
                pa = precision_at(run_a, budget)
                pb = precision_at(run_b, budget)
                if pa < pb:
                    score_a = 1.0
                elif pa > pb:
                    score_a = 0.0
                else:
                    score_a = 0.5
                results[algo_a].append((base.rating, base.deviation, score_a))
                results[algo_b].append((base.rating, base.deviation, 1.0 - score_a))
                if score_a == 1.0:
                    tally[algo_a][0] += 1
                    tally[algo_b][2] += 1
                elif score_a == 0.0:
                    tally[algo_a][2] += 1
                    tally[algo_b][0] += 1
                else:
                    tally[algo_a][1] += 1
                    tally[algo_b][1] += 1
                if collect_outcomes:
                    outcomes.append(MatchOutcome(fn, budget, algo_a, algo_b, score_a))

    rows = []
    for algo in algorithms:
        updated = glicko2_update(base, results[algo])
        wins, draws, losses = tally[algo]
        rows.append(
            TournamentRow(
                algorithm=algo,
                rating=updated.rating,
                deviation=updated.deviation,
                volatility=updated.volatility,
                games=len(results[algo]),
                wins=wins,
                draws=draws,
                losses=losses,
            )
        )
    rows.sort(key=lambda row: (-row.rating, row.algorithm))
    return TournamentResult(rows=rows, outcomes=outcomes)


def format_table(rows: Sequence[TournamentRow]) -> str:
    """Aligned text table: ID, Rating, Deviation, Volatility, Games, W/D/L."""
    header = ("ID", "Rating", "Deviation", "Volatility", "Games", "Win", "Draw", "Loss")
    body = [
        (
            row.algorithm,
            f"{row.rating:.0f}",
            f"{row.deviation:.1f}",
            f"{row.volatility:.4f}",
            str(row.games),
            str(row.wins),
            str(row.draws),
            str(row.losses),
        )
        for row in rows
    ]
    widths = [max(len(header[c]), *(len(r[c]) for r in body)) for c in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)) for r in body]
    return "\n".join(lines)
