"""Shapley attribution for arbitrary value functions.

Supports exact enumeration (small player counts), permutation-sampling
Monte Carlo with shared draws across several value functions, and the
sample-size adequacy check comparing the efficiency error against the
minimal gap between attributions.

Value semantics are interventional: a coalition's worth is the value
function averaged over background points with the explicand spliced in
on the coalition's features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

ValueFn = Callable[[np.ndarray], np.ndarray]  # (n, p) -> (n,)

MAX_EXACT_PLAYERS = 10
K_SEARCH_START = 100
K_SEARCH_CAP = 10**6


@dataclass(frozen=True)
class ShapleyGame:
    """A value function, the instance to explain, and background points."""

    value_fn: ValueFn
    explicand: np.ndarray
    background: np.ndarray

    def __post_init__(self) -> None:
        explicand = np.asarray(self.explicand, dtype=float).ravel()
        background = np.atleast_2d(np.asarray(self.background, dtype=float))
        object.__setattr__(self, "explicand", explicand)
        object.__setattr__(self, "background", background)
        if background.shape[0] < 1:
            raise ValueError("background must be nonempty")
        if background.shape[1] != explicand.size:
            raise ValueError("explicand and background dimensions differ")

    @property
    def n_players(self) -> int:
        return int(self.explicand.size)


@dataclass(frozen=True)
class AttributionEstimate:
    """Per-feature attributions with Monte-Carlo uncertainty and provenance."""

    phi: np.ndarray
    stderr: np.ndarray
    K: int
    seed: int | None = None
    background_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "phi": self.phi.tolist(),
            "stderr": self.stderr.tolist(),
            "K": self.K,
            "seed": self.seed,
            "background_size": self.background_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributionEstimate":
        return cls(
            phi=np.asarray(d["phi"], float),
            stderr=np.asarray(d["stderr"], float),
            K=int(d["K"]),
            seed=d.get("seed"),
            background_size=d.get("background_size"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# Monte-Carlo estimator (permutation sampling, shared draws)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McDraws:
    """Pre-drawn background indices and feature orders shared across games."""

    z_idx: np.ndarray  # (K,)
    ranks: np.ndarray  # (K, p): position of each feature in its draw's order
    seed: int | None


def sample_draws(
    n_players: int, background_size: int, K: int, rng: np.random.Generator | int | None
) -> McDraws:
    seed = rng if isinstance(rng, int) else None
    gen = np.random.default_rng(rng)
    z_idx = gen.integers(0, background_size, size=K)
    # one argsort of uniforms per draw = a uniform random permutation
    perms = np.argsort(gen.random((K, n_players)), axis=1)
    ranks = np.argsort(perms, axis=1)
    return McDraws(z_idx=z_idx, ranks=ranks, seed=seed)


def _chain_points(game: ShapleyGame, draws: McDraws) -> np.ndarray:
    """(K, p+1, p) tensor: level i splices the explicand into the first i
    positions of each draw's feature order, background elsewhere."""
    p = game.n_players
    K = draws.z_idx.size
    z = game.background[draws.z_idx]  # (K, p)
    levels = np.empty((K, p + 1, p))
    for i in range(p + 1):
        mask = draws.ranks < i  # (K, p)
        levels[:, i, :] = np.where(mask, game.explicand, z)
    return levels


def _diffs_from_chain(values: np.ndarray, draws: McDraws) -> np.ndarray:
    """Per-draw, per-feature marginal contributions from chain values (K, p+1)."""
    d = np.diff(values, axis=1)  # (K, p): contribution of the feature at each position
    return np.take_along_axis(d, draws.ranks, axis=1)  # reorder to feature index


def _estimate_from_diffs(diffs: np.ndarray, draws: McDraws, background_size: int) -> AttributionEstimate:
    K = diffs.shape[0]
    phi = diffs.mean(axis=0)
    if K > 1:
        stderr = diffs.std(axis=0, ddof=1) / math.sqrt(K)
    else:
        stderr = np.zeros_like(phi)
    return AttributionEstimate(phi=phi, stderr=stderr, K=K, seed=draws.seed, background_size=background_size)


def estimate_shapley(
    game: ShapleyGame, K: int, rng: np.random.Generator | int | None
) -> AttributionEstimate:
    """Permutation-sampling Monte-Carlo Shapley estimate with K draws."""
    if K < 1:
        raise ValueError("K must be at least 1")
    draws = sample_draws(game.n_players, game.background.shape[0], K, rng)
    diffs = estimate_diffs(game, draws)
    return _estimate_from_diffs(diffs, draws, game.background.shape[0])


def estimate_diffs(game: ShapleyGame, draws: McDraws) -> np.ndarray:
    """(K, p) per-draw marginal contributions under shared draws."""
    p = game.n_players
    K = draws.z_idx.size
    chain = _chain_points(game, draws).reshape(K * (p + 1), p)
    values = np.asarray(game.value_fn(chain), dtype=float).reshape(K, p + 1)
    return _diffs_from_chain(values, draws)


def estimate_shapley_shared(
    games: Mapping[str, ShapleyGame],
    K: int,
    rng: np.random.Generator | int | None,
    return_diffs: bool = False,
):
    """Estimate several games over one shared (instance, order) stream.

    All games must share the explicand and background; sharing the draws
    makes linear combinations of the estimates exact rather than merely
    unbiased.
    """
    if not games:
        raise ValueError("no games given")
    first = next(iter(games.values()))
    for g in games.values():
        if g.n_players != first.n_players or g.background.shape != first.background.shape:
            raise ValueError("shared estimation requires identical explicand/background across games")
        if not np.array_equal(g.explicand, first.explicand) or not np.array_equal(g.background, first.background):
            raise ValueError("shared estimation requires identical explicand/background across games")
    draws = sample_draws(first.n_players, first.background.shape[0], K, rng)
    estimates: dict[str, AttributionEstimate] = {}
    diffs: dict[str, np.ndarray] = {}
    p = first.n_players
    chain = _chain_points(first, draws).reshape(K * (p + 1), p)
    for name, g in games.items():
        values = np.asarray(g.value_fn(chain), dtype=float).reshape(K, p + 1)
        d = _diffs_from_chain(values, draws)
        diffs[name] = d
        estimates[name] = _estimate_from_diffs(d, draws, first.background.shape[0])
    if return_diffs:
        return estimates, diffs
    return estimates


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


def coalition_value(game: ShapleyGame, members: int) -> float:
    """Worth of the coalition given as a bitmask over features."""
    p = game.n_players
    mask = np.array([(members >> j) & 1 for j in range(p)], dtype=bool)
    pts = np.where(mask, game.explicand, game.background)
    return float(np.asarray(game.value_fn(pts), dtype=float).mean())


def exact_shapley(game: ShapleyGame) -> AttributionEstimate:
    """Exact Shapley values by full coalition enumeration (stderr = 0)."""
    p = game.n_players
    if p > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact enumeration refuses p > {MAX_EXACT_PLAYERS}")
    M = game.background.shape[0]
    # all 2^p coalition composites in one value_fn call
    masks = np.zeros((1 << p, p), dtype=bool)
    for s in range(1 << p):
        for j in range(p):
            masks[s, j] = (s >> j) & 1
    pts = np.where(masks[:, None, :], game.explicand, game.background[None, :, :])
    values = np.asarray(game.value_fn(pts.reshape(-1, p)), dtype=float).reshape(1 << p, M)
    v = values.mean(axis=1)  # worth per coalition bitmask

    fact = [math.factorial(i) for i in range(p + 1)]
    phi = np.zeros(p)
    for s in range(1 << p):
        size = bin(s).count("1")
        for j in range(p):
            if (s >> j) & 1:
                continue
            w = fact[size] * fact[p - 1 - size] / fact[p]
            phi[j] += w * (v[s | (1 << j)] - v[s])
    return AttributionEstimate(phi=phi, stderr=np.zeros(p), K=1, seed=None, background_size=M)


def compute_payout(game: ShapleyGame) -> float:
    """Value at the explicand minus the background average."""
    at_x = float(np.asarray(game.value_fn(game.explicand[None, :]), dtype=float)[0])
    avg = float(np.asarray(game.value_fn(game.background), dtype=float).mean())
    return at_x - avg


# ---------------------------------------------------------------------------
# Sample-size adequacy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GameAdequacy:
    payout: float
    efficiency_error: float
    threshold: float
    sufficient: bool

    def to_dict(self) -> dict:
        return {
            "payout": self.payout,
            "efficiency_error": self.efficiency_error,
            "threshold": self.threshold,
            "sufficient": self.sufficient,
        }


@dataclass(frozen=True)
class AdequacyVerdict:
    games: dict[str, GameAdequacy]
    overall: bool
    K: int

    def to_dict(self) -> dict:
        return {
            "games": {name: g.to_dict() for name, g in self.games.items()},
            "overall": self.overall,
            "K": self.K,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdequacyVerdict":
        return cls(
            games={name: GameAdequacy(**g) for name, g in d["games"].items()},
            overall=bool(d["overall"]),
            K=int(d["K"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def min_pairwise_gap(phi: np.ndarray) -> float:
    """Minimal L1 distance between two distinct attributions; inf for p = 1."""
    phi = np.asarray(phi, dtype=float)
    if phi.size < 2:
        return math.inf
    vals = np.sort(phi)
    return float(np.min(np.abs(np.diff(vals))))


def check_sample_size(
    estimates: Mapping[str, AttributionEstimate], games: Mapping[str, ShapleyGame]
) -> AdequacyVerdict:
    """Compare each game's efficiency error against its attribution gap.

    Sufficient when the absolute efficiency error is strictly below the
    minimal pairwise gap; with a single feature the gap is infinite and
    the check always passes. Tied attributions give a zero gap, which is
    insufficient unless the error is exactly zero.
    """
    if set(estimates) != set(games):
        raise ValueError("estimates and games must be keyed identically")
    per_game: dict[str, GameAdequacy] = {}
    K = max(e.K for e in estimates.values())
    for name in games:
        est = estimates[name]
        payout = compute_payout(games[name])
        delta = abs(float(est.phi.sum()) - payout)
        gap = min_pairwise_gap(est.phi)
        if gap == 0.0:
            sufficient = delta == 0.0
        else:
            sufficient = delta < gap
        per_game[name] = GameAdequacy(
            payout=payout, efficiency_error=delta, threshold=gap, sufficient=bool(sufficient)
        )
    return AdequacyVerdict(games=per_game, overall=all(g.sufficient for g in per_game.values()), K=K)


def find_sufficient_k(
    games: Mapping[str, ShapleyGame],
    rng: np.random.Generator | int | None,
    k_start: int = K_SEARCH_START,
    k_cap: int = K_SEARCH_CAP,
):
    """Greedy forward search doubling K until the adequacy check passes.

    Returns (K, verdict, estimates) for the first sufficient K, or for
    the cap if none passes.
    """
    gen = np.random.default_rng(rng)
    K = k_start
    while True:
        estimates = estimate_shapley_shared(games, K, gen)
        verdict = check_sample_size(estimates, games)
        if verdict.overall or K * 2 > k_cap:
            return K, verdict, estimates
        K *= 2
