"""Parameter spaces, observations and designs.

A design is the running record of evaluated configurations; everything
downstream (surrogates, acquisition optimization, traces) is built on top
of these three types.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class ParamSpace:
    """Axis-aligned box of continuous parameters."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.ndim != 1 or upper.shape != lower.shape or lower.size < 1:
            raise ValueError("lower/upper must be 1-d arrays of equal positive length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        names = tuple(self.names) if self.names else tuple(f"theta_{j + 1}" for j in range(lower.size))
        if len(names) != lower.size:
            raise ValueError("names length must match dimension")
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def diameter(self) -> float:
        """Euclidean diameter of the box."""
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, theta: np.ndarray, atol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            return False
        return bool(np.all(theta >= self.lower - atol) and np.all(theta <= self.upper + atol))

    def clip(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n box-uniform points, shape (n, dim)."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def subbox(self, center: np.ndarray, fraction: float) -> "ParamSpace":
        """Box of side fraction·(upper−lower) around center, clipped to bounds."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        center = self.clip(center)
        half = 0.5 * fraction * (self.upper - self.lower)
        # shift the window inward so the full requested width survives clipping
        lo = np.clip(center - half, self.lower, self.upper - 2.0 * half)
        hi = lo + 2.0 * half
        return ParamSpace(lo, hi, self.names)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSpace":
        return cls(np.asarray(d["lower"], float), np.asarray(d["upper"], float), tuple(d.get("names") or ()))


@dataclass(frozen=True)
class Observation:
    """One evaluated configuration."""

    theta: np.ndarray
    psi: float

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "psi", float(self.psi))
        if theta.ndim != 1:
            raise ValueError("theta must be a 1-d vector")


class Design:
    """Ordered collection of observations sharing one dimension."""

    def __init__(self, observations: Iterable[Observation] = ()) -> None:
        self._obs: list[Observation] = []
        for o in observations:
            self.append(o)

    def append(self, obs: Observation) -> None:
        if self._obs and obs.theta.size != self._obs[0].theta.size:
            raise ValueError("observation dimension differs from design dimension")
        self._obs.append(obs)

    def extend(self, observations: Iterable[Observation]) -> None:
        for o in observations:
            self.append(o)

    def __len__(self) -> int:
        return len(self._obs)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self._obs)

    def __getitem__(self, i) -> Observation:
        return self._obs[i]

    @property
    def dim(self) -> int:
        if not self._obs:
            raise ValueError("empty design has no dimension")
        return self._obs[0].theta.size

    def thetas(self) -> np.ndarray:
        """(n, p) matrix of inputs."""
        if not self._obs:
            return np.empty((0, 0))
        return np.array([o.theta for o in self._obs], dtype=float)

    def psis(self) -> np.ndarray:
        return np.array([o.psi for o in self._obs], dtype=float)

    def prefix(self, n: int) -> "Design":
        return Design(self._obs[:n])

    def copy(self) -> "Design":
        return Design(self._obs)

    def replicate_groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Groups of psi values at exactly repeated theta rows (size >= 2 only)."""
        groups: dict[bytes, list[float]] = {}
        order: list[bytes] = []
        for o in self._obs:
            key = o.theta.tobytes()
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(o.psi)
        out = []
        for key in order:
            vals = groups[key]
            if len(vals) >= 2:
                theta = np.frombuffer(key, dtype=float)
                out.append((theta, np.asarray(vals)))
        return out

    def best(self) -> Observation:
        """Observation with the smallest psi (minimization incumbent)."""
        if not self._obs:
            raise ValueError("empty design has no incumbent")
        return min(self._obs, key=lambda o: (o.psi, tuple(o.theta)))

    # -- serialization ------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            p = self.dim if self._obs else 0
            writer.writerow([f"theta_{j + 1}" for j in range(p)] + ["psi"])
            for o in self._obs:
                writer.writerow([repr(float(v)) for v in o.theta] + [repr(float(o.psi))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Design":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            return cls()
        header = rows[0]
        if header[-1] != "psi":
            raise ValueError("last CSV column must be 'psi'")
        obs = []
        for row in rows[1:]:
            if not row:
                continue
            vals = [float(v) for v in row]
            obs.append(Observation(np.asarray(vals[:-1]), vals[-1]))
        return cls(obs)

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {
            "observations": [{"theta": o.theta.tolist(), "psi": o.psi} for o in self._obs],
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "Design":
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith(".json")):
            text = Path(source).read_text()
        else:
            text = str(source)
        payload = json.loads(text)
        return cls(Observation(np.asarray(o["theta"], float), o["psi"]) for o in payload["observations"])


def design_from_arrays(thetas: np.ndarray | Sequence, psis: np.ndarray | Sequence) -> Design:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    psis = np.asarray(psis, dtype=float).ravel()
    if thetas.shape[0] != psis.size:
        raise ValueError("thetas and psis must have matching length")
    return Design(Observation(t, y) for t, y in zip(thetas, psis))
