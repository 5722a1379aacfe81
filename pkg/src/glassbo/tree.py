"""Regression trees over attribution features, used as learned intervention rules.

Greedy CART-style construction: axis-aligned threshold splits chosen by
squared-error reduction, leaf predictions are training-target means. The
rule "fires" for inputs routed to the leaf with the lowest predicted
target (the historically best region); a single-leaf tree never fires.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_MAX_DEPTH = 2
DEFAULT_MIN_LEAF = 5
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TreeNode:
    value: float
    n: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def route(self, x: np.ndarray) -> "TreeNode":
        node = self
        while not node.is_leaf:
            assert node.left is not None and node.right is not None
            node = node.left if x[node.feature] < node.threshold else node.right
        return node

    def leaves(self) -> list["TreeNode"]:
        if self.is_leaf:
            return [self]
        assert self.left is not None and self.right is not None
        return self.left.leaves() + self.right.leaves()

    def to_dict(self) -> dict:
        d = {"value": self.value, "n": self.n}
        if not self.is_leaf:
            d.update(
                feature=self.feature,
                threshold=self.threshold,
                left=self.left.to_dict(),
                right=self.right.to_dict(),
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "feature" not in d:
            return cls(value=d["value"], n=d["n"])
        return cls(
            value=d["value"],
            n=d["n"],
            feature=d["feature"],
            threshold=d["threshold"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass(frozen=True)
class TreeRule:
    root: TreeNode
    feature_names: tuple[str, ...] = ()
    max_depth: int = DEFAULT_MAX_DEPTH

    def predict(self, x: np.ndarray) -> float:
        return self.root.route(np.asarray(x, dtype=float)).value

    def best_leaf(self) -> TreeNode:
        return min(self.root.leaves(), key=lambda leaf: leaf.value)

    def fires(self, x: np.ndarray) -> bool:
        """True when x is routed to the lowest-prediction leaf of a real split."""
        if self.root.is_leaf:
            return False
        return self.root.route(np.asarray(x, dtype=float)) is self.best_leaf()

    def describe(self) -> str:
        lines: list[str] = []

        def walk(node: TreeNode, indent: str, label: str) -> None:
            if node.is_leaf:
                lines.append(f"{indent}{label}predict {node.value:.4g} (n={node.n})")
                return
            name = (
                self.feature_names[node.feature]
                if node.feature < len(self.feature_names)
                else f"x[{node.feature}]"
            )
            lines.append(f"{indent}{label}{name} < {node.threshold:.6g}?")
            walk(node.left, indent + "  ", "yes: ")
            walk(node.right, indent + "  ", "no:  ")

        walk(self.root, "", "")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "root": self.root.to_dict(),
            "feature_names": list(self.feature_names),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeRule":
        return cls(
            root=TreeNode.from_dict(d["root"]),
            feature_names=tuple(d.get("feature_names") or ()),
            max_depth=int(d.get("max_depth", DEFAULT_MAX_DEPTH)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float] | None:
    """(feature, threshold, gain) maximizing SSE reduction, or None."""
    n, p = X.shape
    if n < 2 * min_leaf:
        return None
    sse_parent = float(np.sum((y - y.mean()) ** 2))
    best: tuple[int, float, float] | None = None
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys**2)
        total, total_sq = csum[-1], csq[-1]
        for i in range(min_leaf, n - min_leaf + 1):
            if xs[i - 1] == xs[i]:
                continue  # cannot separate equal values
            nl = i
            nr = n - i
            sse_l = csq[i - 1] - csum[i - 1] ** 2 / nl
            sse_r = (total_sq - csq[i - 1]) - (total - csum[i - 1]) ** 2 / nr
            gain = sse_parent - (sse_l + sse_r)
            thr = 0.5 * (xs[i - 1] + xs[i])
            if gain > _MIN_GAIN and (best is None or gain > best[2]):
                best = (j, float(thr), float(gain))
    return best


def _grow(X: np.ndarray, y: np.ndarray, depth: int, max_depth: int, min_leaf: int) -> TreeNode:
    value = float(y.mean())
    if depth >= max_depth:
        return TreeNode(value=value, n=y.size)
    split = _best_split(X, y, min_leaf)
    if split is None:
        return TreeNode(value=value, n=y.size)
    j, thr, _ = split
    mask = X[:, j] < thr
    return TreeNode(
        value=value,
        n=y.size,
        feature=j,
        threshold=thr,
        left=_grow(X[mask], y[mask], depth + 1, max_depth, min_leaf),
        right=_grow(X[~mask], y[~mask], depth + 1, max_depth, min_leaf),
    )


def fit_tree_rule(
    history: Sequence[tuple[np.ndarray, float]],
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_leaf: int = DEFAULT_MIN_LEAF,
    feature_names: Sequence[str] = (),
) -> TreeRule:
    """Learn an intervention rule from (attribution features, target) history."""
    if len(history) < 2 * min_leaf:
        raise ValueError(f"need at least {2 * min_leaf} samples")
    X = np.array([np.asarray(f, dtype=float) for f, _ in history])
    y = np.array([float(t) for _, t in history])
    root = _grow(X, y, 0, max_depth, min_leaf)
    return TreeRule(root=root, feature_names=tuple(feature_names), max_depth=max_depth)
