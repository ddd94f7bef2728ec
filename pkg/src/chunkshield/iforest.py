"""Isolation forest with separability-guided ("targeted") cuts.

Each internal node splits the attribute whose best cut maximises the
separability index

    |mean(left) - mean(right)| * var(all) / (var(left) + var(right) + eps)

The best cut per attribute is searched by an adaptive walk over the sorted
values. The stride of the walk is driven by the slope of the separability
curve between neighbouring distinct values, so flat or falling stretches are
skipped quickly. A classic random-cut forest is provided as a reference.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, ParameterError, UndefinedSplitError

EPS = 1e-12
EULER_GAMMA = 0.5772156649
FORMAT_NAME = "chunkshield-iforest"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# separability index and the adaptive scan


def separation(values: Sequence[float], v: float) -> float:
    """Separability index of splitting ``values`` at ``v`` (left: x < v)."""
    x = np.asarray(values, dtype=np.float64)
    left = x[x < v]
    right = x[x >= v]
    if left.size == 0 or right.size == 0:
        raise UndefinedSplitError(f"split at {v} leaves an empty side")
    gap = math.sqrt((left.mean() - right.mean()) ** 2)
    return gap * x.var() / (left.var() + right.var() + EPS)


def gradient(values: Sequence[float], i: int) -> float:
    """Slope of the separability index between sorted values ``i`` and ``i+1``."""
    x = np.asarray(values, dtype=np.float64)
    dx = x[i + 1] - x[i]
    if dx == 0:
        raise UndefinedSplitError(f"values {i} and {i + 1} coincide")
    return (separation(x, x[i + 1]) - separation(x, x[i])) / dx


def _inv_one_plus_exp(t: float) -> float:
    # 1 / (1 + e^t) without overflow
    if t > 0:
        e = math.exp(-t)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(t))


def step_raw(G: float, n_values: int) -> float:
    s = _inv_one_plus_exp(G * math.log10(n_values))
    if G < 0:
        return 3.0 * s * n_values / 100.0
    return (0.7 - 1.3 * s) * n_values / 100.0


def update_step(G: float, n_values: int) -> int:
    """Next stride of the scan: the sigmoid rule, rounded half-up, at least 1."""
    if n_values < 2:
        raise ParameterError(f"need at least 2 values, got {n_values}")
    return max(1, int(math.floor(step_raw(G, n_values) + 0.5)))


@dataclass(frozen=True)
class SeparabilityScan:
    best_split: float
    highest_separation: float
    evaluations: int


class _SortedScan:
    """O(1) separability at any cut of a sorted list, via prefix sums.

    Cut ``i`` (1 <= i <= n-1) puts ``xs[:i]`` on the left and ``xs[i:]`` on
    the right; it is a genuine split only when ``xs[i-1] < xs[i]``.
    """

    def __init__(self, xs: list[float]):
        self.xs = xs
        self.n = n = len(xs)
        mean = sum(xs) / n
        s1 = [0.0] * (n + 1)
        s2 = [0.0] * (n + 1)
        a = b = 0.0
        for k, v in enumerate(xs, 1):
            y = v - mean
            a += y
            b += y * y
            s1[k] = a
            s2[k] = b
        self.s1, self.s2 = s1, s2
        m = a / n
        self.var_all = max(b / n - m * m, 0.0)
        self.vals: list[float | None] = [None] * n
        self.evaluations = 0

    def sep(self, i: int) -> float:
        got = self.vals[i]
        if got is not None:
            return got
        n, s1, s2 = self.n, self.s1, self.s2
        a, b = s1[i], s2[i]
        ml = a / i
        mr = (s1[n] - a) / (n - i)
        vl = b / i - ml * ml
        vr = (s2[n] - b) / (n - i) - mr * mr
        # constant sides get an exact zero; prefix-sum residue would
        # otherwise be amplified by 1/eps
        xs = self.xs
        if vl < 0.0 or xs[i - 1] == xs[0]:
            vl = 0.0
        if vr < 0.0 or xs[i] == xs[n - 1]:
            vr = 0.0
        val = abs(ml - mr) * self.var_all / (vl + vr + EPS)
        self.vals[i] = val
        self.evaluations += 1
        return val

    def next_cut(self, i: int) -> int | None:
        """Smallest genuine cut index >= i, or None."""
        xs, n = self.xs, self.n
        if i < 1:
            i = 1
        while i < n and xs[i] == xs[i - 1]:
            i += 1
        return i if i < n else None

    def threshold(self, i: int) -> float:
        return 0.5 * (self.xs[i - 1] + self.xs[i])


def gradient_split(values: Sequence[float], refine: bool = True) -> SeparabilityScan:
    """Search a near-optimal cut of one attribute.

    The walk starts at the first genuine cut with a stride of
    ``ceil(0.001 * n)``; after each visit the stride is recomputed from the
    slope between the current value and the next distinct one. A stride that
    overshoots the end lands on the last genuine cut instead. With
    ``refine`` (default) every cut between the best visit's two neighbouring
    visits is also evaluated, which recovers narrow peaks the stride jumped
    over; the scan still touches far fewer than ``n`` cuts on large inputs.
    """
    xs = sorted(np.asarray(values, dtype=np.float64).ravel().tolist())
    return _split_sorted(xs, refine)


def _split_sorted(xs: list[float], refine: bool = True) -> SeparabilityScan:
    n = len(xs)
    if n < 2:
        raise ParameterError(f"need at least 2 values, got {n}")
    if xs[0] == xs[-1]:
        return SeparabilityScan(xs[0], 0.0, 0)

    if n < _UNIT_STEP_N:
        return _scan_every_cut(xs)

    scan = _SortedScan(xs)
    sep, next_cut = scan.sep, scan.next_cut
    log_n = math.log10(n)
    i = next_cut(1)
    assert i is not None
    last = n - 1
    while xs[last] == xs[last - 1]:
        last -= 1
    visits = [i]
    best_i, best = i, sep(i)
    step = math.ceil(n * 0.001)
    while True:
        j = next_cut(i + 1)
        if j is None:
            break
        G = (sep(j) - sep(i)) / (xs[j] - xs[i])
        step = _step_fast(G, n, log_n)
        nxt = next_cut(i + step)
        if nxt is None:
            # overshoot: land on the last genuine cut so the top tail is seen
            nxt = last
            if nxt <= i:
                break
        i = nxt
        visits.append(i)
        cur = sep(i)
        if cur > best:
            best, best_i = cur, i

    if refine:
        pos = len(visits) - 1 if visits[-1] == best_i else visits.index(best_i)
        lo = visits[pos - 1] if pos > 0 else 1
        hi = visits[pos + 1] if pos + 1 < len(visits) else n - 1
        for k in range(lo + 1, hi + 1):
            if xs[k] != xs[k - 1]:
                sep(k)
        # every evaluated cut is a valid candidate; ties go to the lowest cut
        for k, v in enumerate(scan.vals):
            if v is not None and v > best:
                best, best_i = v, k

    return SeparabilityScan(scan.threshold(best_i), best, scan.evaluations)


# below this size the largest possible stride, 3n/100, rounds to 1, so the
# walk visits every genuine cut in order
_UNIT_STEP_N = 50


def _scan_every_cut(xs: list[float]) -> SeparabilityScan:
    """The walk's result when every stride is 1: the best of all genuine cuts."""
    n = len(xs)
    mean = sum(xs) / n
    ys = [v - mean for v in xs]
    tot1 = sum(ys)
    tot2 = sum(y * y for y in ys)
    m = tot1 / n
    var_all = max(tot2 / n - m * m, 0.0)
    lo, hi = xs[0], xs[-1]
    a = b = 0.0
    best, best_i, evals = -1.0, 1, 0
    for i in range(1, n):
        y = ys[i - 1]
        a += y
        b += y * y
        if xs[i] == xs[i - 1]:
            continue
        evals += 1
        ml = a / i
        mr = (tot1 - a) / (n - i)
        vl = 0.0 if xs[i - 1] == lo else max(b / i - ml * ml, 0.0)
        vr = 0.0 if xs[i] == hi else max((tot2 - b) / (n - i) - mr * mr, 0.0)
        val = abs(ml - mr) * var_all / (vl + vr + EPS)
        if val > best:
            best, best_i = val, i
    return SeparabilityScan(0.5 * (xs[best_i - 1] + xs[best_i]), best, evals)


def _step_fast(G: float, n: int, log_n: float) -> int:
    t = G * log_n
    if t > 0:
        e = math.exp(-t) if t < 700 else 0.0
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + math.exp(t)) if t > -700 else 1.0
    raw = 3.0 * s * n / 100.0 if G < 0 else (0.7 - 1.3 * s) * n / 100.0
    step = int(math.floor(raw + 0.5))
    return step if step > 1 else 1


def exhaustive_split(values: Sequence[float]) -> SeparabilityScan:
    """Evaluate the separability index at every distinct midpoint."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size < 2:
        raise ParameterError(f"need at least 2 values, got {x.size}")
    if x[0] == x[-1]:
        return SeparabilityScan(float(x[0]), 0.0, 0)
    best, best_v, evals = -1.0, float(x[0]), 0
    for k in range(1, x.size):
        if x[k] == x[k - 1]:
            continue
        v = 0.5 * (x[k - 1] + x[k])
        s = separation(x, v)
        evals += 1
        if s > best:
            best, best_v = s, v
    return SeparabilityScan(best_v, best, evals)


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class External:
    size: int


@dataclass(frozen=True)
class Internal:
    attribute: int
    split: float
    left: "TreeNode"
    right: "TreeNode"
    separability: float


TreeNode = Union[Internal, External]


def build_tree(
    X: np.ndarray,
    height: int,
    height_max: int,
    k_attrs: int | None,
    rng: np.random.Generator,
) -> TreeNode:
    """Grow a targeted-cut isolation tree on the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature matrix, got shape {X.shape}")
    n, q = X.shape
    if height >= height_max or n <= 1:
        return External(n)
    k = q if k_attrs is None else k_attrs
    if not 1 <= k <= q:
        raise ParameterError(f"k_attrs must be in [1, {q}], got {k}")
    attrs = sorted(rng.choice(q, size=k, replace=False).tolist()) if k < q else range(q)

    best_attr, best_scan = -1, None
    for a in attrs:
        scan = _split_sorted(sorted(X[:, a].tolist()))
        if best_scan is None or scan.highest_separation > best_scan.highest_separation:
            best_attr, best_scan = a, scan
    assert best_scan is not None
    if best_scan.highest_separation <= 0.0:
        # every selected attribute is constant at this node
        return External(n)
    go_left = X[:, best_attr] < best_scan.best_split
    return Internal(
        attribute=int(best_attr),
        split=best_scan.best_split,
        left=build_tree(X[go_left], height + 1, height_max, k_attrs, rng),
        right=build_tree(X[~go_left], height + 1, height_max, k_attrs, rng),
        separability=best_scan.highest_separation,
    )


def build_random_tree(X: np.ndarray, height: int, height_max: int, rng: np.random.Generator) -> TreeNode:
    """Classic isolation tree: random attribute, uniform random cut."""
    n, q = X.shape
    if height >= height_max or n <= 1:
        return External(n)
    a = int(rng.integers(q))
    lo, hi = X[:, a].min(), X[:, a].max()
    if lo == hi:
        return External(n)
    split = float(rng.uniform(lo, hi))
    go_left = X[:, a] < split
    return Internal(
        attribute=a,
        split=split,
        left=build_random_tree(X[go_left], height + 1, height_max, rng),
        right=build_random_tree(X[~go_left], height + 1, height_max, rng),
        separability=0.0,  # not computed for random cuts
    )


# ---------------------------------------------------------------------------
# forest


def average_path_length(n: int | float) -> float:
    """c(n): mean unsuccessful-search path length in a BST of ``n`` keys."""
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def height_limit(sample_size: int) -> int:
    return math.ceil(math.log2(sample_size))


@dataclass(frozen=True)
class FastIsolationForest:
    trees: tuple[TreeNode, ...]
    sample_size: int
    normalizer: float
    seed: int
    n_features: int
    height_max: int
    kind: str = "targeted"

    def score_samples(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(f"expected (m, {self.n_features}) samples, got shape {X.shape}")
        return np.array([anomaly_score(self, row) for row in X])

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "kind": self.kind,
                "sample_size": self.sample_size,
                "normalizer": self.normalizer,
                "seed": self.seed,
                "n_features": self.n_features,
                "height_max": self.height_max,
                "trees": [_node_to_obj(t) for t in self.trees],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "FastIsolationForest":
        obj = json.loads(text)
        if obj.get("format") != FORMAT_NAME or obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT_NAME} v{FORMAT_VERSION} document")
        return cls(
            trees=tuple(_node_from_obj(t) for t in obj["trees"]),
            sample_size=obj["sample_size"],
            normalizer=obj["normalizer"],
            seed=obj["seed"],
            n_features=obj["n_features"],
            height_max=obj["height_max"],
            kind=obj["kind"],
        )


def _node_to_obj(node: TreeNode) -> list:
    if isinstance(node, External):
        return ["E", node.size]
    return ["I", node.attribute, node.split, node.separability, _node_to_obj(node.left), _node_to_obj(node.right)]


def _node_from_obj(obj: list) -> TreeNode:
    if obj[0] == "E":
        return External(obj[1])
    _, attr, split, sep, left, right = obj
    return Internal(attr, split, _node_from_obj(left), _node_from_obj(right), sep)


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))


def _validate(X: np.ndarray, T: int, s: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if T < 1:
        raise ParameterError(f"need at least one tree, got T={T}")
    if s < 2:
        raise ParameterError(f"sample size must be >= 2, got {s}")
    if s > X.shape[0]:
        raise ParameterError(f"sample size {s} exceeds the {X.shape[0]} available points")
    return X


def _grow(X: np.ndarray, T: int, s: int, seed: int, workers: int, grow_one) -> tuple[TreeNode, ...]:
    def one(t: int) -> TreeNode:
        rng = _tree_rng(seed, t)
        idx = rng.choice(X.shape[0], size=s, replace=False)
        return grow_one(X[idx], rng)

    if workers <= 1:
        return tuple(one(t) for t in range(T))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return tuple(pool.map(one, range(T)))


def build_forest(
    X: np.ndarray,
    T: int,
    s: int,
    k_attrs: int | None = None,
    seed: int = 0,
    workers: int = 1,
) -> FastIsolationForest:
    """Fit ``T`` targeted-cut trees, each on ``s`` rows drawn without replacement.

    Tree ``t`` draws from an RNG keyed on ``(seed, t)``, so the forest is the
    same for any ``workers``.
    """
    X = _validate(X, T, s)
    hmax = height_limit(s)
    trees = _grow(X, T, s, seed, workers, lambda sub, rng: build_tree(sub, 0, hmax, k_attrs, rng))
    return FastIsolationForest(trees, s, average_path_length(s), seed, X.shape[1], hmax, "targeted")


def baseline_random_forest(X: np.ndarray, T: int, s: int, seed: int = 0, workers: int = 1) -> FastIsolationForest:
    """Classic random-cut isolation forest, same sampling and scoring."""
    X = _validate(X, T, s)
    hmax = height_limit(s)
    trees = _grow(X, T, s, seed, workers, lambda sub, rng: build_random_tree(sub, 0, hmax, rng))
    return FastIsolationForest(trees, s, average_path_length(s), seed, X.shape[1], hmax, "random")


def path_length(node: TreeNode, x: Sequence[float]) -> float:
    depth = 0
    while isinstance(node, Internal):
        node = node.left if x[node.attribute] < node.split else node.right
        depth += 1
    return depth + average_path_length(node.size)


def score_from_path_length(mean_path: float, normalizer: float) -> float:
    return 2.0 ** (-mean_path / normalizer)


def anomaly_score(forest: FastIsolationForest, x: Sequence[float]) -> float:
    """``2 ** (-mean path length / c(s))``; higher means more isolated."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != forest.n_features:
        raise DimensionError(f"expected {forest.n_features} features, got {x.size}")
    xs = x.tolist()
    mean_h = math.fsum(path_length(t, xs) for t in forest.trees) / len(forest.trees)
    return score_from_path_length(mean_h, forest.normalizer)
