"""Shared tree and boosting machinery.

One exact-greedy tree grower serves the whole model zoo: regression trees
on gradient/hessian statistics for the boosted families, and survival
trees with log-rank splitting for the forest. Exact splits (midpoints of
consecutive distinct values) keep fits affordable at the cohort sizes in
scope and make results reproducible across platforms; gain ties break
toward the lower feature index, then the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingError

__all__ = [
    "TreeNode",
    "TreeParams",
    "SurvivalTreeParams",
    "BoostParams",
    "BoostedEnsemble",
    "fit_regression_tree",
    "fit_survival_tree",
    "boost",
    "predict_ensemble",
    "predict_tree",
    "apply_tree",
    "tree_to_dict",
    "tree_from_dict",
]

MODEL_FILE_VERSION = 1


@dataclass
class TreeNode:
    """Binary tree node. Routing rule: go left iff x[feature] <= threshold.

    Leaves carry either a regression ``value`` or a ``members`` index list
    (survival trees).
    """

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None
    members: np.ndarray | None = None
    gain: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    min_samples_leaf: int = 1
    min_child_weight: float = 0.0
    reg_lambda: float = 1.0
    min_split_gain: float = 0.0


@dataclass(frozen=True)
class SurvivalTreeParams:
    max_depth: int = 8
    min_samples_leaf: int = 10
    mtry: int | None = None  # None: all features
    seed: int = 0


@dataclass(frozen=True)
class BoostParams:
    n_rounds: int = 100
    learning_rate: float = 0.1
    subsample: float = 1.0
    seed: int = 0
    tree: TreeParams = field(default_factory=TreeParams)


@dataclass
class BoostedEnsemble:
    """Additive tree model: prediction = base_score + lr * sum of trees."""

    base_score: float
    trees: list[TreeNode]
    learning_rate: float
    loss_id: str
    n_features: int
    loss_trace: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return predict_ensemble(self, X)


def _check_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("features must be 2-d")
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    return X


def _best_regression_split(X, g, h, idx, params: TreeParams):
    """Exact greedy split search over one node's rows.

    Gain = 1/2 [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)].
    Returns (gain, feature, threshold) or None.
    """
    lam = params.reg_lambda
    msl = params.min_samples_leaf
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + lam) if H + lam > 0 else 0.0
    m = idx.size
    best_gain, best_feat, best_thr = -np.inf, -1, 0.0
    positions = np.arange(1, m)
    for f in range(X.shape[1]):
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        gl = np.cumsum(g[idx][order])[:-1]
        hl = np.cumsum(h[idx][order])[:-1]
        gr, hr = G - gl, H - hl
        ok = (xs[:-1] != xs[1:])
        ok &= (positions >= msl) & (m - positions >= msl)
        ok &= (hl >= params.min_child_weight) & (hr >= params.min_child_weight)
        ok &= (hl + lam > 0) & (hr + lam > 0)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - parent)
        # floating-point jitter on a flat objective must not trigger a split
        gain[~ok | (gain < 1e-12 * (1.0 + abs(parent)))] = -np.inf
        k = int(np.argmax(gain))  # first max: lowest threshold wins ties
        if gain[k] > best_gain:
            best_gain = float(gain[k])
            best_feat = f
            best_thr = 0.5 * (xs[k] + xs[k + 1])
    if best_feat < 0:
        return None
    return best_gain, best_feat, best_thr


def fit_regression_tree(X, gradients, hessians,
                        params: TreeParams = TreeParams()) -> TreeNode:
    """Grow an exact-greedy regression tree on gradient/hessian statistics.

    Leaf value is the Newton step -G_leaf / (H_leaf + lam). Splitting stops
    on depth, sample, child-weight or gain floors.
    """
    X = _check_matrix(X)
    g = np.asarray(gradients, dtype=float)
    h = np.asarray(hessians, dtype=float)
    if g.shape != (X.shape[0],) or h.shape != g.shape:
        raise DataError("gradients/hessians must match the number of rows")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise DataError("non-finite gradient or hessian")
    if np.any(h < 0):
        raise DataError("hessians must be nonnegative")
    lam = params.reg_lambda

    def leaf(idx):
        denom = h[idx].sum() + lam
        val = 0.0 if denom <= 0 else -g[idx].sum() / denom
        return TreeNode(value=float(val))

    def build(idx, depth):
        if depth >= params.max_depth or idx.size < 2 * params.min_samples_leaf:
            return leaf(idx)
        found = _best_regression_split(X, g, h, idx, params)
        if found is None or found[0] <= params.min_split_gain:
            return leaf(idx)
        gain, feat, thr = found
        mask = X[idx, feat] <= thr
        node = TreeNode(feature=feat, threshold=thr, gain=gain)
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        return node

    return build(np.arange(X.shape[0]), 0)


def _node_logrank_scan(X_col, time, event, msl: int, chunk: int = 512):
    """Standardized two-group log-rank statistic for every candidate split.

    The numerator decomposes into per-subject scores delta_j - H(T_j)
    (cumulative hazard of the whole node), so it is a cumulative sum in
    feature order. The variance needs the left-group at-risk counts per
    event time, accumulated chunkwise to bound memory.

    Returns (|z| per split position, thresholds) with -inf at inadmissible
    positions, or None when the column admits no split.
    """
    m = X_col.size
    order = np.argsort(X_col, kind="stable")
    xs = X_col[order]
    t_sorted = time[order]
    e_sorted = event[order]

    # per distinct time in the node: deaths and at-risk
    order_t = np.argsort(time, kind="stable")
    tt, ee = time[order_t], event[order_t]
    grid, gstart = np.unique(tt, return_index=True)
    deaths = np.add.reduceat(ee.astype(float), gstart)
    leaving = np.add.reduceat(np.ones(m), gstart)
    at_risk = m - np.concatenate(([0.0], np.cumsum(leaving)[:-1]))
    has_event = deaths > 0
    grid, deaths, at_risk = grid[has_event], deaths[has_event], at_risk[has_event]
    if grid.size == 0:
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        var_coef = np.where(at_risk > 1,
                            deaths * (at_risk - deaths) / (at_risk ** 2 * (at_risk - 1)),
                            0.0)
    cumhaz = np.cumsum(deaths / at_risk)
    # per-subject log-rank score: event indicator minus node cumulative hazard
    pos = np.searchsorted(grid, t_sorted, side="right") - 1
    haz_at = np.where(pos >= 0, cumhaz[np.clip(pos, 0, None)], 0.0)
    scores = e_sorted - haz_at
    num = np.cumsum(scores)[:-1]

    variance = np.empty(m - 1)
    base = np.zeros(grid.size)
    for a in range(0, m - 1, chunk):
        b = min(a + chunk, m - 1)
        at_risk_chunk = grid[:, None] <= t_sorted[None, a:b]
        n1 = base[:, None] + np.cumsum(at_risk_chunk, axis=1)
        variance[a:b] = np.sum(var_coef[:, None] * n1 * (at_risk[:, None] - n1),
                               axis=0)
        base += at_risk_chunk.sum(axis=1)

    positions = np.arange(1, m)
    ok = (xs[:-1] != xs[1:]) & (positions >= msl) & (m - positions >= msl)
    ok &= variance > 0
    if not ok.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(num) / np.sqrt(variance)
    z[~ok] = -np.inf
    thresholds = 0.5 * (xs[:-1] + xs[1:])
    return z, thresholds


def fit_survival_tree(X, time, event,
                      params: SurvivalTreeParams = SurvivalTreeParams()) -> TreeNode:
    """Grow a survival tree by maximizing the standardized log-rank statistic.

    At each node a random subset of ``mtry`` features is scanned; leaves
    hold the member row indices so callers can attach nonparametric
    estimates. Nodes without events or without an admissible split become
    leaves.
    """
    X = _check_matrix(X)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if event.sum() == 0:
        raise DataError("survival tree needs at least one event")
    d = X.shape[1]
    mtry = d if params.mtry is None else min(params.mtry, d)
    rng = np.random.default_rng(params.seed)

    def build(idx, depth):
        if (depth >= params.max_depth or idx.size < 2 * params.min_samples_leaf
                or event[idx].sum() == 0):
            return TreeNode(members=idx.copy())
        feats = np.sort(rng.choice(d, size=mtry, replace=False))
        best_z, best_feat, best_thr = -np.inf, -1, 0.0
        for f in feats:
            found = _node_logrank_scan(X[idx, f], time[idx], event[idx],
                                       params.min_samples_leaf)
            if found is None:
                continue
            z, thresholds = found
            k = int(np.argmax(z))
            if z[k] > best_z:
                best_z, best_feat, best_thr = float(z[k]), int(f), float(thresholds[k])
        if best_feat < 0:
            return TreeNode(members=idx.copy())
        mask = X[idx, best_feat] <= best_thr
        node = TreeNode(feature=best_feat, threshold=best_thr, gain=best_z)
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        return node

    return build(np.arange(X.shape[0]), 0)


def apply_tree(root: TreeNode, X) -> list[TreeNode]:
    """Route every row to its leaf; returns the leaf node per row."""
    X = _check_matrix(X)
    out: list[TreeNode | None] = [None] * X.shape[0]

    def walk(node, idx):
        if node.is_leaf:
            for i in idx:
                out[i] = node
            return
        mask = X[idx, node.feature] <= node.threshold
        walk(node.left, idx[mask])
        walk(node.right, idx[~mask])

    walk(root, np.arange(X.shape[0]))
    return out  # type: ignore[return-value]


def predict_tree(root: TreeNode, X) -> np.ndarray:
    """Regression-tree output per row."""
    leaves = apply_tree(root, X)
    return np.array([leaf.value for leaf in leaves], dtype=float)


def boost(X, time, event, loss, params: BoostParams = BoostParams(),
          weights=None) -> BoostedEnsemble:
    """Second-order boosting loop with a pluggable loss.

    Per round: compute gradients/hessians at the current predictions (on a
    row subsample when subsample < 1), fit an exact-greedy tree to them,
    and add it with shrinkage. The training-loss trace (full data) is
    recorded per round.
    """
    X = _check_matrix(X)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    n = X.shape[0]
    if not 0.0 < params.subsample <= 1.0:
        raise DataError("subsample must lie in (0, 1]")
    rng = np.random.default_rng(params.seed)
    base = float(loss.intercept(time, event, weights))
    preds = np.full(n, base)
    trees: list[TreeNode] = []
    trace: list[float] = []
    l0, _, _ = loss.value_grad_hess(time, event, preds, weights)
    trace.append(float(l0))
    for rnd in range(params.n_rounds):
        if params.subsample < 1.0:
            k = max(1, int(round(params.subsample * n)))
            sub = np.sort(rng.choice(n, size=k, replace=False))
        else:
            sub = np.arange(n)
        w_sub = None if weights is None else np.asarray(weights, float)[sub]
        _, g, h = loss.value_grad_hess(time[sub], event[sub], preds[sub], w_sub)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise TrainingError(f"non-finite loss statistics at round {rnd}")
        tree = fit_regression_tree(X[sub], g, h, params.tree)
        trees.append(tree)
        preds += params.learning_rate * predict_tree(tree, X)
        lval, _, _ = loss.value_grad_hess(time, event, preds, weights)
        if not np.isfinite(lval):
            raise TrainingError(f"non-finite loss value at round {rnd}")
        trace.append(float(lval))
    return BoostedEnsemble(base_score=base, trees=trees,
                           learning_rate=params.learning_rate,
                           loss_id=getattr(loss, "name", "custom"),
                           n_features=X.shape[1], loss_trace=trace)


def predict_ensemble(model: BoostedEnsemble, X) -> np.ndarray:
    """base_score + learning_rate * sum of tree outputs, per row."""
    X = _check_matrix(X)
    if X.shape[1] != model.n_features:
        raise DataError(f"expected {model.n_features} features, got {X.shape[1]}")
    out = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        out += model.learning_rate * predict_tree(tree, X)
    return out


def tree_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        leaf: dict = {}
        if node.value is not None:
            leaf["value"] = node.value
        if node.members is not None:
            leaf["members"] = [int(i) for i in node.members]
        return leaf
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "gain": node.gain,
        "left": tree_to_dict(node.left),
        "right": tree_to_dict(node.right),
    }


def tree_from_dict(obj: dict) -> TreeNode:
    if "feature" in obj:
        return TreeNode(feature=obj["feature"], threshold=obj["threshold"],
                        gain=obj.get("gain"),
                        left=tree_from_dict(obj["left"]),
                        right=tree_from_dict(obj["right"]))
    return TreeNode(value=obj.get("value"),
                    members=None if "members" not in obj
                    else np.asarray(obj["members"], dtype=int))


def ensemble_to_dict(model: BoostedEnsemble) -> dict:
    return {
        "version": MODEL_FILE_VERSION,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "loss": model.loss_id,
        "n_features": model.n_features,
        "trees": [tree_to_dict(t) for t in model.trees],
    }


def ensemble_from_dict(obj: dict) -> BoostedEnsemble:
    if obj.get("version") != MODEL_FILE_VERSION:
        raise DataError(f"unsupported model file version {obj.get('version')!r}")
    return BoostedEnsemble(base_score=obj["base_score"],
                           trees=[tree_from_dict(t) for t in obj["trees"]],
                           learning_rate=obj["learning_rate"],
                           loss_id=obj["loss"],
                           n_features=obj["n_features"])
