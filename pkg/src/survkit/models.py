"""Survival model families behind one train/predict surface.

Every family exposes risk scores under a single convention (higher risk
means earlier expected event); the forest, the first-order Cox booster and
the ranking SVM additionally expose survival curves. The AFT, weighted
regression and second-order Cox boosters are risk-only: asking them for
curves raises NoSurvivalFunctionError.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import engine
from .data import Cohort
from .engine import (BoostParams, SurvivalTreeParams, TreeNode, TreeParams,
                     boost)
from .errors import (ConfigError, ConvergenceError, DataError,
                     NoSurvivalFunctionError, TrainingError)
from .estimators import CoxCalibration, StepFunction, breslow_baseline, cox_calibrate
from .losses import (AftLoss, AftLossConfig, CoxLoss, FirstOrder, LogisticLoss,
                     SquaredLoss)
from .metrics import TimeGrid

__all__ = [
    "FAMILIES",
    "CURVE_FAMILIES",
    "TDAUC_FAMILIES",
    "FittedModel",
    "RsfParams", "GbParams", "AftParams", "RegWeightedParams",
    "HorizonParams", "SsvmParams", "SsvmModel",
    "fit_rsf", "fit_gbsa", "fit_gb_cox", "fit_gb_aft",
    "fit_gb_reg_weighted", "fit_horizon_classifier", "fit_ssvm",
    "fit_family", "predict_risk", "predict_curves",
    "save_model", "load_model", "PARAM_CLASSES",
]

RSF = "rsf"
GBSA = "gbsa"
SSVM = "ssvm"
GB_COX = "gb_cox"
GB_AFT = "gb_aft"
GB_REG = "gb_reg_weighted"
HORIZON = "horizon"

FAMILIES = (RSF, GBSA, SSVM, GB_COX, GB_AFT, GB_REG)
CURVE_FAMILIES = (RSF, GBSA, SSVM)
TDAUC_FAMILIES = (RSF, GBSA, SSVM, GB_COX)


@dataclass(frozen=True)
class RsfParams:
    n_trees: int = 100
    mtry: int | None = None  # None: ceil(sqrt(d))
    max_depth: int = 8
    min_samples_leaf: int = 10
    bootstrap: bool = True
    bootstrap_fraction: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class GbParams:
    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 5
    min_child_weight: float = 0.0
    reg_lambda: float = 1.0
    min_split_gain: float = 0.0
    subsample: float = 1.0
    seed: int = 0

    def boost_params(self, reg_lambda: float | None = None) -> BoostParams:
        lam = self.reg_lambda if reg_lambda is None else reg_lambda
        return BoostParams(
            n_rounds=self.n_rounds, learning_rate=self.learning_rate,
            subsample=self.subsample, seed=self.seed,
            tree=TreeParams(max_depth=self.max_depth,
                            min_samples_leaf=self.min_samples_leaf,
                            min_child_weight=self.min_child_weight,
                            reg_lambda=lam,
                            min_split_gain=self.min_split_gain))


@dataclass(frozen=True)
class AftParams(GbParams):
    distribution: str = "normal"
    sigma: float = 1.0


@dataclass(frozen=True)
class RegWeightedParams(GbParams):
    event_weight: float = 1.0
    censored_weight: float = 0.5


@dataclass(frozen=True)
class HorizonParams(GbParams):
    horizon: float = 12.0


@dataclass(frozen=True)
class SsvmParams:
    gamma: float = 1.0
    pair_mode: str = "nearest"  # "all" or "nearest"
    max_pairs: int = 200_000
    epochs: int = 500
    step_size: float = 0.01
    tol: float = 1e-10
    seed: int = 0


PARAM_CLASSES = {
    RSF: RsfParams,
    GBSA: GbParams,
    SSVM: SsvmParams,
    GB_COX: GbParams,
    GB_AFT: AftParams,
    GB_REG: RegWeightedParams,
    HORIZON: HorizonParams,
}


@dataclass
class RsfForest:
    """Forest artifact: trees whose leaf values index per-leaf CHF rows."""

    trees: list[TreeNode]
    leaf_chf: list[np.ndarray]  # per tree: (n_leaves, len(grid))
    grid: np.ndarray            # distinct training event times

    def ensemble_chf(self, X) -> np.ndarray:
        total = np.zeros((X.shape[0], self.grid.size))
        for tree, chf in zip(self.trees, self.leaf_chf):
            leaf_ids = engine.predict_tree(tree, X).astype(int)
            total += chf[leaf_ids]
        return total / len(self.trees)


@dataclass
class SsvmModel:
    """Linear ranking model with optional Cox calibration for curves."""

    weights: np.ndarray
    gamma: float
    pair_mode: str
    calibration: CoxCalibration | None = None


@dataclass
class FittedModel:
    """Immutable trained artifact with a uniform risk convention."""

    family: str
    artifact: object
    params: dict
    n_features: int
    event_time_grid: np.ndarray
    meta: dict = field(default_factory=dict)

    def predict_risk(self, X) -> np.ndarray:
        return predict_risk(self, X)

    def predict_curves(self, X, grid: TimeGrid | None = None):
        return predict_curves(self, X, grid)


def _check_events(cohort: Cohort) -> None:
    if cohort.event.sum() == 0:
        raise DataError("training cohort has no events")


def _float_features(cohort: Cohort) -> np.ndarray:
    X = np.asarray(cohort.features, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite (encode the cohort first)")
    return X


def _chf_on_grid(time, event, grid: np.ndarray) -> np.ndarray:
    """Nelson-Aalen cumulative hazard of a member set, sampled on a grid."""
    if event.sum() == 0:
        return np.zeros(grid.size)
    order = np.argsort(time, kind="stable")
    t, e = time[order], event[order]
    uniq, start = np.unique(t, return_index=True)
    deaths = np.add.reduceat(e.astype(float), start)
    leaving = np.add.reduceat(np.ones_like(t), start)
    at_risk = t.size - np.concatenate(([0.0], np.cumsum(leaving)[:-1]))
    has = deaths > 0
    steps, cumhaz = uniq[has], np.cumsum(deaths[has] / at_risk[has])
    idx = np.searchsorted(steps, grid, side="right") - 1
    return np.where(idx >= 0, cumhaz[np.clip(idx, 0, None)], 0.0)


def _index_leaves(root: TreeNode) -> list[TreeNode]:
    """Assign DFS leaf ids via the value slot; returns the leaves in order."""
    leaves: list[TreeNode] = []

    def walk(node):
        if node.is_leaf:
            node.value = float(len(leaves))
            leaves.append(node)
        else:
            walk(node.left)
            walk(node.right)

    walk(root)
    return leaves


def fit_rsf(train: Cohort, params: RsfParams = RsfParams()) -> FittedModel:
    """Random survival forest: bagged log-rank trees with Nelson-Aalen leaves.

    The ensemble cumulative hazard is the tree average; the scalar risk is
    the mortality score, the sum of the ensemble CHF over the training
    event-time grid.
    """
    _check_events(train)
    X = _float_features(train)
    n, d = X.shape
    grid = np.unique(train.time[train.event == 1])
    mtry = params.mtry if params.mtry is not None else int(np.ceil(np.sqrt(d)))
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    trees, leaf_chfs = [], []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        if params.bootstrap:
            m = max(1, int(round(params.bootstrap_fraction * n)))
            sample = rng.integers(0, n, size=m)
        else:
            sample = np.arange(n)
        t_s, e_s = train.time[sample], train.event[sample]
        if e_s.sum() == 0:
            root = TreeNode(members=np.arange(sample.size))
        else:
            stp = SurvivalTreeParams(max_depth=params.max_depth,
                                     min_samples_leaf=params.min_samples_leaf,
                                     mtry=mtry,
                                     seed=int(rng.integers(2 ** 31)))
            root = engine.fit_survival_tree(X[sample], t_s, e_s, stp)
        leaves = _index_leaves(root)
        chf = np.empty((len(leaves), grid.size))
        for k, leaf in enumerate(leaves):
            members = leaf.members
            chf[k] = _chf_on_grid(t_s[members], e_s[members], grid)
            leaf.members = None  # row indices are bootstrap-local; drop them
        trees.append(root)
        leaf_chfs.append(chf)
    forest = RsfForest(trees=trees, leaf_chf=leaf_chfs, grid=grid)
    return FittedModel(family=RSF, artifact=forest, params=asdict(params),
                       n_features=d, event_time_grid=grid)


def fit_gbsa(train: Cohort, params: GbParams = GbParams()) -> FittedModel:
    """First-order Cox boosting (classical formulation): unit hessians and
    no leaf regularization. Curves come from the Breslow baseline at the
    fitted training linear predictor."""
    _check_events(train)
    X = _float_features(train)
    loss = FirstOrder(CoxLoss())
    model = boost(X, train.time, train.event, loss,
                  params.boost_params(reg_lambda=0.0), weights=train.weights)
    eta = model.predict(X)
    baseline = breslow_baseline(train.time, train.event, eta)
    grid = np.unique(train.time[train.event == 1])
    return FittedModel(family=GBSA, artifact=(model, baseline),
                       params=asdict(params), n_features=X.shape[1],
                       event_time_grid=grid)


def fit_gb_cox(train: Cohort, params: GbParams = GbParams()) -> FittedModel:
    """Second-order boosting on the Cox partial likelihood."""
    _check_events(train)
    X = _float_features(train)
    model = boost(X, train.time, train.event, CoxLoss(), params.boost_params(),
                  weights=train.weights)
    grid = np.unique(train.time[train.event == 1])
    return FittedModel(family=GB_COX, artifact=model, params=asdict(params),
                       n_features=X.shape[1], event_time_grid=grid)


def fit_gb_aft(train: Cohort, params: AftParams = AftParams()) -> FittedModel:
    """Second-order boosting on the AFT loss; predictions are log-times."""
    X = _float_features(train)
    if np.any(train.time <= 0):
        raise DataError("AFT requires positive times")
    loss = AftLoss(AftLossConfig(params.distribution, params.sigma))
    model = boost(X, train.time, train.event, loss, params.boost_params(),
                  weights=train.weights)
    grid = np.unique(train.time[train.event == 1])
    return FittedModel(family=GB_AFT, artifact=model, params=asdict(params),
                       n_features=X.shape[1], event_time_grid=grid)


def fit_gb_reg_weighted(train: Cohort,
                        params: RegWeightedParams = RegWeightedParams()) -> FittedModel:
    """Weighted squared-loss boosting on time: the status indicator enters
    as a weighting factor (deaths weigh more than censored follow-ups).
    Cohort weights, when present, multiply the status weights."""
    X = _float_features(train)
    w = np.where(train.event == 1, params.event_weight, params.censored_weight)
    if train.weights is not None:
        w = w * train.weights
    model = boost(X, train.time, train.event, SquaredLoss(),
                  params.boost_params(), weights=w)
    grid = np.unique(train.time[train.event == 1])
    return FittedModel(family=GB_REG, artifact=model, params=asdict(params),
                       n_features=X.shape[1], event_time_grid=grid)


def fit_horizon_classifier(train: Cohort,
                           params: HorizonParams = HorizonParams()) -> FittedModel:
    """Fixed-horizon death classifier baseline.

    Subjects censored before the horizon carry no label and are excluded
    from training; the exclusion count is kept in the model metadata.
    """
    if params.horizon <= 0:
        raise DataError("horizon must be positive")
    X = _float_features(train)
    excluded = (train.time < params.horizon) & (train.event == 0)
    kept = ~excluded
    if not kept.any():
        raise DataError("no subjects retained at this horizon")
    label = ((train.time <= params.horizon) & (train.event == 1)).astype(int)
    w = None if train.weights is None else train.weights[kept]
    model = boost(X[kept], train.time[kept], label[kept], LogisticLoss(),
                  params.boost_params(), weights=w)
    grid = np.unique(train.time[train.event == 1])
    return FittedModel(family=HORIZON, artifact=model, params=asdict(params),
                       n_features=X.shape[1], event_time_grid=grid,
                       meta={"horizon": params.horizon,
                             "n_excluded": int(excluded.sum()),
                             "n_trained": int(kept.sum())})


def _comparable_pairs(time, event, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (i, j) with T_i < T_j and subject i an event (i is riskier)."""
    n = time.size
    if mode == "all":
        ii, jj = [], []
        ev = np.flatnonzero(event == 1)
        for i in ev:
            later = np.flatnonzero(time > time[i])
            ii.append(np.full(later.size, i))
            jj.append(later)
        if not ii:
            return np.empty(0, int), np.empty(0, int)
        return np.concatenate(ii), np.concatenate(jj)
    if mode != "nearest":
        raise DataError(f"unknown pair_mode {mode!r}")
    order = np.argsort(time, kind="stable")
    ii, jj = [], []
    last_event = -1
    k = 0
    while k < n:
        # process a block of tied times together so "strictly earlier" holds
        block_end = k
        while block_end < n and time[order[block_end]] == time[order[k]]:
            block_end += 1
        for p in range(k, block_end):
            j = order[p]
            if last_event >= 0:
                ii.append(last_event)
                jj.append(j)
        for p in range(k, block_end):
            if event[order[p]] == 1:
                last_event = order[p]
        k = block_end
    return np.asarray(ii, int), np.asarray(jj, int)


def fit_ssvm(train: Cohort, params: SsvmParams = SsvmParams()) -> FittedModel:
    """Ranking survival SVM with squared hinge on comparable pairs.

    Minimizes 1/2 ||w||^2 + gamma * sum max(0, 1 - w.(x_i - x_j))^2 over
    pairs where subject i dies strictly before subject j is last seen, so
    w.x is a risk utility. Deterministic full-batch gradient descent with
    step halving; curves come from a Cox calibration of the training scores.
    """
    _check_events(train)
    X = _float_features(train)
    ii, jj = _comparable_pairs(train.time, train.event, params.pair_mode)
    if ii.size == 0:
        raise DataError("no comparable pairs")
    if params.max_pairs and ii.size > params.max_pairs:
        rng = np.random.default_rng(params.seed)
        pick = np.sort(rng.choice(ii.size, size=params.max_pairs, replace=False))
        ii, jj = ii[pick], jj[pick]
    D = X[ii] - X[jj]

    def objective(w):
        slack = np.maximum(0.0, 1.0 - D @ w)
        return 0.5 * w @ w + params.gamma * np.sum(slack ** 2), slack

    w = np.zeros(X.shape[1])
    fval, slack = objective(w)
    step = params.step_size
    for _ in range(params.epochs):
        grad = w - 2.0 * params.gamma * (D.T @ slack)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= params.tol:
            break
        new_w = w - step * grad
        new_f, new_slack = objective(new_w)
        halved = 0
        while new_f >= fval and halved < 40:
            step *= 0.5
            new_w = w - step * grad
            new_f, new_slack = objective(new_w)
            halved += 1
        if new_f >= fval:
            break
        w, fval, slack = new_w, new_f, new_slack
        step *= 2.0  # re-expand after a successful move
    if not np.all(np.isfinite(w)):
        raise TrainingError("SSVM weights became non-finite")

    scores = X @ w
    calibration = None
    meta = {"n_pairs": int(ii.size)}
    if train.event.sum() >= 2:
        try:
            calibration = cox_calibrate(scores, train.time, train.event)
        except ConvergenceError as exc:
            # separable scores have no finite Cox MLE; keep the risk model
            warnings.warn(f"SSVM curve calibration unavailable: {exc}",
                          stacklevel=2)
            meta["calibration_error"] = str(exc)
    artifact = SsvmModel(weights=w, gamma=params.gamma,
                         pair_mode=params.pair_mode, calibration=calibration)
    grid = np.unique(train.time[train.event == 1])
    return FittedModel(family=SSVM, artifact=artifact, params=asdict(params),
                       n_features=X.shape[1], event_time_grid=grid, meta=meta)


_FITTERS = {
    RSF: fit_rsf,
    GBSA: fit_gbsa,
    SSVM: fit_ssvm,
    GB_COX: fit_gb_cox,
    GB_AFT: fit_gb_aft,
    GB_REG: fit_gb_reg_weighted,
    HORIZON: fit_horizon_classifier,
}


def fit_family(family: str, train: Cohort, params=None, **overrides) -> FittedModel:
    """Train one family by name; ``overrides`` update the default params."""
    if family not in _FITTERS:
        raise ConfigError(f"unknown model family {family!r}")
    try:
        if params is None:
            params = PARAM_CLASSES[family](**overrides)
        elif overrides:
            params = PARAM_CLASSES[family](**{**asdict(params), **overrides})
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {family}: {exc}") from None
    return _FITTERS[family](train, params)


def _check_dim(model: FittedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataError(f"expected {model.n_features} features, got shape {X.shape}")
    return X


def predict_risk(model: FittedModel, features) -> np.ndarray:
    """Family-specific score, sign-normalized so higher = earlier event."""
    X = _check_dim(model, features)
    if model.family == RSF:
        return model.artifact.ensemble_chf(X).sum(axis=1)
    if model.family == GBSA:
        ensemble, _ = model.artifact
        return ensemble.predict(X)
    if model.family == GB_COX:
        return model.artifact.predict(X)
    if model.family == GB_AFT:
        return -model.artifact.predict(X)
    if model.family == GB_REG:
        return -model.artifact.predict(X)
    if model.family == HORIZON:
        return special.expit(model.artifact.predict(X))
    if model.family == SSVM:
        return X @ model.artifact.weights
    raise DataError(f"unknown model family {model.family!r}")


def _resample(fn: StepFunction, grid: TimeGrid | None) -> StepFunction:
    if grid is None:
        return fn
    return StepFunction(grid.times, fn(grid.times), 1.0)


def predict_curves(model: FittedModel, features,
                   grid: TimeGrid | None = None) -> list[StepFunction]:
    """Per-row survival curves for the curve-capable families.

    Curve support is the training event-time grid; an explicit evaluation
    grid resamples by right-continuous step lookup. Risk-only families
    raise NoSurvivalFunctionError.
    """
    X = _check_dim(model, features)
    if model.family == RSF:
        chf = model.artifact.ensemble_chf(X)
        times = model.artifact.grid
        return [_resample(StepFunction(times, np.exp(-row), 1.0), grid)
                for row in chf]
    if model.family == GBSA:
        ensemble, baseline = model.artifact
        eta = ensemble.predict(X)
        return [_resample(StepFunction(baseline.times,
                                       np.exp(-baseline.values * np.exp(e)), 1.0),
                          grid)
                for e in eta]
    if model.family == SSVM:
        calib = model.artifact.calibration
        if calib is None:
            raise NoSurvivalFunctionError("SSVM model was fit without calibration")
        scores = X @ model.artifact.weights
        return [_resample(fn, grid) for fn in calib.survival(scores)]
    raise NoSurvivalFunctionError(
        f"no survival function defined for family {model.family!r}")


def save_model(model: FittedModel, path) -> None:
    """Serialize a fitted model to a JSON file (family header + artifact)."""
    obj: dict = {
        "version": engine.MODEL_FILE_VERSION,
        "family": model.family,
        "params": model.params,
        "n_features": model.n_features,
        "event_time_grid": [float(t) for t in model.event_time_grid],
        "meta": {k: v for k, v in model.meta.items()
                 if isinstance(v, (int, float, str, bool))},
    }
    if model.family == RSF:
        forest: RsfForest = model.artifact
        obj["grid"] = [float(t) for t in forest.grid]
        obj["trees"] = [engine.tree_to_dict(t) for t in forest.trees]
        obj["leaf_chf"] = [chf.tolist() for chf in forest.leaf_chf]
    elif model.family == GBSA:
        ensemble, baseline = model.artifact
        obj["ensemble"] = engine.ensemble_to_dict(ensemble)
        obj["baseline"] = {"times": baseline.times.tolist(),
                           "values": baseline.values.tolist()}
    elif model.family in (GB_COX, GB_AFT, GB_REG, HORIZON):
        obj["ensemble"] = engine.ensemble_to_dict(model.artifact)
    elif model.family == SSVM:
        svm: SsvmModel = model.artifact
        obj["weights"] = svm.weights.tolist()
        obj["gamma"] = svm.gamma
        obj["pair_mode"] = svm.pair_mode
        if svm.calibration is not None:
            obj["calibration"] = {
                "beta": svm.calibration.beta,
                "times": svm.calibration.baseline.times.tolist(),
                "values": svm.calibration.baseline.values.tolist(),
            }
    else:
        raise DataError(f"unknown model family {model.family!r}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("version") != engine.MODEL_FILE_VERSION:
        raise DataError(f"unsupported model file version {obj.get('version')!r}")
    family = obj["family"]
    grid = np.asarray(obj["event_time_grid"], dtype=float)
    if family == RSF:
        artifact = RsfForest(
            trees=[engine.tree_from_dict(t) for t in obj["trees"]],
            leaf_chf=[np.asarray(c, dtype=float) for c in obj["leaf_chf"]],
            grid=np.asarray(obj["grid"], dtype=float))
    elif family == GBSA:
        baseline = StepFunction(np.asarray(obj["baseline"]["times"]),
                                np.asarray(obj["baseline"]["values"]), 0.0)
        artifact = (engine.ensemble_from_dict(obj["ensemble"]), baseline)
    elif family in (GB_COX, GB_AFT, GB_REG, HORIZON):
        artifact = engine.ensemble_from_dict(obj["ensemble"])
    elif family == SSVM:
        calibration = None
        if "calibration" in obj:
            base = StepFunction(np.asarray(obj["calibration"]["times"]),
                                np.asarray(obj["calibration"]["values"]), 0.0)
            calibration = CoxCalibration(beta=obj["calibration"]["beta"],
                                         baseline=base)
        artifact = SsvmModel(weights=np.asarray(obj["weights"], dtype=float),
                             gamma=obj["gamma"], pair_mode=obj["pair_mode"],
                             calibration=calibration)
    else:
        raise DataError(f"unknown model family {family!r}")
    return FittedModel(family=family, artifact=artifact, params=obj["params"],
                       n_features=obj["n_features"], event_time_grid=grid,
                       meta=obj.get("meta", {}))
