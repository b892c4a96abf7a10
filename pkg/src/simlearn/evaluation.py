"""Cross-validated evaluation: AUC, stratified folds, nested RF search, seeded neural CV.

All randomness is derived from ``(master_seed, fold, seed)`` so every job can run
in any order or process and the merged report is byte-identical.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .exceptions import DivergedLoss, EmptyHorizonCohort, SingleClass, TooFewPerClass
from .features import StateActionFeatures, truncate
from .forest import GRID, ForestConfig, fit_forest, grow_for_grid, predict_proba

FULL = "FULL"
MODELS = ("gru", "sa_gru", "rf")
SHORT_POLICIES = ("pad", "cascade")
REPORT_COLUMNS = ("model", "fold", "seed", "horizon", "auc")
DEFAULT_DROPOUT = {"beers_law": 0.02, "capacitor": 0.05}


def auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied pairs count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1D arrays of the same length")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise SingleClass("AUC needs both classes")
    _, inv, counts = np.unique(scores, return_inverse=True, return_counts=True)
    # average 1-based rank of each tie group
    ranks = (np.cumsum(counts) - (counts - 1) / 2.0)[inv]
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def group_auc(scores, labels, groups) -> dict:
    """AUC per group; groups lacking a class are left out with a warning."""
    scores, labels, groups = np.asarray(scores, float), np.asarray(labels), np.asarray(groups)
    out = {}
    for g in sorted(set(groups.tolist())):
        m = groups == g
        try:
            out[g] = auc(scores[m], labels[m])
        except SingleClass:
            warnings.warn(f"group {g!r} has a single class; no AUC", stacklevel=2)
    return out


def job_seed(master_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([master_seed, *key]).generate_state(1)[0])


@dataclass
class FoldPlan:
    k: int
    seed: int
    student_ids: list[str]
    folds: np.ndarray

    @property
    def assignments(self) -> dict[str, int]:
        return dict(zip(self.student_ids, self.folds.tolist()))

    def test_index(self, fold: int) -> np.ndarray:
        return np.nonzero(self.folds == fold)[0]

    def train_index(self, fold: int) -> np.ndarray:
        return np.nonzero(self.folds != fold)[0]


def make_folds(labels, k: int = 10, seed: int = 0, student_ids=None) -> FoldPlan:
    """Shuffle within each class, then deal students round-robin.

    The dealing position carries over from class 0 to class 1 so fold sizes
    differ by at most one.
    """
    labels = np.asarray(labels)
    if student_ids is None:
        student_ids = [str(i) for i in range(len(labels))]
    if len(student_ids) != len(labels):
        raise ValueError("student_ids and labels differ in length")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in (0, 1):
        idx = np.nonzero(labels == c)[0]
        if len(idx) < k:
            raise TooFewPerClass(f"class {c} has {len(idx)} members, need at least {k}")
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return FoldPlan(k, seed, list(student_ids), folds)


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    predictions: list[dict] = field(default_factory=list)
    chosen: list[dict] = field(default_factory=list)
    # wall-clock seconds per job; kept out of the CSV outputs
    timings: list[float] = field(default_factory=list, compare=False)

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows += other.rows
        self.predictions += other.predictions
        self.chosen += other.chosen
        self.timings += other.timings
        return self

    def sort(self) -> "EvalReport":
        def key(r):
            h = r["horizon"]
            return (r["model"], h == FULL, 0 if h == FULL else int(h), r["fold"], r["seed"])

        self.rows.sort(key=key)
        self.predictions.sort(key=lambda r: (*key(r), r["student_id"]))
        self.chosen.sort(key=lambda r: (r["fold"], r["seed"]))
        return self

    def groups(self):
        """``(model, horizon)`` pairs in report order."""
        seen = []
        for r in self.rows:
            k = (r["model"], r["horizon"])
            if k not in seen:
                seen.append(k)
        return seen

    def fold_means(self, model, horizon) -> dict[int, float]:
        acc = {}
        for r in self.rows:
            if r["model"] == model and r["horizon"] == horizon:
                acc.setdefault(r["fold"], []).append(r["auc"])
        return {f: math.fsum(v) / len(v) for f, v in sorted(acc.items())}

    def mean_auc(self, model, horizon=FULL) -> float:
        v = list(self.fold_means(model, horizon).values())
        if not v:
            raise KeyError(f"no rows for {model} at horizon {horizon}")
        return math.fsum(v) / len(v)

    def pooled_auc(self, model, horizon=FULL, groups: dict | None = None) -> float | dict:
        """Seed-averaged AUC over test scores pooled across folds.

        With ``groups`` (student -> group) returns the seed-averaged AUC per group.
        """
        by_seed = {}
        for p in self.predictions:
            if p["model"] == model and p["horizon"] == horizon:
                by_seed.setdefault(p["seed"], []).append(p)
        if not by_seed:
            raise KeyError(f"no predictions for {model} at horizon {horizon}")
        per_seed = []
        for preds in by_seed.values():
            s = [p["score"] for p in preds]
            y = [p["label"] for p in preds]
            if groups is None:
                per_seed.append(auc(s, y))
            else:
                g = [groups[p["student_id"]] for p in preds]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    per_seed.append(group_auc(s, y, g))
        if groups is None:
            return math.fsum(per_seed) / len(per_seed)
        keys = sorted({g for d in per_seed for g in d})
        out = {}
        for g in keys:
            v = [d[g] for d in per_seed if g in d]
            if len(v) == len(per_seed):
                out[g] = math.fsum(v) / len(v)
            else:
                warnings.warn(f"group {g!r} has a single class; no AUC", stacklevel=2)
        return out

    def summary(self) -> list[dict]:
        out = []
        for model, horizon in self.groups():
            fm = np.array(list(self.fold_means(model, horizon).values()))
            row = {"model": model, "horizon": horizon, "n_rows": sum(
                1 for r in self.rows if r["model"] == model and r["horizon"] == horizon),
                "mean_auc": math.fsum(fm) / len(fm), "min_fold_auc": float(fm.min()),
                "std_fold_auc": float(fm.std())}
            try:
                row["pooled_auc"] = self.pooled_auc(model, horizon)
            except (KeyError, SingleClass):
                row["pooled_auc"] = float("nan")
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        _write_rows(path, REPORT_COLUMNS, self.rows)

    def write_summary(self, path) -> None:
        _write_rows(path, ("model", "horizon", "n_rows", "mean_auc", "min_fold_auc",
                           "std_fold_auc", "pooled_auc"), self.summary())

    def write_predictions(self, path) -> None:
        _write_rows(path, ("model", "fold", "seed", "horizon", "student_id", "label", "score"),
                    self.predictions)

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                h = r["horizon"]
                rows.append({"model": r["model"], "fold": int(r["fold"]), "seed": int(r["seed"]),
                             "horizon": h if h == FULL else int(h), "auc": float(r["auc"])})
        return cls(rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _row(model, fold, seed, horizon, value):
    return {"model": model, "fold": int(fold), "seed": int(seed), "horizon": horizon,
            "auc": float(value)}


def _preds(model, fold, seed, horizon, ids, labels, scores):
    return [{"model": model, "fold": int(fold), "seed": int(seed), "horizon": horizon,
             "student_id": sid, "label": int(y), "score": float(s)}
            for sid, y, s in zip(ids, labels, scores)]


def _seed_list(seeds) -> list[int]:
    return list(range(seeds)) if isinstance(seeds, (int, np.integer)) else [int(s) for s in seeds]


def grid_configs(grid=GRID) -> list[tuple]:
    """All ``(n_trees, criterion, max_depth, min_samples_split)`` in enumeration order."""
    return list(itertools.product(grid["n_trees"], grid["criterion"], grid["max_depth"],
                                  grid["min_samples_split"]))


def inner_search(X, y, folds, outer_fold, grid=GRID, seed=0, access_log=None):
    """Mean inner AUC of every grid config, reusing the outer-train folds.

    Returns ``(best_config, scores)`` where ``scores`` maps config -> mean AUC.
    Ties go to the config listed first.
    """
    inner_folds = [f for f in np.unique(folds) if f != outer_fold]
    totals = {cfg: [] for cfg in grid_configs(grid)}
    for f in inner_folds:
        tr = np.nonzero((folds != outer_fold) & (folds != f))[0]
        va = np.nonzero(folds == f)[0]
        if access_log is not None:
            access_log.append(("inner_train", outer_fold, tr))
            access_log.append(("inner_val", outer_fold, va))
        for crit in grid["criterion"]:
            grown = grow_for_grid(X[tr], y[tr], crit, grid, seed=seed)
            probs = grown.grid_proba(X[va], grid["n_trees"], grid["max_depth"],
                                     grid["min_samples_split"])
            for (n, d, m), p in probs.items():
                totals[(n, crit, d, m)].append(auc(p, y[va]))
    scores = {cfg: math.fsum(v) / len(v) for cfg, v in totals.items()}
    best = None
    for cfg in grid_configs(grid):
        if best is None or scores[cfg] > scores[best]:
            best = cfg
    return best, scores


def _rf_job(X, y, ids, plan, fold, seed, master_seed, grid, access_log):
    start = time.perf_counter()
    rs = job_seed(master_seed, fold, seed)
    folds = plan.folds
    (n, crit, d, m), _ = inner_search(X, y, folds, fold, grid, rs, access_log)
    tr, te = plan.train_index(fold), plan.test_index(fold)
    if access_log is not None:
        access_log.append(("outer_train", fold, tr))
        access_log.append(("outer_test", fold, te))
    forest = fit_forest(X[tr], y[tr], ForestConfig(n, crit, d, m, seed=rs))
    p = predict_proba(forest, X[te])
    chosen = {"fold": fold, "seed": seed, "n_trees": n, "criterion": crit, "max_depth": d,
              "min_samples_split": m}
    return (_row("rf", fold, seed, FULL, auc(p, y[te])),
            _preds("rf", fold, seed, FULL, [ids[i] for i in te], y[te], p), chosen,
            time.perf_counter() - start)


def nested_cv_rf(X, y, plan: FoldPlan, seeds=1, grid=GRID, master_seed=0, n_jobs=1,
                 student_ids=None, access_log=None) -> EvalReport:
    """Outer CV over ``plan``; each outer-train part runs the full grid search.

    ``access_log`` (a list) records every index set the search touches. It
    forces serial execution.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    ids = student_ids if student_ids is not None else plan.student_ids
    jobs = [(f, s) for f in range(plan.k) for s in _seed_list(seeds)]
    if access_log is not None:
        n_jobs = 1
    out = Parallel(n_jobs=n_jobs)(
        delayed(_rf_job)(X, y, ids, plan, f, s, master_seed, grid, access_log) for f, s in jobs)
    rep = EvalReport()
    for row, preds, chosen, elapsed in out:
        rep.rows.append(row)
        rep.predictions += preds
        rep.chosen.append(chosen)
        rep.timings.append(elapsed)
    return rep.sort()


def _truncated(matrices, c_s, horizon, norm_window):
    if horizon == FULL:
        return list(matrices)
    return [truncate(StateActionFeatures("", M, None, c_s, M.shape[1] - c_s), horizon,
                     norm_window).matrix for M in matrices]


def _nn_job(matrices, y, ids, c_s, variant, hyper, plan, fold, seed, master_seed, horizons,
            norm_window, short_policy):
    from .nn import estimator_for

    start = time.perf_counter()
    rs = job_seed(master_seed, fold, seed)
    tr, te = plan.train_index(fold), plan.test_index(fold)
    lens = np.array([len(matrices[i]) for i in te])
    real = [h for h in horizons if h != FULL]
    if real and not np.any(lens >= min(real)):
        raise EmptyHorizonCohort(f"no test student in fold {fold} reaches {min(real)} steps")
    scores = {}
    for h in horizons:
        Xh = _truncated(matrices, c_s, h, norm_window)
        est = estimator_for(variant, random_state=rs, **hyper)
        try:
            est.fit([Xh[i] for i in tr], y[tr])
        except DivergedLoss as e:
            raise DivergedLoss(f"{variant} fold {fold} seed {seed} horizon {h}: {e}") from e
        scores[h] = est.predict_proba([Xh[i] for i in te])[:, 1]
    if short_policy == "cascade":
        scores = _cascade(scores, lens, real)
    model = "sa_gru" if variant in ("sa_gru", "sa-gru") else "gru"
    rows, preds = [], []
    for h in horizons:
        rows.append(_row(model, fold, seed, h, auc(scores[h], y[te])))
        preds += _preds(model, fold, seed, h, [ids[i] for i in te], y[te], scores[h])
    return rows, preds, time.perf_counter() - start


def _cascade(scores, lens, horizons):
    """Students shorter than ``l`` keep the prediction of the largest ``l' <= len``."""
    out = dict(scores)
    for h in horizons:
        s = scores[h].copy()
        for i, n in enumerate(lens):
            if n < h:
                fit = [g for g in horizons if g <= n]
                if fit:
                    s[i] = scores[max(fit)][i]
        out[h] = s
    return out


def _run_nn(fs, variant, plan, seeds, hyper, master_seed, n_jobs, horizons, norm_window,
            short_policy) -> EvalReport:
    if short_policy not in SHORT_POLICIES:
        raise ValueError(f"short_policy must be one of {SHORT_POLICIES}")
    if fs.mode != "sa":
        raise ValueError("neural models need state-action features")
    hyper = dict(hyper or {})
    if "dropout" not in hyper:
        hyper["dropout"] = DEFAULT_DROPOUT.get(fs.meta.get("schema"), 0.02)
    y = np.asarray(fs.labels, dtype=np.int64)
    jobs = [(f, s) for f in range(plan.k) for s in _seed_list(seeds)]
    out = Parallel(n_jobs=n_jobs)(
        delayed(_nn_job)(fs.matrices, y, fs.student_ids, fs.c_s, variant, hyper, plan, f, s,
                         master_seed, horizons, norm_window, short_policy) for f, s in jobs)
    rep = EvalReport()
    for rows, preds, elapsed in out:
        rep.rows += rows
        rep.predictions += preds
        rep.timings.append(elapsed)
    return rep.sort()


def cv_seeded_nn(fs, variant, plan: FoldPlan, seeds=60, hyper=None, master_seed=0,
                 n_jobs=1) -> EvalReport:
    """Fixed-architecture CV: one model per ``(fold, seed)`` on the full sequences."""
    return _run_nn(fs, variant, plan, seeds, hyper, master_seed, n_jobs, [FULL], "truncated",
                   "pad")


def early_protocol(fs, variant, plan: FoldPlan, horizons=(30, 40, 50, 60), seeds=10, hyper=None,
                   master_seed=0, n_jobs=1, short_policy="pad",
                   norm_window="truncated") -> EvalReport:
    """One model per horizon trained and scored on the first ``l`` steps.

    Test students shorter than ``l`` are scored on their whole sequence
    (``pad``) or keep the score of the largest horizon they reach
    (``cascade``). ``FULL`` may appear last and matches :func:`cv_seeded_nn`.
    """
    horizons = list(horizons)
    real = [h for h in horizons if h != FULL]
    if real != sorted(real) or len(set(real)) != len(real) or any(h < 1 for h in real):
        raise ValueError("horizons must be distinct, positive and ascending")
    if FULL in horizons and horizons[-1] != FULL:
        raise ValueError("FULL must be the last horizon")
    return _run_nn(fs, variant, plan, seeds, hyper, master_seed, n_jobs, horizons, norm_window,
                   short_policy)
