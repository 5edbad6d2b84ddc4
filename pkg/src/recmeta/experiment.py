"""User-grouped cross-validation of the two meta-learners and report assembly.

The performance matrix is computed once from the temporal split; the
cross-validation only partitions its rows. Each fold trains both
meta-learners on training-fold users and scores them, together with the
SBA and VBA baselines, on the held-out users. Dataset-level numbers are the
unweighted mean over folds; gains and gap closed are then derived from those
averaged performance columns so the report is self-consistent.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from recmeta.ground_truth import PerformanceMatrix, build_performance_matrix, single_best, virtual_best
from recmeta.meta_learner import (
    GBTParams,
    MetaDataset,
    MetaModel,
    algo_feature_map,
    build_user_algo_dataset,
    build_user_only_dataset,
    rank_algorithms,
    train_meta_model,
)

UNDEFINED = "n/a"
REPORT_VERSION = 1

DEFAULT_GRID = tuple(
    GBTParams(n_trees=n, max_depth=d, learning_rate=lr, min_samples_leaf=20, subsample=0.8)
    for n, d, lr in product((100, 300), (3, 6), (0.05, 0.1))
)


class StageError(RuntimeError):
    """Failure in one pipeline stage; the stage name leads the message."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    n_folds: int = 5
    seed: int = 0
    k: int = 10
    grid: tuple[GBTParams, ...] = DEFAULT_GRID
    sba_global: bool = False
    tie_mode: str = "value"  # which top-k accuracy fills the main columns
    holdout_fraction: float = 0.2
    threads: int = 1

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if not self.grid:
            raise ValueError("empty tuning grid")
        if self.tie_mode not in ("value", "index"):
            raise ValueError("tie_mode must be 'value' or 'index'")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")


# folds ----------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignments: Mapping[str, int]
    seed: int

    def test_users(self, fold: int, order: Sequence[str] | None = None) -> list[str]:
        order = sorted(self.assignments) if order is None else order
        return [u for u in order if self.assignments[u] == fold]

    def train_users(self, fold: int, order: Sequence[str] | None = None) -> list[str]:
        order = sorted(self.assignments) if order is None else order
        return [u for u in order if self.assignments[u] != fold]


def make_folds(users: Sequence[str], n: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle of the sorted user list, then round-robin assignment."""
    users = sorted(set(users))
    if n < 2:
        raise ValueError("need at least 2 folds")
    if len(users) < n:
        raise ValueError(f"{len(users)} users cannot fill {n} folds")
    perm = np.random.default_rng(seed).permutation(len(users))
    return FoldPlan(n, {users[p]: pos % n for pos, p in enumerate(perm)}, seed)


# tuning ---------------------------------------------------------------------

def _holdout_split(users: list[str], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    users = sorted(users)
    n_hold = max(1, round(fraction * len(users)))
    perm = np.random.default_rng(seed).permutation(len(users))
    hold = set(users[p] for p in perm[:n_hold])
    return [u for u in users if u not in hold], [u for u in users if u in hold]


def _target_matrix(data: MetaDataset) -> np.ndarray:
    return data.targets if data.targets.ndim == 2 else data.targets[:, None]


def tune_gbt(
    train_fold: MetaDataset, grid: Sequence[GBTParams] = DEFAULT_GRID, seed: int = 0, holdout_fraction: float = 0.2
) -> GBTParams:
    """Grid point with the lowest MSE on an inner user-grouped holdout.

    Ties go to the earliest grid entry. Grid points that differ only in
    ``n_trees`` share one fit: stage ``n`` of a longer fit is exactly the
    ``n``-tree model, because subsample draws are consumed stage by stage.
    The returned params carry ``seed``.
    """
    grid = [replace(g, seed=seed) for g in grid]
    if not grid:
        raise ValueError("empty tuning grid")
    if len(grid) == 1:
        return grid[0]
    users = sorted(set(train_fold.users()))
    if len(users) < 2:
        return grid[0]
    inner, hold = _holdout_split(users, holdout_fraction, seed)
    fit_data, eval_data = train_fold.for_users(inner), train_fold.for_users(hold)
    y_eval = _target_matrix(eval_data)

    groups: dict[GBTParams, list[int]] = {}
    for n, g in enumerate(grid):
        groups.setdefault(replace(g, n_trees=0), []).append(n)
    mse = [math.inf] * len(grid)
    for base, members in groups.items():
        longest = max(grid[n].n_trees for n in members)
        model = train_meta_model(fit_data, replace(base, n_trees=longest))
        # stages[r][t]: regressor r after t trees
        stages = [list(r.staged_predict(eval_data.rows)) for r in model.regressors]
        for n in members:
            pred = np.column_stack([s[grid[n].n_trees] for s in stages])
            mse[n] = float(np.mean((pred - y_eval) ** 2))
    best = min(range(len(grid)), key=lambda n: (mse[n], n))
    return grid[best]


# selector evaluation --------------------------------------------------------

@dataclass(frozen=True)
class SelectorMetrics:
    avg_ndcg: float
    acc1: float  # % of users whose top-1 attains the row maximum (any tied argmax)
    acc3: float
    acc1_index: float  # same, but only the lowest-index argmax counts
    acc3_index: float
    zero_row_rate: float  # % of rows that are all zero (every pick "correct")

    def accuracy(self, tie_mode: str = "value") -> tuple[float, float]:
        if tie_mode == "index":
            return self.acc1_index, self.acc3_index
        return self.acc1, self.acc3


def evaluate_selector(P_test: PerformanceMatrix, selections) -> SelectorMetrics:
    """Score ranked selections (one algo_id list per row of ``P_test``).

    ``selections`` is either aligned with ``P_test.user_ids`` or a mapping
    from user_id to ranked list.
    """
    if isinstance(selections, Mapping):
        missing = [u for u in P_test.user_ids if u not in selections]
        if missing:
            raise KeyError(f"no selection for users {missing[:5]}")
        selections = [selections[u] for u in P_test.user_ids]
    if len(selections) != len(P_test.user_ids) or not len(selections):
        raise ValueError("selections must cover every test user")
    col = {a: j for j, a in enumerate(P_test.algo_ids)}
    V = P_test.values
    picked, hit1, hit3, hit1i, hit3i = [], 0, 0, 0, 0
    for row, ranked in zip(V, selections):
        top = [col[a] for a in ranked[:3]]
        best = row.max()
        first_best = int(np.argmax(row))
        picked.append(row[top[0]])
        hit1 += row[top[0]] == best
        hit3 += any(row[j] == best for j in top)
        hit1i += top[0] == first_best
        hit3i += first_best in top
    n = len(selections)
    zero = float(np.mean(V.max(axis=1) == 0)) * 100
    return SelectorMetrics(
        math.fsum(picked) / n, 100 * hit1 / n, 100 * hit3 / n, 100 * hit1i / n, 100 * hit3i / n, zero
    )


def rankings(model: MetaModel, U: np.ndarray, A: Mapping[str, np.ndarray] | None = None) -> list[list[str]]:
    pred = model.predict_matrix(U, A)
    return [[a for a, _ in rank_algorithms(row, model.algo_ids)] for row in pred]


# folds in detail ------------------------------------------------------------

@dataclass(frozen=True)
class FoldResult:
    fold: int
    n_train_users: int
    n_test_users: int
    sba_algo: str
    sba_perf: float
    vba_perf: float
    user_only: SelectorMetrics
    user_algo: SelectorMetrics
    params_user_only: GBTParams
    params_user_algo: GBTParams


def fit_fold_models(
    P: PerformanceMatrix,
    F: Mapping[str, np.ndarray],
    A: Mapping[str, np.ndarray],
    train_users: Sequence[str],
    config: ExperimentConfig,
    seed: int,
    user_feature_names: Sequence[str] | None = None,
    algo_feature_names: Sequence[str] | None = None,
) -> tuple[MetaModel, MetaModel]:
    """Tune and train both meta-learners on ``train_users`` only."""
    P_train = P.rows(train_users)
    kw_u = {"user_feature_names": user_feature_names} if user_feature_names else {}
    kw_a = {"algo_feature_names": algo_feature_names} if algo_feature_names else {}
    models = []
    for data in (
        build_user_only_dataset(P_train, F, **kw_u),
        build_user_algo_dataset(P_train, F, A, **kw_u, **kw_a),
    ):
        params = tune_gbt(data, config.grid, seed, config.holdout_fraction)
        models.append(train_meta_model(data, params))
    return models[0], models[1]


def _run_fold(fold, P, F, A, plan, config, names) -> FoldResult:
    seed = config.seed + fold
    train_users = plan.train_users(fold, P.user_ids)
    test_users = plan.test_users(fold, P.user_ids)
    P_test = P.rows(test_users)
    sba_algo, _ = single_best(P if config.sba_global else P.rows(train_users))
    m_user, m_algo = fit_fold_models(P, F, A, train_users, config, seed, *names)
    U_test = np.array([F[u] for u in test_users], dtype=np.float64)
    return FoldResult(
        fold,
        len(train_users),
        len(test_users),
        sba_algo,
        math.fsum(P_test.column(sba_algo).tolist()) / len(test_users),
        virtual_best(P_test),
        evaluate_selector(P_test, rankings(m_user, U_test)),
        evaluate_selector(P_test, rankings(m_algo, U_test, A)),
        m_user.params,
        m_algo.params,
    )


# report ---------------------------------------------------------------------

COLUMNS = (
    "sba_algo",
    "sba_perf",
    "vba_perf",
    "perf_user_only",
    "acc1_user_only",
    "acc3_user_only",
    "perf_user_algo",
    "gain_vs_sba",
    "gain_vs_user_ml",
    "acc1_user_algo",
    "acc3_user_algo",
    "gap_closed",
)

HEADERS = (
    "SBA",
    "SBA Perf",
    "VBA Perf",
    "User Perf",
    "User Top-1",
    "User Top-3",
    "User+Algo Perf",
    "Gain vs SBA",
    "Gain vs User",
    "User+Algo Top-1",
    "User+Algo Top-3",
    "Gap Closed",
)


def _ratio(num: float, den: float) -> float | None:
    return 100.0 * num / den if den > 0 else None


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    sba_algo: str
    sba_perf: float
    vba_perf: float
    perf_user_only: float
    acc1_user_only: float
    acc3_user_only: float
    perf_user_algo: float
    acc1_user_algo: float
    acc3_user_algo: float
    gain_vs_sba: float | None = field(init=False)
    gain_vs_user_ml: float | None = field(init=False)
    gap_closed: float | None = field(init=False)
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        # derived columns: always recomputed from this row's perf columns
        set_ = object.__setattr__
        set_(self, "gain_vs_sba", _ratio(self.perf_user_algo - self.sba_perf, self.sba_perf))
        set_(self, "gain_vs_user_ml", _ratio(self.perf_user_algo - self.perf_user_only, self.perf_user_only))
        set_(self, "gap_closed", _ratio(self.perf_user_algo - self.sba_perf, self.vba_perf - self.sba_perf))

    def as_dict(self) -> dict:
        return {"dataset": self.dataset, **{c: getattr(self, c) for c in COLUMNS}, "extra": self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> ReportRow:
        keep = ("dataset", "sba_algo", "sba_perf", "vba_perf", "perf_user_only", "acc1_user_only",
                "acc3_user_only", "perf_user_algo", "acc1_user_algo", "acc3_user_algo")
        return cls(**{k: d[k] for k in keep}, extra=d.get("extra", {}))


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def average_row(rows: Sequence[ReportRow], name: str = "Average") -> ReportRow:
    if not rows:
        raise ValueError("no rows to average")
    numeric = ("sba_perf", "vba_perf", "perf_user_only", "acc1_user_only", "acc3_user_only",
               "perf_user_algo", "acc1_user_algo", "acc3_user_algo")
    avg = {c: _mean(getattr(r, c) for r in rows) for c in numeric}
    return ReportRow(name, "-", **avg)


def summarize_folds(dataset: str, folds: Sequence[FoldResult], tie_mode: str = "value") -> ReportRow:
    """Dataset row: unweighted mean over folds of every fold-level number."""
    acc_u = [f.user_only.accuracy(tie_mode) for f in folds]
    acc_a = [f.user_algo.accuracy(tie_mode) for f in folds]
    counts = Counter(f.sba_algo for f in folds)
    top = max(counts.values())
    sba_algo = min(a for a, c in counts.items() if c == top)
    return ReportRow(
        dataset,
        sba_algo,
        _mean(f.sba_perf for f in folds),
        _mean(f.vba_perf for f in folds),
        _mean(f.user_only.avg_ndcg for f in folds),
        _mean(a[0] for a in acc_u),
        _mean(a[1] for a in acc_u),
        _mean(f.user_algo.avg_ndcg for f in folds),
        _mean(a[0] for a in acc_a),
        _mean(a[1] for a in acc_a),
        extra={
            "zero_row_rate": _mean(f.user_only.zero_row_rate for f in folds),
            "tie_mode": tie_mode,
            "sba_algo_per_fold": [f.sba_algo for f in folds],
        },
    )


def _fmt(column: str, value) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, str):
        return value
    if column in ("gain_vs_sba", "gain_vs_user_ml"):
        return f"{value:+.2f}%"
    if column.startswith("acc") or column == "gap_closed":
        return f"{value:.2f}%"
    return f"{value:.4f}"


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ReportRow, ...]
    average: ReportRow
    folds: Mapping[str, tuple[FoldResult, ...]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Sequence[ReportRow], folds=None, config=None) -> ExperimentReport:
        return cls(tuple(rows), average_row(rows), dict(folds or {}), dict(config or {}))

    @classmethod
    def combine(cls, reports: Sequence[ExperimentReport]) -> ExperimentReport:
        rows, folds = [], {}
        for r in reports:
            rows.extend(r.rows)
            folds.update(r.folds)
        return cls.from_rows(rows, folds, reports[0].config if reports else {})

    def table(self) -> list[list[str]]:
        out = [["Dataset", *HEADERS]]
        for row in (*self.rows, self.average):
            out.append([row.dataset, *(_fmt(c, getattr(row, c)) for c in COLUMNS)])
        return out

    def to_text(self) -> str:
        cells = self.table()
        widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
        lines = []
        for n, r in enumerate(cells):
            if n == len(cells) - 1:
                lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
            lines.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))))
            if n == 0:
                lines.append("-" * len(lines[-1]))
        for row in self.rows:
            zr = row.extra.get("zero_row_rate")
            if zr is not None:
                lines.append(f"{row.dataset}: {zr:.2f}% of held-out users have all-zero NDCG rows")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", *COLUMNS])
        for row in (*self.rows, self.average):
            w.writerow([row.dataset, *(UNDEFINED if (v := getattr(row, c)) is None else
                                       (v if isinstance(v, str) else repr(float(v))) for c in COLUMNS)])
        return buf.getvalue()

    def to_json(self) -> str:
        folds = {
            name: [
                {
                    **{k: v for k, v in asdict(f).items() if k not in ("params_user_only", "params_user_algo")},
                    "params_user_only": asdict(f.params_user_only),
                    "params_user_algo": asdict(f.params_user_algo),
                }
                for f in fs
            ]
            for name, fs in self.folds.items()
        }
        return json.dumps(
            {
                "version": REPORT_VERSION,
                "rows": [r.as_dict() for r in self.rows],
                "average": self.average.as_dict(),
                "folds": folds,
                "config": self.config,
            },
            indent=1,
            sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ExperimentReport:
        d = json.loads(text)
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        folds = {}
        for name, fs in d.get("folds", {}).items():
            folds[name] = tuple(
                FoldResult(
                    **{
                        **f,
                        "user_only": SelectorMetrics(**f["user_only"]),
                        "user_algo": SelectorMetrics(**f["user_algo"]),
                        "params_user_only": GBTParams(**f["params_user_only"]),
                        "params_user_algo": GBTParams(**f["params_user_algo"]),
                    }
                )
                for f in fs
            )
        return cls.from_rows([ReportRow.from_dict(r) for r in d["rows"]], folds, d.get("config", {}))

    def write(self, out_dir: str | Path, stem: str = "report") -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out_dir / f"{stem}.csv", "txt": out_dir / f"{stem}.txt", "json": out_dir / f"{stem}.json"}
        paths["csv"].write_text(self.to_csv(), encoding="utf-8")
        paths["txt"].write_text(self.to_text(), encoding="utf-8")
        paths["json"].write_text(self.to_json(), encoding="utf-8")
        return paths


# drivers --------------------------------------------------------------------

def _config_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["grid"] = [asdict(g) for g in config.grid]
    d.pop("threads")  # does not affect results
    return d


def run_meta_experiment(
    P: PerformanceMatrix,
    F: Mapping[str, np.ndarray],
    A,
    config: ExperimentConfig = ExperimentConfig(),
    dataset: str = "dataset",
    user_feature_names: Sequence[str] | None = None,
    algo_feature_names: Sequence[str] | None = None,
) -> ExperimentReport:
    """Cross-validate both meta-learners over the rows of ``P``."""
    A = algo_feature_map(A)
    plan = make_folds(P.user_ids, config.n_folds, config.seed)
    names = (user_feature_names, algo_feature_names)
    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        folds = list(pool.map(lambda k: _run_fold(k, P, F, A, plan, config, names), range(config.n_folds)))
    row = summarize_folds(dataset, folds, config.tie_mode)
    return ExperimentReport.from_rows([row], {dataset: tuple(folds)}, _config_dict(config))


def run_experiment(
    split,
    portfolio,
    config: ExperimentConfig = ExperimentConfig(),
    dataset: str = "dataset",
    cache_dir: str | Path | None = None,
) -> ExperimentReport:
    """Full pipeline from a temporal split: ground truth, features, CV."""
    from recmeta.code_metrics import portfolio_features
    from recmeta.user_features import as_mapping, user_feature_matrix

    try:
        P = build_performance_matrix(split, portfolio, config.k, config.threads, cache_dir)
    except Exception as exc:
        raise StageError("ground-truth", exc) from exc
    try:
        user_ids, U = user_feature_matrix(split, list(P.user_ids))
        A = portfolio_features(portfolio)
    except Exception as exc:
        raise StageError("features", exc) from exc
    try:
        return run_meta_experiment(P, as_mapping(user_ids, U), A, config, dataset)
    except Exception as exc:
        raise StageError("experiment", exc) from exc
