"""Training loop, PR-AUC metric, split protocol, hybrid fusion and reporting.

The protocol mirrors the production evaluation: per split, each encoder
variant is trained on train-1, a two-feature logistic regression fuses its
score with an external baseline score on train-2, and everything is compared
on the test split as PR-AUC gaps versus the baseline, summarized as median
gap with median absolute deviation across splits.
"""

from __future__ import annotations

import json
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ties.errors import ConfigError, DataError, MetricError
from ties.model import (
    ModelConfig,
    SequenceExample,
    TiesModel,
    encode,
    encode_graph,
    load_model,
    model_init,
)
from ties.nn import Parameter, adam_step, clip_gradients, weighted_bce_loss

AUTO = "auto"

_ROW_SUFFIX = {"cnn": "CNN", "rnn": "RNN", "deepset": "Deepset"}
_CANONICAL_KIND_ORDER = ("cnn", "rnn", "deepset")


@dataclass
class TrainConfig:
    lr: float = 0.0005
    clip: float = 1.0
    dropout_p: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    warm_start_path: str | None = None
    pos_weight: float | str = AUTO

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.clip <= 0:
            raise ConfigError(f"gradient clip must be positive, got {self.clip}")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout_p}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(
                f"bad epochs/batch_size: {self.epochs}/{self.batch_size}")
        if self.pos_weight != AUTO and float(self.pos_weight) <= 0:
            raise ConfigError(f"pos_weight must be positive, got {self.pos_weight}")


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    train_prauc: list[float] = field(default_factory=list)
    pos_weight: float = 1.0


def resolve_pos_weight(labels: Sequence[int]) -> float:
    """Weight that balances positive and negative loss mass: #neg / #pos."""
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError(
            "automatic class weighting needs both classes in the training set")
    return n_neg / n_pos


def train(model: TiesModel, dataset: Sequence[SequenceExample], cfg: TrainConfig,
          track_prauc: bool = False) -> TrainResult:
    """Train in place: shuffled mini-batches, weighted BCE mean, clip, Adam.

    With ``warm_start_path`` the initial parameter values come from that
    checkpoint instead of the fresh initialization. Deterministic per seed.
    """
    if not dataset:
        raise ConfigError("training needs a non-empty dataset")
    labels = []
    for ex in dataset:
        if ex.label is None:
            raise DataError(f"unlabeled example {ex.source_id!r} in training set")
        labels.append(ex.label)
    pos_weight = (resolve_pos_weight(labels) if cfg.pos_weight == AUTO
                  else float(cfg.pos_weight))

    if cfg.warm_start_path is not None:
        model.load_parameters_from(load_model(cfg.warm_start_path))

    params = model.parameters()
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(pos_weight=pos_weight)
    n = len(dataset)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            for i in batch:
                ex = dataset[int(i)]
                prob, _ = encode_graph(model, ex, training=True, rng=rng,
                                       dropout_p=cfg.dropout_p)
                loss = weighted_bce_loss(prob, ex.label, pos_weight)
                epoch_loss += loss.item()
                loss.backward(seed=1.0 / len(batch))
            clip_gradients(params, cfg.clip)
            for p in params:
                adam_step(p, cfg.lr)
        result.losses.append(epoch_loss / n)
        if track_prauc:
            result.train_prauc.append(
                pr_auc(scores_for(model, dataset), labels))
    return result


def scores_for(model: TiesModel, examples: Sequence[SequenceExample]) -> list[float]:
    return [encode(model, ex).score for ex in examples]


# ---------------------------------------------------------------------------
# metric


def pr_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: area under the precision-recall curve.

    Examples are ranked by descending score with ties broken by stable input
    order; the area is sum_k (R_k - R_{k-1}) * P_k over positive hits.
    """
    if len(scores) != len(labels):
        raise MetricError(f"{len(scores)} scores vs {len(labels)} labels")
    n_pos = sum(1 for y in labels if y == 1)
    if n_pos == 0 or n_pos == len(labels):
        raise MetricError("PR-AUC needs both classes present")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            tp += 1
            recall = tp / n_pos
            ap += (recall - prev_recall) * (tp / rank)
            prev_recall = recall
    return ap


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ConfigError(f"need three positive fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"fractions must sum to 1, got {sum(self.fractions)}")


def split(dataset: Sequence, spec: SplitSpec) -> tuple[list, list, list]:
    """Seeded permutation then contiguous cuts: disjoint and exhaustive."""
    n = len(dataset)
    if n < 3:
        raise ConfigError(f"cannot three-way split {n} items")
    perm = np.random.default_rng(spec.seed).permutation(n)
    c1 = int(spec.fractions[0] * n)
    c2 = int((spec.fractions[0] + spec.fractions[1]) * n)
    if c1 < 1 or c2 - c1 < 1 or n - c2 < 1:
        raise ConfigError(
            f"degenerate fractions {spec.fractions} for {n} items "
            f"(part sizes {c1}/{c2 - c1}/{n - c2})")
    return ([dataset[int(i)] for i in perm[:c1]],
            [dataset[int(i)] for i in perm[c1:c2]],
            [dataset[int(i)] for i in perm[c2:]])


# ---------------------------------------------------------------------------
# hybrid fusion


@dataclass
class HybridFit:
    w1: float  # TIES-score coefficient
    w2: float  # baseline-score coefficient
    bias: float
    converged: bool
    grad_norm: float
    iterations: int


def train_hybrid(ties_scores: Sequence[float], baseline_scores: Sequence[float],
                 labels: Sequence[int], lr: float = 0.05,
                 max_iterations: int = 10_000, tol: float = 1e-6) -> HybridFit:
    """Two-feature logistic regression by full-batch Adam.

    Stops when the gradient norm drops below ``tol`` or after
    ``max_iterations``; a non-converged fit is still returned, with its final
    gradient norm, since separable data drives the weights off to infinity.
    """
    if not (len(ties_scores) == len(baseline_scores) == len(labels)):
        raise MetricError("hybrid fit inputs must have equal length")
    y = np.asarray(labels, dtype=np.float64)
    if y.min() == y.max():
        raise MetricError("hybrid fit needs both classes present")
    x = np.column_stack([np.asarray(ties_scores, dtype=np.float64),
                         np.asarray(baseline_scores, dtype=np.float64)])
    theta = Parameter(np.zeros((1, 3)))  # [w1, w2, bias]
    n = len(y)
    grad_norm = float("inf")
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        w = theta.value[0]
        z = x @ w[:2] + w[2]
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        gz = (p - y) / n
        grad = np.array([[float(x[:, 0] @ gz), float(x[:, 1] @ gz), float(gz.sum())]])
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return HybridFit(w1=float(w[0]), w2=float(w[1]), bias=float(w[2]),
                             converged=True, grad_norm=grad_norm,
                             iterations=iterations)
        theta.grad[:] = grad
        adam_step(theta, lr)
    w = theta.value[0]
    return HybridFit(w1=float(w[0]), w2=float(w[1]), bias=float(w[2]),
                     converged=False, grad_norm=grad_norm, iterations=iterations)


def hybrid_scores(fit: HybridFit, ties_scores: Sequence[float],
                  baseline_scores: Sequence[float]) -> list[float]:
    z = (fit.w1 * np.asarray(ties_scores, dtype=np.float64)
         + fit.w2 * np.asarray(baseline_scores, dtype=np.float64) + fit.bias)
    return list(1.0 / (1.0 + np.exp(-np.clip(z, -500, 500))))


# ---------------------------------------------------------------------------
# reporting


@dataclass
class EvalReport:
    model_name: str
    candidate_prauc: list[float]
    reference_prauc: list[float]
    gaps: list[float]
    median_gap: float
    mad: float


def median_gap_report(runs: Sequence[tuple[float, float]],
                      model_name: str = "") -> EvalReport:
    """Median over splits of (candidate - reference) PR-AUC, with MAD."""
    if len(runs) < 3:
        raise ConfigError(f"median-gap report needs >= 3 splits, got {len(runs)}")
    candidate = [c for c, _ in runs]
    reference = [r for _, r in runs]
    gaps = [c - r for c, r in runs]
    med = statistics.median(gaps)
    mad = statistics.median(abs(g - med) for g in gaps)
    return EvalReport(model_name=model_name, candidate_prauc=candidate,
                      reference_prauc=reference, gaps=gaps,
                      median_gap=med, mad=mad)


def _derived_seed(master: int, split_i: int, kind_i: int, salt: int) -> int:
    return master * 1_000_003 + split_i * 10_007 + kind_i * 101 + salt


def _labels_of(examples: Sequence[SequenceExample]) -> list[int]:
    return [ex.label for ex in examples]


def _baseline_of(examples: Sequence[SequenceExample],
                 baseline: Mapping[str, float]) -> list[float]:
    out = []
    for ex in examples:
        if ex.source_id not in baseline:
            raise DataError(f"no baseline score for source {ex.source_id!r}")
        out.append(baseline[ex.source_id])
    return out


def run_protocol(dataset: Sequence[SequenceExample],
                 baseline: Mapping[str, float],
                 encoder_kinds: Sequence[str],
                 n_splits: int,
                 base_config: ModelConfig,
                 train_cfg: TrainConfig,
                 fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                 master_seed: int = 0,
                 max_workers: int | None = None) -> list[EvalReport]:
    """Train every variant on each split and report gaps versus the baseline.

    Output rows are the solo encoders (TIES-*) followed by the fused models
    (Hybrid+*). Splits are resampled with seeds master_seed + split index;
    candidate and reference are evaluated on the same test split (paired).
    """
    kinds = [k for k in _CANONICAL_KIND_ORDER if k in encoder_kinds]
    if not kinds or set(encoder_kinds) - set(_CANONICAL_KIND_ORDER):
        raise ConfigError(
            f"encoder kinds must be drawn from {_CANONICAL_KIND_ORDER}, got {encoder_kinds}")
    if n_splits < 3:
        raise ConfigError(f"protocol needs >= 3 splits, got {n_splits}")
    if max_workers is None:
        max_workers = int(os.environ.get("TIES_THREADS", "1"))

    def run_one(split_i: int, kind_i: int) -> tuple:
        kind = kinds[kind_i]
        train1, train2, test = split(dataset, SplitSpec(fractions, master_seed + split_i))
        config = replace(base_config, encoder=kind)
        model = model_init(config, _derived_seed(master_seed, split_i, kind_i, 1))
        job_cfg = replace(train_cfg, seed=_derived_seed(master_seed, split_i, kind_i, 2))
        train(model, train1, job_cfg)
        ref = pr_auc(_baseline_of(test, baseline), _labels_of(test))
        solo = pr_auc(scores_for(model, test), _labels_of(test))
        fit = train_hybrid(scores_for(model, train2), _baseline_of(train2, baseline),
                           _labels_of(train2))
        fused = pr_auc(
            hybrid_scores(fit, scores_for(model, test), _baseline_of(test, baseline)),
            _labels_of(test))
        return split_i, kind_i, solo, fused, ref

    jobs = [(i, k) for i in range(n_splits) for k in range(len(kinds))]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(lambda job: run_one(*job), jobs))
    else:
        outcomes = [run_one(*job) for job in jobs]

    solo_runs: dict[int, list[tuple[float, float]]] = {k: [] for k in range(len(kinds))}
    hybrid_runs: dict[int, list[tuple[float, float]]] = {k: [] for k in range(len(kinds))}
    for split_i, kind_i, solo, fused, ref in sorted(outcomes):
        solo_runs[kind_i].append((solo, ref))
        hybrid_runs[kind_i].append((fused, ref))

    reports = [median_gap_report(solo_runs[k], f"TIES-{_ROW_SUFFIX[kinds[k]]}")
               for k in range(len(kinds))]
    reports += [median_gap_report(hybrid_runs[k], f"Hybrid+{_ROW_SUFFIX[kinds[k]]}")
                for k in range(len(kinds))]
    return reports


def format_report_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table in the style of the evaluation summary."""
    name_width = max(len("Model"), max(len(r.model_name) for r in reports))
    lines = [f"{'Model':<{name_width}}  PR-AUC Median Gap +/- MAD"]
    for r in reports:
        lines.append(f"{r.model_name:<{name_width}}  {r.median_gap:+.4f} +/- {r.mad:.4f}")
    return "\n".join(lines) + "\n"


def report_to_json(reports: Sequence[EvalReport]) -> str:
    payload = [
        {
            "model": r.model_name,
            "candidate_prauc": r.candidate_prauc,
            "reference_prauc": r.reference_prauc,
            "gaps": r.gaps,
            "median_gap": r.median_gap,
            "mad": r.mad,
        }
        for r in reports
    ]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def read_baseline_scores(path) -> dict[str, float]:
    """Baseline score TSV: ``source_id<TAB>score`` with score in [0, 1]."""
    scores: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError(f"expected 2 columns, got {len(parts)}")
                value = float(parts[1])
                if not (0.0 <= value <= 1.0):
                    raise ValueError(f"score {value} outside [0, 1]")
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            scores[parts[0]] = value
    return scores


def write_baseline_scores(scores: Mapping[str, float], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid in scores:
            fh.write(f"{sid}\t{scores[sid]:.17g}\n")
