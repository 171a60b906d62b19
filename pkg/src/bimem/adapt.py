"""Adaptation loops: memory-calibrated self-training plus two baselines.

Every run is fully determined by (dataset, predictions, config, seed). The
training path never sees ground-truth labels; they stay inside the trace
evaluator. Per iteration the student is EMA-tracked, the batch is encoded by
the momentum model, memories are stepped, the black-box probabilities are
reweighted by the calibrated memory probabilities, and the student takes one
SGD step on the denoised labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import memory, metrics, model
from .blackbox import PredictionSet
from .data import LabeledDataset, split_by_initial_correctness
from .errors import DataError, InvalidArgumentError
from .memory import FlowConfig

METHODS = ("bimem", "vanilla_st", "confidence_st")

TRACE_COLUMNS = [
    "iter",
    "acc_all",
    "acc_init_correct",
    "acc_init_incorrect",
    "pl_acc_denoised",
    "pl_acc_blackbox",
]
TRACE_HEADER = ",".join(TRACE_COLUMNS)


@dataclass
class AdaptConfig:
    """Hyperparameters for one adaptation run; see ``validate`` for ranges."""

    method: str = "bimem"
    iterations: int = 2000
    batch_size: int = 32
    lr: float = 0.05
    gamma: float = 0.9
    gamma_prime: float = 0.99
    top_n: int = 32
    queue_capacity: int = 256
    flows: FlowConfig = field(default_factory=FlowConfig)
    refresh_interval: int | None = None  # None: one epoch
    warmup_iterations: int | None = None  # None: twenty epochs
    confidence_quantile: float = 0.5
    eval_interval: int = 50
    seed: int = 0
    hidden_dim: int = 32

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.iterations < 0:
            raise InvalidArgumentError(f"iterations must be >= 0, got {self.iterations}")
        if not (1 <= self.top_n <= self.batch_size <= self.queue_capacity):
            raise InvalidArgumentError(
                "expected 1 <= top_n <= batch_size <= queue_capacity, got "
                f"top_n={self.top_n}, batch_size={self.batch_size}, "
                f"queue_capacity={self.queue_capacity}"
            )
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.gamma < 1.0):
            raise InvalidArgumentError(f"gamma must be in [0, 1), got {self.gamma}")
        if not (0.0 <= self.gamma_prime < 1.0):
            raise InvalidArgumentError(f"gamma_prime must be in [0, 1), got {self.gamma_prime}")
        if not (0.0 <= self.confidence_quantile <= 1.0):
            raise InvalidArgumentError(
                f"confidence_quantile must be in [0, 1], got {self.confidence_quantile}"
            )
        if self.eval_interval < 1:
            raise InvalidArgumentError(f"eval_interval must be >= 1, got {self.eval_interval}")
        if self.refresh_interval is not None and self.refresh_interval < 1:
            raise InvalidArgumentError(
                f"refresh_interval must be >= 1 or null, got {self.refresh_interval}"
            )
        if self.warmup_iterations is not None and self.warmup_iterations < 0:
            raise InvalidArgumentError(
                f"warmup_iterations must be >= 0 or null, got {self.warmup_iterations}"
            )
        if self.hidden_dim < 0:
            raise InvalidArgumentError(f"hidden_dim must be >= 0, got {self.hidden_dim}")


@dataclass
class TraceRow:
    iteration: int
    acc_all: float
    acc_init_correct: float | None
    acc_init_incorrect: float | None
    pl_acc_denoised: float
    pl_acc_blackbox: float


@dataclass
class RunTrace:
    """Eval-point metrics of one run; iterations strictly increasing."""

    rows: list[TraceRow]

    def column(self, name: str) -> list:
        if name == "iter":
            return [r.iteration for r in self.rows]
        if name not in TRACE_COLUMNS:
            raise InvalidArgumentError(f"unknown trace column {name!r}")
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(TRACE_HEADER + "\n")
            for r in self.rows:
                fields = [
                    str(r.iteration),
                    repr(r.acc_all),
                    "" if r.acc_init_correct is None else repr(r.acc_init_correct),
                    "" if r.acc_init_incorrect is None else repr(r.acc_init_incorrect),
                    repr(r.pl_acc_denoised),
                    repr(r.pl_acc_blackbox),
                ]
                fh.write(",".join(fields) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError("missing trace header", line=1) from None
            if header != TRACE_COLUMNS:
                raise DataError(f"unexpected trace header {header!r}", line=1)
            rows = []
            for line_no, row in enumerate(reader, start=2):
                if len(row) != len(TRACE_COLUMNS):
                    raise DataError(f"expected {len(TRACE_COLUMNS)} columns", line=line_no)
                try:
                    rows.append(
                        TraceRow(
                            iteration=int(row[0]),
                            acc_all=float(row[1]),
                            acc_init_correct=None if row[2] == "" else float(row[2]),
                            acc_init_incorrect=None if row[3] == "" else float(row[3]),
                            pl_acc_denoised=float(row[4]),
                            pl_acc_blackbox=float(row[5]),
                        )
                    )
                except ValueError as exc:
                    raise DataError(f"unparseable trace value ({exc})", line=line_no) from None
        return cls(rows)


class EpochSampler:
    """Without-replacement batch indices; reshuffles at each epoch boundary."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise InvalidArgumentError("sampler needs at least one sample")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._cursor = 0

    def next_batch(self) -> np.ndarray:
        if self._cursor >= self.n:
            self._order = self.rng.permutation(self.n)
            self._cursor = 0
        batch = self._order[self._cursor : self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return batch


@dataclass(frozen=True)
class _UnlabeledInputs:
    """What the training path is allowed to see: no ground truth."""

    ids: np.ndarray
    features: np.ndarray
    pred_yhat: np.ndarray
    pred_probs: np.ndarray


class _TraceEvaluator:
    """Holds ground truth; the only component that ever reads it."""

    def __init__(self, target: LabeledDataset, preds: PredictionSet):
        self.features = target.features
        self.truth = target.labels
        ids_correct, _ = split_by_initial_correctness(target, preds)
        self.mask_correct = np.isin(target.ids, ids_correct)
        yhat, _ = preds.aligned_to(target.ids)
        self.pl_acc_blackbox = metrics.accuracy(yhat, target.labels)

    def row(
        self, iteration: int, student: model.ClassifierParams, denoised: np.ndarray
    ) -> TraceRow:
        _, probs = model.forward_batch(student, self.features)
        pred = probs.argmax(axis=1)
        mc = self.mask_correct
        return TraceRow(
            iteration=iteration,
            acc_all=metrics.accuracy(pred, self.truth),
            acc_init_correct=(
                metrics.accuracy(pred[mc], self.truth[mc]) if mc.any() else None
            ),
            acc_init_incorrect=(
                metrics.accuracy(pred[~mc], self.truth[~mc]) if (~mc).any() else None
            ),
            pl_acc_denoised=metrics.accuracy(denoised, self.truth),
            pl_acc_blackbox=self.pl_acc_blackbox,
        )


def _prepare(
    target: LabeledDataset, preds: PredictionSet, cfg: AdaptConfig, expected_method: str
) -> tuple[_UnlabeledInputs, _TraceEvaluator]:
    cfg.validate()
    if cfg.method != expected_method:
        raise InvalidArgumentError(
            f"config method is {cfg.method!r}, this runner expects {expected_method!r}"
        )
    yhat, probs = preds.aligned_to(target.ids)
    inputs = _UnlabeledInputs(
        ids=target.ids.copy(),
        features=target.features.copy(),
        pred_yhat=yhat.copy(),
        pred_probs=probs.copy(),
    )
    return inputs, _TraceEvaluator(target, preds)


def _init_models(
    inputs: _UnlabeledInputs, cfg: AdaptConfig
) -> tuple[model.ClassifierParams, model.MomentumModel, EpochSampler]:
    n_categories = inputs.pred_probs.shape[1]
    layout = model.Layout(inputs.features.shape[1], cfg.hidden_dim, n_categories)
    student = model.init_params(layout, np.random.default_rng([cfg.seed, 0]))
    mm = model.MomentumModel(student.copy(), cfg.gamma)
    sampler = EpochSampler(
        len(inputs.ids), cfg.batch_size, np.random.default_rng([cfg.seed, 1])
    )
    return student, mm, sampler


def _is_eval_point(t: int, cfg: AdaptConfig) -> bool:
    return t % cfg.eval_interval == 0 or t == cfg.iterations


DEFAULT_WARMUP_EPOCHS = 20


def _epoch_length(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def _resolve_warmup(cfg: AdaptConfig, n: int) -> int:
    """Warm-up length in iterations; the default is twenty epochs.

    All methods train on the raw black-box labels during warm-up: the memory
    method defers backward calibration, the baselines defer label refresh.
    Cold-start features make both mechanisms destructive before the encoder
    has organized on the initial labels.
    """
    if cfg.warmup_iterations is not None:
        return cfg.warmup_iterations
    return DEFAULT_WARMUP_EPOCHS * _epoch_length(n, cfg.batch_size)


def denoise_labels(
    calibrated_probs: np.ndarray,
    calibrated: bool,
    pred_yhat: np.ndarray,
    pred_probs: np.ndarray,
) -> np.ndarray:
    """Black-box labels reweighted by the calibrated memory probabilities.

    When no backward calibration has touched the batch the black-box labels
    pass through unchanged, so a run with all flows disabled degenerates to
    self-training on fixed labels.
    """
    if not calibrated:
        return pred_yhat.copy()
    return (calibrated_probs * pred_probs).argmax(axis=1)


def run_bimem(
    target: LabeledDataset,
    preds: PredictionSet,
    cfg: AdaptConfig,
    step_hook: Callable | None = None,
) -> tuple[model.ClassifierParams, RunTrace]:
    """Full memory-calibrated adaptation loop; returns the student and its trace.

    ``step_hook(t, state, calibrated_probs, applied, labels, student, mm)``
    is called after each iteration's SGD step (used by equivalence tests).
    """
    inputs, evaluator = _prepare(target, preds, cfg, "bimem")
    student, mm, sampler = _init_models(inputs, cfg)
    n_categories = inputs.pred_probs.shape[1]
    warmup = _resolve_warmup(cfg, len(inputs.ids))
    state = memory.BiMemState.create(
        n_categories=n_categories,
        feature_dim=student.layout.feature_dim,
        queue_capacity=cfg.queue_capacity,
        top_n=cfg.top_n,
        centroid_momentum=cfg.gamma_prime,
        warmup=warmup,
    )
    flows = cfg.flows

    def full_set_denoised() -> np.ndarray:
        feats, probs = model.forward_batch(mm.params, inputs.features)
        lt_centroids, lt_mask, st_centroids, st_mask = state.backward_sources()
        cal, applied = memory.sensory_calibration_probs(
            feats, probs, lt_centroids, lt_mask, st_centroids, st_mask, flows, {}
        )
        return denoise_labels(cal, applied, inputs.pred_yhat, inputs.pred_probs)

    rows = [evaluator.row(0, student, full_set_denoised())]
    for t in range(1, cfg.iterations + 1):
        model.momentum_update(mm, student)
        idx = sampler.next_batch()
        x = inputs.features[idx]
        feats, probs = model.forward_batch(mm.params, x)
        batch = [
            memory.MemorySlot(int(inputs.ids[i]), feats[k], probs[k])
            for k, i in enumerate(idx)
        ]
        calibrated_probs, applied = memory.bimem_step(state, batch, flows)
        labels = denoise_labels(
            calibrated_probs, applied, inputs.pred_yhat[idx], inputs.pred_probs[idx]
        )
        model.sgd_step(student, x, labels, cfg.lr)
        if step_hook is not None:
            step_hook(t, state, calibrated_probs, applied, labels, student, mm)
        if _is_eval_point(t, cfg):
            rows.append(evaluator.row(t, student, full_set_denoised()))
    return student, RunTrace(rows)


def _select_top_fraction(probs: np.ndarray, labels: np.ndarray, quantile: float) -> np.ndarray:
    """Per predicted class, mark the top ceil(q * n_c) samples by confidence."""
    mask = np.zeros(labels.shape[0], dtype=bool)
    for c in range(probs.shape[1]):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        k = math.ceil(quantile * members.size)
        if k == 0:
            continue
        order = members[np.argsort(-probs[members, c], kind="stable")]
        mask[order[:k]] = True
    return mask


def _run_self_training(
    target: LabeledDataset,
    preds: PredictionSet,
    cfg: AdaptConfig,
    expected_method: str,
    quantile: float | None,
) -> tuple[model.ClassifierParams, RunTrace]:
    inputs, evaluator = _prepare(target, preds, cfg, expected_method)
    student, mm, sampler = _init_models(inputs, cfg)
    n = len(inputs.ids)
    refresh = cfg.refresh_interval
    if refresh is None:
        refresh = _epoch_length(n, cfg.batch_size)
    warmup = _resolve_warmup(cfg, n)
    labels_current = inputs.pred_yhat.copy()
    selected = np.ones(n, dtype=bool)

    rows = [evaluator.row(0, student, labels_current)]
    for t in range(1, cfg.iterations + 1):
        model.momentum_update(mm, student)
        if t % refresh == 0 and t > warmup:
            _, probs_all = model.forward_batch(mm.params, inputs.features)
            labels_current = probs_all.argmax(axis=1)
            if quantile is not None:
                selected = _select_top_fraction(probs_all, labels_current, quantile)
        idx = sampler.next_batch()
        use = idx[selected[idx]]
        if use.size:
            model.sgd_step(student, inputs.features[use], labels_current[use], cfg.lr)
        if _is_eval_point(t, cfg):
            rows.append(evaluator.row(t, student, labels_current))
    return student, RunTrace(rows)


def run_vanilla_st(
    target: LabeledDataset, preds: PredictionSet, cfg: AdaptConfig
) -> tuple[model.ClassifierParams, RunTrace]:
    """Self-training on black-box labels, refreshed from the momentum model."""
    return _run_self_training(target, preds, cfg, "vanilla_st", None)


def run_confidence_st(
    target: LabeledDataset, preds: PredictionSet, cfg: AdaptConfig
) -> tuple[model.ClassifierParams, RunTrace]:
    """Self-training where each refresh keeps only confident samples per class."""
    return _run_self_training(target, preds, cfg, "confidence_st", cfg.confidence_quantile)


def run(target: LabeledDataset, preds: PredictionSet, cfg: AdaptConfig):
    """Dispatch on ``cfg.method``."""
    runner = {
        "bimem": run_bimem,
        "vanilla_st": run_vanilla_st,
        "confidence_st": run_confidence_st,
    }[cfg.method]
    return runner(target, preds, cfg)


# The seven flow combinations studied in the ablation, from no memory at all
# to the full bi-directional configuration.
ABLATION_ROWS: list[tuple[int, str, FlowConfig]] = [
    (1, "none", FlowConfig.none()),
    (2, "SM->ST,SM<-ST", FlowConfig(True, False, False, True, False, False)),
    (3, "SM->LT,SM<-LT", FlowConfig(False, True, False, False, True, False)),
    (4, "SM->ST,SM->LT,SM<-ST,SM<-LT", FlowConfig(True, True, False, True, True, False)),
    (5, "SM->ST,SM->LT,ST->LT,SM<-ST,SM<-LT", FlowConfig(True, True, True, True, True, False)),
    (6, "SM->ST,SM->LT,SM<-ST,SM<-LT,ST<-LT", FlowConfig(True, True, False, True, True, True)),
    (7, "SM->ST,SM->LT,ST->LT,SM<-ST,SM<-LT,ST<-LT", FlowConfig.all_enabled()),
]

ABLATION_HEADER = [
    "row",
    "flows",
    "sm_to_st",
    "sm_to_lt",
    "st_to_lt",
    "sm_from_st",
    "sm_from_lt",
    "st_from_lt",
    "mean_final_acc",
    "std_final_acc",
    "n_seeds",
]


def run_ablation_suite(
    target: LabeledDataset,
    preds: PredictionSet,
    base_cfg: AdaptConfig,
    seeds: list[int],
) -> list[dict]:
    """Final accuracy (mean and stddev over seeds) for each flow combination."""
    if not seeds:
        raise InvalidArgumentError("ablation needs at least one seed")
    results = []
    for row_no, label, flows in ABLATION_ROWS:
        finals = []
        for seed in seeds:
            cfg = replace(base_cfg, method="bimem", flows=flows, seed=int(seed))
            _, trace = run_bimem(target, preds, cfg)
            finals.append(trace.column("acc_all")[-1])
        entry = {"row": row_no, "flows": label}
        entry.update(flows.as_dict())
        entry["mean_final_acc"] = float(np.mean(finals))
        entry["std_final_acc"] = float(np.std(finals))
        entry["n_seeds"] = len(seeds)
        results.append(entry)
    return results


def write_ablation_table(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row["row"],
                    row["flows"],
                    *(row[k] for k in ABLATION_HEADER[2:8]),
                    repr(row["mean_final_acc"]),
                    repr(row["std_final_acc"]),
                    row["n_seeds"],
                ]
            )
