"""Three interacting feature memories and their bi-directional flows.

Forward flow per step: the sensory buffer is replaced by the fresh batch, the
most uncertain batch members are enqueued into a fixed-capacity FIFO, and
everything evicted from either store is compacted into per-category long-term
centroids by momentum averaging. Backward flow: long-term centroids reweight
the queue's stored probabilities, then long-term and queue centroids together
assign new probabilities to the sensory buffer. Each flow is an independent
switch so any subset can be run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics
from .errors import InvalidArgumentError

SNAPSHOT_VERSION = 1


@dataclass
class MemorySlot:
    """One remembered sample: id, encoder feature, stored category probabilities.

    ``prob`` holds the most recently calibrated prediction; calibration
    replaces the array rather than mutating it, so slots can be shared
    read-only.
    """

    sample_id: int
    feature: np.ndarray
    prob: np.ndarray

    def clone(self) -> "MemorySlot":
        return MemorySlot(self.sample_id, self.feature, self.prob)


@dataclass
class FlowConfig:
    """Switches for the three forward and three backward memory flows."""

    sm_to_st: bool = True
    sm_to_lt: bool = True
    st_to_lt: bool = True
    sm_from_st: bool = True
    sm_from_lt: bool = True
    st_from_lt: bool = True

    @classmethod
    def all_enabled(cls) -> "FlowConfig":
        return cls()

    @classmethod
    def none(cls) -> "FlowConfig":
        return cls(False, False, False, False, False, False)

    def as_dict(self) -> dict[str, bool]:
        return {
            "sm_to_st": self.sm_to_st,
            "sm_to_lt": self.sm_to_lt,
            "st_to_lt": self.st_to_lt,
            "sm_from_st": self.sm_from_st,
            "sm_from_lt": self.sm_from_lt,
            "st_from_lt": self.st_from_lt,
        }


def _check_slot(slot: MemorySlot, feature_dim: int, n_categories: int) -> None:
    if slot.feature.shape != (feature_dim,):
        raise InvalidArgumentError(
            f"slot {slot.sample_id}: feature shape {slot.feature.shape}, expected ({feature_dim},)"
        )
    if slot.prob.shape != (n_categories,):
        raise InvalidArgumentError(
            f"slot {slot.sample_id}: prob shape {slot.prob.shape}, expected ({n_categories},)"
        )
    numerics.check_prob_vector(slot.prob, f"slot {slot.sample_id} prob")


@dataclass
class SensoryMemory:
    """Per-iteration buffer holding the current batch; fully replaced each step."""

    feature_dim: int
    n_categories: int
    slots: list[MemorySlot] = field(default_factory=list)

    def refresh(self, batch: list[MemorySlot]) -> list[MemorySlot]:
        """Replace contents with ``batch``; returns the previous contents."""
        if not batch:
            raise InvalidArgumentError("sensory refresh requires a non-empty batch")
        for slot in batch:
            _check_slot(slot, self.feature_dim, self.n_categories)
        evicted = self.slots
        self.slots = list(batch)
        return evicted


def select_hard(mem: SensoryMemory, n: int) -> list[MemorySlot]:
    """The ``n`` buffered slots with the highest prediction entropy.

    Returned in descending entropy order; exact ties go to the lower
    sample id.
    """
    if n < 1 or n > len(mem.slots):
        raise InvalidArgumentError(f"n={n} out of range for {len(mem.slots)} slots")
    probs = np.stack([slot.prob for slot in mem.slots])
    entropies = numerics.entropy_rows(probs)
    order = sorted(
        range(len(mem.slots)),
        key=lambda i: (-entropies[i], mem.slots[i].sample_id),
    )
    return [mem.slots[i] for i in order[:n]]


@dataclass
class ShortTermMemory:
    """Fixed-capacity FIFO queue of hard samples; evicts strictly from the front."""

    capacity: int
    feature_dim: int
    n_categories: int
    queue: list[MemorySlot] = field(default_factory=list)

    def push(self, incoming: list[MemorySlot]) -> list[MemorySlot]:
        """Append ``incoming``; evict from the front only once full.

        Returns evicted slots in eviction order.
        """
        if len(incoming) > self.capacity:
            raise InvalidArgumentError(
                f"cannot enqueue {len(incoming)} slots into capacity {self.capacity}"
            )
        for slot in incoming:
            _check_slot(slot, self.feature_dim, self.n_categories)
        self.queue.extend(slot.clone() for slot in incoming)
        overflow = len(self.queue) - self.capacity
        if overflow <= 0:
            return []
        evicted = self.queue[:overflow]
        del self.queue[:overflow]
        return evicted


def compute_centroids(
    slots: list[MemorySlot], n_categories: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-category mean features, with category = argmax of the stored prob.

    Returns ``(centroids, counts)``; a category with no contributors keeps a
    zero centroid and count 0.
    """
    if not slots:
        raise InvalidArgumentError("cannot compute centroids of an empty slot set")
    feature_dim = slots[0].feature.shape[0]
    features = np.stack([slot.feature for slot in slots])
    labels = np.array([numerics.argmax_label(slot.prob) for slot in slots])
    centroids = np.zeros((n_categories, feature_dim), dtype=np.float64)
    counts = np.zeros(n_categories, dtype=np.int64)
    for c in range(n_categories):
        mask = labels == c
        counts[c] = int(mask.sum())
        if counts[c] > 0:
            centroids[c] = features[mask].mean(axis=0)
    return centroids, counts


@dataclass
class LongTermCentroids:
    """Per-category feature centroids accumulated by momentum averaging.

    ``momentum`` weights the old centroid; a category's first contribution is
    written through unchanged. Uninitialized categories hold a zero vector
    and are excluded from every calibration distance.
    """

    n_categories: int
    feature_dim: int
    momentum: float
    centroids: np.ndarray = field(default=None)  # type: ignore[assignment]
    initialized: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.centroids is None:
            self.centroids = np.zeros((self.n_categories, self.feature_dim), dtype=np.float64)
        if self.initialized is None:
            self.initialized = np.zeros(self.n_categories, dtype=bool)

    def consolidate(self, contributors: list[MemorySlot]) -> None:
        """Fold contributor centroids in; no-op on an empty contributor set."""
        if not contributors:
            return
        fresh, counts = compute_centroids(contributors, self.n_categories)
        for c in range(self.n_categories):
            if counts[c] == 0:
                continue
            if self.initialized[c]:
                self.centroids[c] = (1.0 - self.momentum) * fresh[c] + self.momentum * self.centroids[c]
            else:
                self.centroids[c] = fresh[c]
                self.initialized[c] = True


def long_term_consolidate(
    lt: LongTermCentroids,
    evicted_sensory: list[MemorySlot],
    evicted_short: list[MemorySlot],
    flows: FlowConfig,
) -> LongTermCentroids:
    """Consolidate the step's evictions, gated by the two forward flows into LT."""
    contributors: list[MemorySlot] = []
    if flows.sm_to_lt:
        contributors.extend(evicted_sensory)
    if flows.st_to_lt:
        contributors.extend(evicted_short)
    lt.consolidate(contributors)
    return lt


def centroid_weights(features: np.ndarray, lt: LongTermCentroids) -> np.ndarray:
    """Distance-softmax calibration weights against the long-term centroids.

    Row ``i`` holds softmax over initialized categories of the negative L1
    distance between ``features[i]`` and each centroid; uninitialized
    categories get weight 0, so every row sums to 1 over initialized ones.
    """
    init = lt.initialized
    if not init.any():
        raise InvalidArgumentError("no initialized long-term centroid")
    dists = np.abs(features[:, None, :] - lt.centroids[None, init, :]).sum(axis=2)
    weights = np.zeros((features.shape[0], lt.n_categories), dtype=np.float64)
    weights[:, init] = numerics.softmax_rows(-dists)
    return weights


def _reweight_rows(probs: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, int]:
    """Vectorized reweight+renormalize; degenerate rows fall back to uniform.

    Returns the calibrated rows and the number of degenerate fallbacks.
    """
    raw = probs * weights
    totals = raw.sum(axis=1)
    degenerate = totals <= 0.0
    safe_totals = np.where(degenerate, 1.0, totals)
    out = raw / safe_totals[:, None]
    n_categories = probs.shape[1]
    out[degenerate] = 1.0 / n_categories
    return out, int(degenerate.sum())


def calibrate_short_term(
    mem: ShortTermMemory, lt: LongTermCentroids, warnings: dict[str, int]
) -> ShortTermMemory:
    """Reweight every queued probability by long-term distance weights."""
    if not mem.queue:
        return mem
    if not lt.initialized.any():
        warnings["short_term_calibration_skipped"] = warnings.get("short_term_calibration_skipped", 0) + 1
        return mem
    features = np.stack([slot.feature for slot in mem.queue])
    probs = np.stack([slot.prob for slot in mem.queue])
    weights = centroid_weights(features, lt)
    calibrated, n_degenerate = _reweight_rows(probs, weights)
    if n_degenerate:
        warnings["degenerate_reweight"] = warnings.get("degenerate_reweight", 0) + n_degenerate
    for slot, row in zip(mem.queue, calibrated):
        slot.prob = row
    return mem


def sensory_calibration_probs(
    features: np.ndarray,
    probs: np.ndarray,
    lt_centroids: np.ndarray,
    lt_mask: np.ndarray,
    st_centroids: np.ndarray,
    st_mask: np.ndarray,
    flows: FlowConfig,
    warnings: dict[str, int],
) -> tuple[np.ndarray, bool]:
    """New category probabilities for sensory features from centroid distances.

    Each enabled backward source contributes the negative L1 distance to its
    centroid for the categories its mask marks present; the scores are
    softmaxed over the categories that received at least one term, and the
    rest get probability 0. Returns ``(probs, calibrated)`` where
    ``calibrated`` is False when no source was available and the inputs pass
    through unchanged.
    """
    n, n_categories = probs.shape
    participating = np.zeros(n_categories, dtype=bool)
    scores = np.zeros((n, n_categories), dtype=np.float64)
    if flows.sm_from_lt and lt_mask.any():
        scores[:, lt_mask] -= np.abs(
            features[:, None, :] - lt_centroids[None, lt_mask, :]
        ).sum(axis=2)
        participating |= lt_mask
    if flows.sm_from_st and st_mask.any():
        scores[:, st_mask] -= np.abs(
            features[:, None, :] - st_centroids[None, st_mask, :]
        ).sum(axis=2)
        participating |= st_mask
    if not participating.any():
        if flows.sm_from_lt or flows.sm_from_st:
            warnings["sensory_calibration_skipped"] = warnings.get("sensory_calibration_skipped", 0) + 1
        return probs.copy(), False
    out = np.zeros_like(probs)
    out[:, participating] = numerics.softmax_rows(scores[:, participating])
    return out, True


def calibrate_sensory(
    mem: SensoryMemory,
    lt: LongTermCentroids,
    st_centroids: np.ndarray,
    st_present: np.ndarray,
    flows: FlowConfig,
    warnings: dict[str, int],
) -> tuple[np.ndarray, bool]:
    """Write calibrated probabilities into the sensory buffer and return them."""
    features = np.stack([slot.feature for slot in mem.slots])
    probs = np.stack([slot.prob for slot in mem.slots])
    calibrated, applied = sensory_calibration_probs(
        features, probs, lt.centroids, lt.initialized, st_centroids, st_present, flows, warnings
    )
    if applied:
        for slot, row in zip(mem.slots, calibrated):
            slot.prob = row
    return calibrated, applied


def short_term_summary(mem: ShortTermMemory, n_categories: int) -> tuple[np.ndarray, np.ndarray]:
    """Queue centroids plus presence flags; all-absent when the queue is empty."""
    if not mem.queue:
        return (
            np.zeros((n_categories, mem.feature_dim), dtype=np.float64),
            np.zeros(n_categories, dtype=bool),
        )
    centroids, counts = compute_centroids(mem.queue, n_categories)
    return centroids, counts > 0


def _full_coverage_mask(mask: np.ndarray) -> np.ndarray:
    """A backward source is usable only once it represents every category.

    Calibrating from a partial source zeroes the missing categories out of
    every stored probability; since consolidation categories come from those
    stored probabilities, a category absent at the first calibration could
    never be remembered again. Gating on full coverage makes the warm-up
    phase train on the raw black-box labels instead.
    """
    if mask.all():
        return mask
    return np.zeros_like(mask)


@dataclass
class BiMemState:
    """The three memories plus bookkeeping for one adaptation run.

    ``warmup`` delays backward calibration: forward memorization runs from
    step 1, but calibration stays off until ``steps > warmup`` so the
    encoder's feature space can organize on the raw labels first. Cold-start
    features make distance-softmax calibration destructive, so 0 is only
    sensible for encoders that start out meaningful.
    """

    sensory: SensoryMemory
    short_term: ShortTermMemory
    long_term: LongTermCentroids
    top_n: int
    warmup: int = 0
    steps: int = 0
    warnings: dict[str, int] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        n_categories: int,
        feature_dim: int,
        queue_capacity: int,
        top_n: int,
        centroid_momentum: float,
        warmup: int = 0,
    ) -> "BiMemState":
        if top_n < 1:
            raise InvalidArgumentError(f"top_n must be >= 1, got {top_n}")
        if queue_capacity < top_n:
            raise InvalidArgumentError(
                f"queue capacity {queue_capacity} smaller than top_n {top_n}"
            )
        if warmup < 0:
            raise InvalidArgumentError(f"warmup must be >= 0, got {warmup}")
        return cls(
            sensory=SensoryMemory(feature_dim, n_categories),
            short_term=ShortTermMemory(queue_capacity, feature_dim, n_categories),
            long_term=LongTermCentroids(n_categories, feature_dim, centroid_momentum),
            top_n=top_n,
            warmup=warmup,
        )

    @property
    def n_categories(self) -> int:
        return self.long_term.n_categories

    @property
    def feature_dim(self) -> int:
        return self.long_term.feature_dim

    @property
    def backward_ready(self) -> bool:
        return self.steps > self.warmup

    def backward_sources(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(lt_centroids, lt_mask, st_centroids, st_mask), gated for use.

        Masks are all-false while the warm-up is running or while a source
        does not yet cover every category.
        """
        st_centroids, st_present = short_term_summary(self.short_term, self.n_categories)
        if not self.backward_ready:
            zeros = np.zeros(self.n_categories, dtype=bool)
            return self.long_term.centroids, zeros, st_centroids, zeros
        return (
            self.long_term.centroids,
            _full_coverage_mask(self.long_term.initialized),
            st_centroids,
            _full_coverage_mask(st_present),
        )


def bimem_step(
    state: BiMemState, batch: list[MemorySlot], flows: FlowConfig
) -> tuple[np.ndarray, bool]:
    """One full forward-memorization + backward-calibration pass.

    Runs, in order: sensory refresh, uncertainty selection into the FIFO
    queue, consolidation of this step's evictions into the long-term
    centroids, queue calibration by the long-term memory, and sensory
    calibration by queue and long-term centroids. Backward flows engage only
    once their source covers every category (see ``_full_coverage_mask``).
    Returns the sensory buffer's probabilities after calibration and whether
    any backward flow actually touched them (False means pass-through, e.g.
    during warm-up or with backward flows disabled).
    """
    state.steps += 1
    evicted_sensory = state.sensory.refresh(batch)
    evicted_short: list[MemorySlot] = []
    if flows.sm_to_st:
        n_select = min(state.top_n, len(state.sensory.slots))
        selected = select_hard(state.sensory, n_select)
        evicted_short = state.short_term.push(selected)
    long_term_consolidate(state.long_term, evicted_sensory, evicted_short, flows)
    if flows.st_from_lt and state.backward_ready:
        if state.long_term.initialized.all():
            calibrate_short_term(state.short_term, state.long_term, state.warnings)
        else:
            state.warnings["short_term_calibration_skipped"] = (
                state.warnings.get("short_term_calibration_skipped", 0) + 1
            )
    lt_centroids, lt_mask, st_centroids, st_mask = state.backward_sources()
    features = np.stack([slot.feature for slot in state.sensory.slots])
    probs = np.stack([slot.prob for slot in state.sensory.slots])
    calibrated, applied = sensory_calibration_probs(
        features, probs, lt_centroids, lt_mask, st_centroids, st_mask, flows, state.warnings
    )
    if applied:
        for slot, row in zip(state.sensory.slots, calibrated):
            slot.prob = row
    return calibrated, applied


def _slot_to_dict(slot: MemorySlot) -> dict:
    return {
        "sample_id": int(slot.sample_id),
        "feature": [float(v) for v in slot.feature],
        "prob": [float(v) for v in slot.prob],
    }


def _slot_from_dict(entry: dict) -> MemorySlot:
    return MemorySlot(
        sample_id=int(entry["sample_id"]),
        feature=np.asarray(entry["feature"], dtype=np.float64),
        prob=np.asarray(entry["prob"], dtype=np.float64),
    )


def state_to_snapshot(state: BiMemState) -> dict:
    """JSON-ready dict capturing the full memory state losslessly."""
    return {
        "version": SNAPSHOT_VERSION,
        "n_categories": state.n_categories,
        "feature_dim": state.feature_dim,
        "top_n": state.top_n,
        "warmup": state.warmup,
        "steps": state.steps,
        "centroid_momentum": state.long_term.momentum,
        "queue_capacity": state.short_term.capacity,
        "sensory": [_slot_to_dict(s) for s in state.sensory.slots],
        "short_term": [_slot_to_dict(s) for s in state.short_term.queue],
        "long_term": {
            "centroids": [[float(v) for v in row] for row in state.long_term.centroids],
            "initialized": [bool(v) for v in state.long_term.initialized],
        },
        "warnings": dict(state.warnings),
    }


def state_from_snapshot(snapshot: dict) -> BiMemState:
    if snapshot.get("version") != SNAPSHOT_VERSION:
        raise InvalidArgumentError(f"unsupported snapshot version: {snapshot.get('version')!r}")
    state = BiMemState.create(
        n_categories=int(snapshot["n_categories"]),
        feature_dim=int(snapshot["feature_dim"]),
        queue_capacity=int(snapshot["queue_capacity"]),
        top_n=int(snapshot["top_n"]),
        centroid_momentum=float(snapshot["centroid_momentum"]),
        warmup=int(snapshot["warmup"]),
    )
    state.steps = int(snapshot["steps"])
    state.sensory.slots = [_slot_from_dict(e) for e in snapshot["sensory"]]
    state.short_term.queue = [_slot_from_dict(e) for e in snapshot["short_term"]]
    state.long_term.centroids = np.asarray(snapshot["long_term"]["centroids"], dtype=np.float64)
    state.long_term.initialized = np.asarray(snapshot["long_term"]["initialized"], dtype=bool)
    state.warnings = {str(k): int(v) for k, v in snapshot.get("warnings", {}).items()}
    return state


def save_snapshot(state: BiMemState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state_to_snapshot(state)))


def load_snapshot(path: str | Path) -> BiMemState:
    return state_from_snapshot(json.loads(Path(path).read_text()))
