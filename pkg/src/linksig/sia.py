"""Statistical inference attacks on link-signature keys.

An adversary trains a regression model on link signatures it can observe and
predicts the signature of a target link.  The inferred CIR is quantized, and
each true key level is found by searching outward from the inferred level
(q, q+1, q-1, q+2, ...).  The rank of the true level is the guess count.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .chansynth import ChannelImpulseResponse, TraceSet
from .keyext import LEVELS, quantization_levels
from .learners import ModelKind, make_model

DEFAULT_KEY_POINTS = 15
BRUTE_FORCE_MEAN = LEVELS / 2
BASELINE_LOG2_PER_POINT = math.log2(BRUTE_FORCE_MEAN)


class AttackError(ValueError):
    pass


class ScenarioKind(str, Enum):
    CASE_I = "case1"  # links disjoint from the target link
    CASE_II = "case2"  # links sharing the target's transmitter
    CASE_III = "case3"  # earlier signatures of the target link itself


# Training-set sizes (links) picked by a k sweep on the synthetic defaults.
DEFAULT_K_NEAREST = {ScenarioKind.CASE_I: 20, ScenarioKind.CASE_II: 10, ScenarioKind.CASE_III: None}


@dataclass(frozen=True)
class AttackScenario:
    kind: ScenarioKind
    tx: int
    rx: int
    meas_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.tx == self.rx:
            raise AttackError("target link needs distinct endpoints")


@dataclass(frozen=True)
class TrainingSet:
    features: np.ndarray
    labels: np.ndarray
    query: np.ndarray
    truth: np.ndarray
    scenario: AttackScenario

    def __len__(self):
        return len(self.features)


@dataclass(frozen=True)
class InferenceModel:
    kind: ModelKind
    hyperparams: dict
    estimator: object
    feature_dim: int
    tap_count: int


@dataclass(frozen=True, eq=False)
class GuessTrace:
    per_point_guesses: np.ndarray

    def __post_init__(self):
        g = np.array(self.per_point_guesses, dtype=np.int64).reshape(-1)
        if g.size == 0:
            raise AttackError("a guess trace needs at least one point")
        if g.min() < 1 or g.max() > LEVELS:
            raise AttackError("guess counts must lie in [1, 32]")
        g.setflags(write=False)
        object.__setattr__(self, "per_point_guesses", g)

    @property
    def points(self) -> int:
        return len(self.per_point_guesses)

    def __eq__(self, other):
        if not isinstance(other, GuessTrace):
            return NotImplemented
        return np.array_equal(self.per_point_guesses, other.per_point_guesses)


# --------------------------------------------------------------------------- guessing


def guess_counts(true_levels, inferred_levels) -> np.ndarray:
    """Vectorized rank of each true level in the outward search from the inferred level."""
    t = np.asarray(true_levels, dtype=np.int64)
    q = np.asarray(inferred_levels, dtype=np.int64)
    top = LEVELS - 1
    if t.size and (t.min() < 0 or t.max() > top or q.min() < 0 or q.max() > top):
        raise AttackError("levels must lie in [0, 31]")
    d = t - q
    m = -d
    # Upward hits sit at rank 2d, downward at 2m+1, minus the skipped out-of-range values.
    up = 2 * d - np.maximum(0, d - 1 - q)
    down = 2 * m + 1 - np.maximum(0, m - (top - q))
    return np.where(d > 0, up, np.where(d < 0, down, 1))


def guess_count(true_level: int, inferred_level: int) -> int:
    return int(guess_counts(true_level, inferred_level))


def guess_sequence(start: int) -> list[int]:
    """The 32 levels in search order from ``start``."""
    if not 0 <= start < LEVELS:
        raise AttackError("level out of range")
    seq = [start]
    for j in range(1, LEVELS):
        seq += [v for v in (start + j, start - j) if 0 <= v < LEVELS]
    return seq


def brute_force_trace(points: int = DEFAULT_KEY_POINTS) -> GuessTrace:
    """Reference trace of an attacker with no side information."""
    return GuessTrace(np.full(points, int(BRUTE_FORCE_MEAN)))


def trace_from_cirs(true_cir, inferred_cir, key_points: int = DEFAULT_KEY_POINTS) -> GuessTrace:
    t = quantization_levels(true_cir)[:key_points]
    q = quantization_levels(inferred_cir)[:key_points]
    return GuessTrace(guess_counts(t, q))


# --------------------------------------------------------------------------- training data


def _select(ts: TraceSet, mask) -> TraceSet:
    return ts.subset(np.asarray(mask, dtype=bool))


def _target_rows(ts: TraceSet, sc: AttackScenario) -> np.ndarray:
    rows = np.flatnonzero((ts.tx_id == sc.tx) & (ts.rx_id == sc.rx))
    if len(rows) == 0:
        raise AttackError(f"target link ({sc.tx}, {sc.rx}) not in dataset")
    return rows


def _k_nearest_links(dist_per_record: np.ndarray, ts: TraceSet, k: int) -> np.ndarray:
    """Mask keeping all records of the k links with smallest distance (ties by link order)."""
    links = list(zip(ts.tx_id.tolist(), ts.rx_id.tolist()))
    first = {}
    for i, link in enumerate(links):
        first.setdefault(link, i)
    keys = list(first)
    dist = np.array([dist_per_record[first[l]] for l in keys])
    keep = {keys[i] for i in np.argsort(dist, kind="stable")[:k]}
    return np.array([l in keep for l in links])


def held_out_measurement(dataset: TraceSet, scenario: AttackScenario, seed: int = 0) -> int:
    """Measurement index of the target record the adversary must predict.

    ``scenario.meas_index`` when set; otherwise 0, except in the
    historical-signature case where it is drawn at random from ``seed``.
    """
    sc = scenario
    rows = _target_rows(dataset, sc)
    meas = dataset.meas_idx[rows]
    if sc.meas_index is not None:
        if sc.meas_index not in meas:
            raise AttackError(f"measurement {sc.meas_index} of target link not in dataset")
        return int(sc.meas_index)
    if sc.kind is ScenarioKind.CASE_III:
        return int(meas[np.random.default_rng(seed).integers(len(rows))])
    if 0 not in meas:
        raise AttackError("measurement 0 of target link not in dataset")
    return 0


def _unit_peak(taps) -> np.ndarray:
    taps = np.array(taps, dtype=float)
    peak = taps.max(axis=1, keepdims=True)
    return taps / np.where(peak > 0, peak, 1.0)


def build_training_set(
    dataset: TraceSet,
    scenario: AttackScenario,
    k_nearest: int | None = None,
    seed: int = 0,
) -> TrainingSet:
    """Assemble adversary training data for one target; the target's own records are excluded.

    The held-out record is chosen by ``held_out_measurement``.  Labels are
    scaled to unit peak tap: keys do not depend on overall scale, so this
    removes path-loss spread the learner would otherwise have to fit.
    """
    sc = scenario
    rows = _target_rows(dataset, sc)
    if k_nearest is not None and k_nearest < 1:
        raise AttackError("k_nearest must be >= 1")

    if sc.kind is ScenarioKind.CASE_III:
        if len(rows) < 2:
            raise AttackError("need at least one historical signature of the target link")
        held_meas = held_out_measurement(dataset, sc, seed)
        held = rows[dataset.meas_idx[rows] == held_meas][0]
        train = rows[rows != held]
        return TrainingSet(
            dataset.meas_idx[train].astype(float)[:, None],
            _unit_peak(dataset.taps[train]),
            np.array([float(dataset.meas_idx[held])]),
            np.array(dataset.taps[held]),
            sc,
        )

    held_meas = held_out_measurement(dataset, sc, seed)
    held = rows[dataset.meas_idx[rows] == held_meas][0]
    tx_xy, rx_xy = dataset.tx_xy[held], dataset.rx_xy[held]

    if sc.kind is ScenarioKind.CASE_I:
        ends = (sc.tx, sc.rx)
        touching = np.isin(dataset.tx_id, ends) | np.isin(dataset.rx_id, ends)
        cand = _select(dataset, ~touching)
        if len(cand) == 0:
            raise AttackError("no links disjoint from the target")
        if k_nearest is not None:
            dist = np.linalg.norm(cand.tx_xy - tx_xy, axis=1) + np.linalg.norm(cand.rx_xy - rx_xy, axis=1)
            cand = _select(cand, _k_nearest_links(dist, cand, k_nearest))
        feats = np.hstack([cand.tx_xy, cand.rx_xy])
        query = np.concatenate([tx_xy, rx_xy])
    else:
        shared = (dataset.tx_id == sc.tx) & (dataset.rx_id != sc.rx)
        cand = _select(dataset, shared)
        if len(cand) == 0:
            raise AttackError("no other links share the target's transmitter")
        if k_nearest is not None:
            dist = np.linalg.norm(cand.rx_xy - rx_xy, axis=1)
            cand = _select(cand, _k_nearest_links(dist, cand, k_nearest))
        feats = np.array(cand.rx_xy)
        query = np.array(rx_xy)
    return TrainingSet(feats, _unit_peak(cand.taps), query, np.array(dataset.taps[held]), sc)


# --------------------------------------------------------------------------- models


def train_model(kind, training: TrainingSet, hyperparams: dict | None = None, seed: int = 0) -> InferenceModel:
    kind = ModelKind(kind)
    if len(training) < 1:
        raise AttackError("empty training set")
    est = make_model(kind, hyperparams, seed).fit(training.features, training.labels)
    return InferenceModel(kind, dict(hyperparams or {}), est, training.features.shape[1], training.labels.shape[1])


def infer_signature(model: InferenceModel, query) -> ChannelImpulseResponse:
    q = np.asarray(query, dtype=float).reshape(-1)
    if len(q) != model.feature_dim:
        raise AttackError(f"query has {len(q)} features, model expects {model.feature_dim}")
    pred = np.asarray(model.estimator.predict(q[None, :]))[0]
    return ChannelImpulseResponse(np.maximum(pred, 0.0))


def infer_link(
    dataset: TraceSet,
    scenario: AttackScenario,
    model_kind,
    hyperparams: dict | None = None,
    k_nearest: int | None = None,
    seed: int = 0,
):
    """Return (inferred CIR, true held-out taps) for one target."""
    training = build_training_set(dataset, scenario, k_nearest, seed)
    model = train_model(model_kind, training, hyperparams, seed)
    return infer_signature(model, training.query), training.truth


def attack_link(
    dataset: TraceSet,
    scenario: AttackScenario,
    model_kind,
    hyperparams: dict | None = None,
    key_points: int = DEFAULT_KEY_POINTS,
    k_nearest: int | None = None,
    seed: int = 0,
) -> GuessTrace:
    inferred, truth = infer_link(dataset, scenario, model_kind, hyperparams, k_nearest, seed)
    return trace_from_cirs(truth, inferred, key_points)


def select_targets(dataset: TraceSet, count: int, seed: int) -> list[tuple[int, int]]:
    """Pick ``count`` distinct target links uniformly at random."""
    links = dataset.links()
    if count < 1:
        raise AttackError("need at least one target link")
    if count > len(links):
        raise AttackError(f"asked for {count} targets but only {len(links)} links exist")
    idx = np.random.default_rng(seed).choice(len(links), size=count, replace=False)
    return [links[i] for i in sorted(idx)]


# --------------------------------------------------------------------------- statistics


def _pooled(traces) -> np.ndarray:
    if isinstance(traces, GuessTrace):
        traces = [traces]
    traces = list(traces)
    if not traces:
        raise AttackError("need at least one trace")
    return np.concatenate([t.per_point_guesses for t in traces])


def cdf_of_guesses(traces) -> list[tuple[int, float]]:
    g = _pooled(traces)
    counts = np.bincount(g, minlength=LEVELS + 1)[1:]
    cum = np.cumsum(counts) / len(g)
    return [(i + 1, float(c)) for i, c in enumerate(cum)]


def max_cdf_gap(cdfs: Sequence[list[tuple[int, float]]]) -> float:
    arr = np.array([[c for _, c in cdf] for cdf in cdfs])
    return float((arr.max(axis=0) - arr.min(axis=0)).max())


def search_space(trace: GuessTrace) -> dict:
    g = trace.per_point_guesses
    return {
        "log2_size": float(np.sum(np.log2(g))),
        "baseline_log2": trace.points * BASELINE_LOG2_PER_POINT,
    }


def mean_and_sd(traces) -> dict:
    g = _pooled(traces).astype(float)
    if len(g) < 2:
        raise AttackError("standard deviation needs at least two points")
    return {"mean": float(g.mean()), "sd": float(g.std(ddof=1))}


def write_cdf_csv(cdf, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["guesses", "cum_fraction"])
        for g, c in cdf:
            w.writerow([g, f"{c:.9g}"])


def summary(scenario: str, model: str, k, traces, key_points: int = DEFAULT_KEY_POINTS) -> dict:
    stats = mean_and_sd(traces)
    logs = [search_space(t)["log2_size"] for t in traces]
    return {
        "scenario": scenario,
        "model": model,
        "k": k,
        "mean": stats["mean"],
        "sd": stats["sd"],
        "log2_search_space": float(np.mean(logs)),
        "baseline_log2": key_points * BASELINE_LOG2_PER_POINT,
        "one_guess_fraction": float(np.mean(_pooled(traces) == 1)),
        "within_6_fraction": float(np.mean(_pooled(traces) <= 6)),
    }


def write_summary_json(rows, path) -> None:
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
