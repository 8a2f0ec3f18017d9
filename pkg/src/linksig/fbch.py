"""Forward-backward cooperative key extraction with helpers.

Each selected helper H_i measures its channels to Tx and Rx, then
retransmits twice with secret per-tap pre-equalization: toward Tx scaled by
h_i,rx / h_tx,i and toward Rx scaled by h_tx,i / h_i,rx.  Tx then holds
h_tx,i (direct) plus h_i,rx (retransmitted); Rx holds the mirror image, so both
can form sum_i (h_tx,i + h_i,rx) without it ever crossing a single link.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .chansynth import NetworkChannel, TraceSet
from .keyext import DEFAULT_KEY_LENGTH, BitKey, extract_key, quantization_levels
from .sia import (
    DEFAULT_KEY_POINTS,
    AttackScenario,
    GuessTrace,
    ScenarioKind,
    guess_counts,
    held_out_measurement,
    infer_link,
)

ChannelProvider = Callable[[int, int], np.ndarray]


class FbchError(ValueError):
    pass


@dataclass(frozen=True)
class FbchSession:
    tx: int
    rx: int
    helper_pool: tuple
    helper_count: int
    power_tx: float = 1.0
    power_helper: float = 1.0
    power_rx: float = 1.0
    noise_sigma: float = 0.0
    noise_fraction: float = 0.0
    seed: int = 0
    key_length: int = DEFAULT_KEY_LENGTH
    division_floor: float = 1e-9
    noise_guard: float = 3.0
    selected_helpers: tuple | None = None

    def __post_init__(self):
        pool = tuple(int(h) for h in self.helper_pool)
        object.__setattr__(self, "helper_pool", pool)
        if self.tx == self.rx:
            raise FbchError("Tx and Rx must differ")
        if len(set(pool)) != len(pool):
            raise FbchError("helper pool has duplicates")
        if self.tx in pool or self.rx in pool:
            raise FbchError("helpers must be distinct from Tx and Rx")
        if not 0 <= self.helper_count <= len(pool):
            raise FbchError(f"cannot pick {self.helper_count} helpers from a pool of {len(pool)}")
        if min(self.power_tx, self.power_helper, self.power_rx) <= 0:
            raise FbchError("transmit powers must be > 0")
        if self.noise_sigma < 0 or self.noise_fraction < 0:
            raise FbchError("noise levels must be >= 0")
        if self.selected_helpers is None:
            rng = np.random.default_rng([int(self.seed), 0xF8C4])
            picked = rng.choice(len(pool), size=self.helper_count, replace=False) if pool else []
            object.__setattr__(self, "selected_helpers", tuple(pool[i] for i in picked))
        else:
            sel = tuple(int(h) for h in self.selected_helpers)
            if len(sel) != self.helper_count or not set(sel) <= set(pool) or len(set(sel)) != len(sel):
                raise FbchError("selected helpers must be helper_count distinct pool members")
            object.__setattr__(self, "selected_helpers", sel)

    def sigma_for(self, h) -> float:
        """Estimation noise for a channel: absolute part plus a fraction of its peak tap."""
        return self.noise_sigma + self.noise_fraction * float(np.max(np.abs(h)))

    def floor_for(self, h) -> float:
        return max(self.division_floor, self.noise_guard * self.sigma_for(h))

    def with_(self, **changes) -> "FbchSession":
        from dataclasses import replace

        if "seed" in changes and "selected_helpers" not in changes:
            changes["selected_helpers"] = self.selected_helpers
        return replace(self, **changes)


@dataclass
class FbchResult:
    key_tx: BitKey
    key_rx: BitKey
    series_tx: np.ndarray
    series_rx: np.ndarray
    transcript: dict = field(repr=False)


def _tolist(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return a.tolist()


def run_fbch(session: FbchSession, channel_provider: ChannelProvider) -> FbchResult:
    """Run the seven protocol steps and return both keys with a message transcript.

    Channels are fetched once per node pair and treated as reciprocal.  Every
    channel estimate is the noiseless received/(power x unit symbol) plus
    Gaussian noise whose scale is ``session.sigma_for`` the channel carried.
    Taps below the division floor are not pre-equalized by helpers and are
    left out of the summed series at an end whenever either of that end's two
    estimates for the tap is below its floor.
    """
    s = session
    rng = np.random.default_rng([int(s.seed), 0x5E55])

    def measure(h, power, sigma):
        received = power * h * 1.0
        est = received / (power * 1.0)
        if sigma > 0:
            est = est + sigma * rng.standard_normal(np.shape(h))
        return est

    events: list[dict] = []
    transcript = {
        "tx": s.tx, "rx": s.rx, "helper_pool": list(s.helper_pool),
        "selected_helpers": list(s.selected_helpers),
        "powers": {"P_T": s.power_tx, "P_H": s.power_helper, "P_R": s.power_rx},
        "noise_sigma": s.noise_sigma, "noise_fraction": s.noise_fraction,
        "noise_guard": s.noise_guard, "events": events, "helpers": [],
    }
    events.append({"step": 1, "actor": s.tx, "action": "select_helpers", "helpers": list(s.selected_helpers)})

    if s.helper_count == 0:
        # Degenerate case: ordinary two-party extraction over the direct link.
        h = np.asarray(channel_provider(s.tx, s.rx))
        sigma, floor = s.sigma_for(h), s.floor_for(h)
        est_rx = measure(h, s.power_tx, sigma)
        est_tx = measure(h, s.power_rx, sigma)
        events.append({"step": 2, "sender": s.tx, "receiver": s.rx, "power": s.power_tx, "estimate": _tolist(est_rx)})
        events.append({"step": 4, "sender": s.rx, "receiver": s.tx, "power": s.power_rx, "estimate": _tolist(est_tx)})
        series_tx = np.where(np.abs(est_tx) >= floor, np.abs(est_tx), 0.0)
        series_rx = np.where(np.abs(est_rx) >= floor, np.abs(est_rx), 0.0)
        transcript["direct_channel"] = _tolist(h)
    else:
        taps = None
        series_tx = series_rx = None
        for hid in s.selected_helpers:
            h_tx = np.asarray(channel_provider(s.tx, hid))
            h_rx = np.asarray(channel_provider(hid, s.rx))
            if taps is None:
                taps = h_tx.shape
                series_tx = np.zeros(taps, dtype=np.result_type(h_tx, float))
                series_rx = np.zeros(taps, dtype=np.result_type(h_rx, float))
            # Step 2: Tx -> H_i ; Step 3: H_i -> Tx and H_i -> Rx ; Step 4: Rx -> H_i
            sig_tx, sig_rx = s.sigma_for(h_tx), s.sigma_for(h_rx)
            fl_tx, fl_rx = s.floor_for(h_tx), s.floor_for(h_rx)
            g_tx = measure(h_tx, s.power_tx, sig_tx)
            a_tx = measure(h_tx, s.power_helper, sig_tx)
            a_rx = measure(h_rx, s.power_helper, sig_rx)
            g_rx = measure(h_rx, s.power_rx, sig_rx)
            usable = (np.abs(g_tx) >= fl_tx) & (np.abs(g_rx) >= fl_rx)
            if not np.any(usable):
                raise FbchError(f"helper {hid}: every tap is below the division floor")
            scale_to_tx = np.zeros_like(g_rx)
            scale_to_rx = np.zeros_like(g_tx)
            scale_to_tx[usable] = g_rx[usable] / g_tx[usable]
            scale_to_rx[usable] = g_tx[usable] / g_rx[usable]
            # Step 5: pre-equalized retransmission to Tx ; Step 6: to Rx
            p5 = s.power_helper * scale_to_tx
            p6 = s.power_helper * scale_to_rx
            # The retransmission toward Tx carries h_i,rx and vice versa.
            b_tx = measure(scale_to_tx * h_tx, s.power_helper, sig_rx)
            b_rx = measure(scale_to_rx * h_rx, s.power_helper, sig_tx)
            keep_tx = (np.abs(a_tx) >= fl_tx) & (np.abs(b_tx) >= fl_rx)
            keep_rx = (np.abs(a_rx) >= fl_rx) & (np.abs(b_rx) >= fl_tx)
            series_tx = series_tx + np.where(keep_tx, a_tx + b_tx, 0.0)
            series_rx = series_rx + np.where(keep_rx, a_rx + b_rx, 0.0)
            events += [
                {"step": 2, "sender": s.tx, "receiver": hid, "power": s.power_tx, "estimate": _tolist(g_tx)},
                {"step": 3, "sender": hid, "receiver": s.tx, "power": s.power_helper, "estimate": _tolist(a_tx)},
                {"step": 3, "sender": hid, "receiver": s.rx, "power": s.power_helper, "estimate": _tolist(a_rx)},
                {"step": 4, "sender": s.rx, "receiver": hid, "power": s.power_rx, "estimate": _tolist(g_rx)},
                {"step": 5, "sender": hid, "receiver": s.tx, "power": _tolist(p5), "estimate": _tolist(b_tx)},
                {"step": 6, "sender": hid, "receiver": s.rx, "power": _tolist(p6), "estimate": _tolist(b_rx)},
            ]
            transcript["helpers"].append({
                "helper": hid, "h_tx_i": _tolist(h_tx), "h_i_rx": _tolist(h_rx),
                "scale_to_tx": _tolist(scale_to_tx), "scale_to_rx": _tolist(scale_to_rx),
                "kept_at_tx": _tolist(keep_tx), "kept_at_rx": _tolist(keep_rx),
            })
        series_tx = np.abs(series_tx)
        series_rx = np.abs(series_rx)

    for end, series in ((s.tx, series_tx), (s.rx, series_rx)):
        if not np.any(series > 0):
            raise FbchError(f"node {end}: every tap of the summed series was masked")
    key_tx = extract_key(series_tx, s.key_length)
    key_rx = extract_key(series_rx, s.key_length)
    transcript["series_tx"] = _tolist(series_tx)
    transcript["series_rx"] = _tolist(series_rx)
    transcript["key_tx"] = key_tx.to_ascii()
    transcript["key_rx"] = key_rx.to_ascii()
    events.append({"step": 7, "action": "extract", "keys_equal": key_tx == key_rx})
    return FbchResult(key_tx, key_rx, series_tx, series_rx, transcript)


def write_transcript(result: FbchResult, path) -> None:
    Path(path).write_text(json.dumps(result.transcript, indent=1, sort_keys=True) + "\n")


def fbch_samplers(session: FbchSession, channel_provider: ChannelProvider):
    """Per-party samplers for ``keyext.reconcile``; round r reruns the protocol with fresh noise."""
    cache: dict[int, FbchResult] = {}

    def run(rnd: int) -> FbchResult:
        if rnd not in cache:
            cache.clear()
            round_seed = int(np.random.SeedSequence([int(session.seed), rnd]).generate_state(1)[0])
            cache[rnd] = run_fbch(session.with_(seed=round_seed), channel_provider)
        return cache[rnd]

    return (lambda rnd: run(rnd).series_tx), (lambda rnd: run(rnd).series_rx)


def network_provider(net: NetworkChannel, meas_index: int = 0, magnitude: bool = False) -> ChannelProvider:
    """Noiseless complex (or magnitude) CIRs from a synthetic network; exactly reciprocal."""
    if magnitude:
        return lambda a, b: np.abs(net(a, b, meas_index))
    return lambda a, b: net(a, b, meas_index)


def trace_provider(dataset: TraceSet, meas_index: int = 0, phase_source: NetworkChannel | None = None) -> ChannelProvider:
    """CIRs read from dataset records of link a -> b.

    Records hold tap magnitudes only.  With ``phase_source`` each tap gets the
    phase of the matching noiseless complex CIR, so helper sums add coherently.
    """
    index = {
        (int(a), int(b), int(m)): i
        for i, (a, b, m) in enumerate(zip(dataset.tx_id, dataset.rx_id, dataset.meas_idx))
    }

    def provider(a, b):
        try:
            mag = np.array(dataset.taps[index[(int(a), int(b), meas_index)]])
        except KeyError:
            raise FbchError(f"no record for link ({a}, {b}) measurement {meas_index}") from None
        if phase_source is None:
            return mag
        return mag * np.exp(1j * np.angle(phase_source(a, b, meas_index)))

    return provider


def fbch_adversary_attack(
    session: FbchSession,
    dataset: TraceSet,
    scenario_kind,
    model_kind,
    adversary_knows_selection: bool = True,
    *,
    phase_source: NetworkChannel | None = None,
    meas_index: int | None = 0,
    hyperparams: dict | None = None,
    key_points: int = DEFAULT_KEY_POINTS,
    k_nearest: int | None = None,
    seed: int = 0,
) -> GuessTrace:
    """Guess the session's key by inferring and summing every helper link's CIR.

    The true key comes from a noiseless protocol run on the dataset records
    at ``meas_index`` (given the phases of ``phase_source`` when supplied);
    the adversary never sees those records and only knows tap magnitudes.  Without
    knowledge of the selection it sums over the whole pool scaled by N/M.
    ``meas_index=None`` picks the record the way ``attack_link`` does, so a
    zero-helper session reproduces the plain attack exactly.
    """
    kind = ScenarioKind(scenario_kind)
    if meas_index is None:
        meas_index = held_out_measurement(dataset, AttackScenario(kind, session.tx, session.rx), seed)
    provider = trace_provider(dataset, meas_index, phase_source)
    truth = run_fbch(session.with_(noise_sigma=0.0, noise_fraction=0.0), provider).series_tx

    def infer(a, b):
        sc = AttackScenario(kind, a, b, meas_index)
        cir, _ = infer_link(dataset, sc, model_kind, hyperparams, k_nearest, seed)
        return cir.taps

    if session.helper_count == 0:
        inferred = infer(session.tx, session.rx)
    else:
        helpers = session.selected_helpers if adversary_knows_selection else session.helper_pool
        inferred = sum(infer(session.tx, h) + infer(h, session.rx) for h in helpers)
        if not adversary_knows_selection:
            inferred = inferred * (session.helper_count / len(session.helper_pool))
    t = quantization_levels(truth)[:key_points]
    q = quantization_levels(inferred)[:key_points]
    return GuessTrace(guess_counts(t, q))


def helper_sweep_cdf(traces_by_helpers: dict[int, Sequence[GuessTrace]]):
    """Rows (helpers, guesses, cum_fraction) for each helper count."""
    from .sia import cdf_of_guesses

    rows = []
    for n in sorted(traces_by_helpers):
        for g, c in cdf_of_guesses(traces_by_helpers[n]):
            rows.append((n, g, c))
    return rows


def write_helper_csv(rows, path) -> None:
    import csv

    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["helpers", "guesses", "cum_fraction"])
        for n, g, c in rows:
            w.writerow([n, g, f"{c:.9g}"])
