"""Scatterer-field channel synthesis.

A single immutable scatterer field drives every link of a layout, which is
what makes link signatures of nearby links correlated.  Multi-tap CIRs are
built by binning each scatterer path's delay into a tap, summing the complex
path contributions per tap and keeping the tap magnitudes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import kernels
from .geometry import SPEED_OF_LIGHT, GeometryConfig

DEFAULT_TAPS = 50
TRACE_FIXED_COLUMNS = ["tx_id", "rx_id", "meas_idx", "tx_x", "tx_y", "rx_x", "rx_y"]


class ChannelError(ValueError):
    """Invalid channel-synthesis request (bad counts, degenerate geometry, empty window)."""


class TraceFormatError(ValueError):
    """A trace CSV file does not follow the interchange schema."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _readonly(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScattererField:
    positions: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions).reshape(-1, 2))
        object.__setattr__(self, "amplitudes", _readonly(self.amplitudes))
        object.__setattr__(self, "phases", _readonly(self.phases))
        if len(self.positions) < 1:
            raise ChannelError("a scatterer field needs at least one scatterer")

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScattererField):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.amplitudes, other.amplitudes)
            and np.array_equal(self.phases, other.phases)
        )


@dataclass(frozen=True, eq=False)
class ChannelImpulseResponse:
    taps: np.ndarray
    sampling_interval: float | None = None

    def __post_init__(self):
        taps = _readonly(self.taps)
        if taps.ndim != 1 or len(taps) < 1:
            raise ChannelError("CIR taps must be a non-empty vector")
        if not np.all(np.isfinite(taps)) or np.any(taps < 0):
            raise ChannelError("CIR taps must be finite and non-negative")
        object.__setattr__(self, "taps", taps)

    def __len__(self) -> int:
        return len(self.taps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelImpulseResponse):
            return NotImplemented
        return np.array_equal(self.taps, other.taps)


@dataclass(frozen=True)
class LinkSignatureRecord:
    tx_id: int
    rx_id: int
    tx_loc: tuple[float, float]
    rx_loc: tuple[float, float]
    meas_index: int
    cir: ChannelImpulseResponse = field(compare=True)

    def __post_init__(self):
        if self.tx_id == self.rx_id:
            raise ChannelError("a link needs distinct transmitter and receiver ids")
        if self.meas_index < 0:
            raise ChannelError("meas_index must be >= 0")


# --------------------------------------------------------------------------- sampling


def _sample_polar(rng, cfg: GeometryConfig, count: int, center, keep_out) -> np.ndarray:
    """Rejection-sample ``count`` points uniform in (angle, radius) over the ring minus keep-out disks."""
    center = np.asarray(center, dtype=float)
    keep_out = np.asarray(keep_out, dtype=float).reshape(-1, 2)
    x0, big_r = cfg.exclusion_radius, cfg.ring_radius_R
    out = np.empty((0, 2))
    attempts = 0
    while len(out) < count:
        need = count - len(out)
        batch = max(64, int(need * 1.3))
        r = rng.uniform(x0, big_r, batch)
        t = rng.uniform(-math.pi, math.pi, batch)
        pts = center + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
        if len(keep_out):
            d2 = ((pts[:, None, :] - keep_out[None, :, :]) ** 2).sum(axis=2)
            pts = pts[np.all(d2 >= x0 * x0, axis=1)]
        out = np.concatenate([out, pts[:need]])
        attempts += 1
        if attempts > 1000 and len(out) == 0:
            raise ChannelError("keep-out disks cover the whole scatterer ring")
    return out


def sample_scatterers(
    cfg: GeometryConfig,
    count: int,
    seed: int,
    *,
    center=(0.0, 0.0),
    keep_out=None,
) -> ScattererField:
    """Draw a scatterer field with unit amplitudes and uniform phases.

    Positions are uniform in (angle, radius) with radius in
    ``[exclusion_radius, R]`` around ``center`` and at least
    ``exclusion_radius`` away from every ``keep_out`` point (defaults to the
    singular points of the configuration's correlation model).
    """
    if count < 1:
        raise ChannelError("scatterer count must be >= 1")
    if keep_out is None:
        keep_out = cfg.singular_points()
    rng = np.random.default_rng(seed)
    pos = _sample_polar(rng, cfg, count, center, keep_out)
    phases = rng.uniform(0.0, 2.0 * math.pi, count)
    return ScattererField(pos, np.ones(count), phases, int(seed))


# --------------------------------------------------------------------------- gains


def _check_clearance(field: ScattererField, point, cfg: GeometryConfig, label: str) -> np.ndarray:
    d = np.hypot(field.positions[:, 0] - point[0], field.positions[:, 1] - point[1])
    if np.any(d < cfg.exclusion_radius):
        raise ChannelError(f"{label} lies within the exclusion radius of a scatterer")
    return d


def narrowband_gain(field: ScattererField, tx_loc, rx_loc, cfg: GeometryConfig, phases=None) -> complex:
    """Finite-N narrowband gain of the link tx -> scatterers -> rx."""
    d_tx = _check_clearance(field, tx_loc, cfg, "transmitter")
    d_rx = _check_clearance(field, rx_loc, cfg, "receiver")
    psi = field.phases if phases is None else np.asarray(phases, dtype=float)
    n = cfg.path_loss_exponent
    g = field.amplitudes * (d_tx * d_rx / cfg.big_distance_D) ** (-n / 2.0)
    terms = g * np.exp(1j * (psi - cfg.wavenumber * (d_tx + d_rx)))
    return complex(terms.sum() / math.sqrt(len(field)))


def empirical_correlation(
    cfg: GeometryConfig,
    rx_offset: float,
    ensembles: int,
    seed: int,
    *,
    scatterers_per_field: int = 32,
    wavefront: str = "planar",
    chunk_fields: int = 8192,
) -> complex:
    """Monte-Carlo ensemble estimate of the receiver/attacker correlation.

    Independent scatterer fields are drawn from the same density as the
    analytic model; the attacker sits ``rx_offset`` meters from the legitimate
    receiver along the configured axis.  ``wavefront="planar"`` expands the
    receive distances about the receiver-pair midpoint (the far-field regime
    the analytic model assumes); ``"spherical"`` uses exact distances.
    """
    if ensembles < 100:
        raise ChannelError("need at least 100 ensembles")
    if wavefront not in ("planar", "spherical"):
        raise ChannelError(f"unknown wavefront {wavefront!r}")
    planar = wavefront == "planar"
    tx = cfg.transmitter()
    center = cfg.pair_center()
    ra = cfg.legitimate_receiver(rx_offset)
    rb = cfg.attack_node(rx_offset)
    keep_out = cfg.singular_points()
    if not planar:
        keep_out = np.concatenate([keep_out.reshape(-1, 2), [ra, rb]])
    rng = np.random.default_rng(seed)
    sab, saa, sbb = 0j, 0.0, 0.0
    done = 0
    while done < ensembles:
        nf = min(chunk_fields, ensembles - done)
        pts = _sample_polar(rng, cfg, nf * scatterers_per_field, (0.0, 0.0), keep_out)
        psi = rng.uniform(0.0, 2.0 * math.pi, nf * scatterers_per_field)
        amp = np.ones(nf * scatterers_per_field)
        a, b, c = kernels.ensemble_sums(
            np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), psi, amp,
            scatterers_per_field, tx, ra, rb, center,
            cfg.wavenumber, cfg.big_distance_D, cfg.path_loss_exponent, planar,
        )
        sab += a
        saa += b
        sbb += c
        done += nf
    return sab / math.sqrt(saa * sbb)


# --------------------------------------------------------------------------- CIRs


def _apply_noise(taps: np.ndarray, noise_sigma: float, rng) -> np.ndarray:
    if noise_sigma <= 0:
        return taps
    return np.maximum(taps + noise_sigma * rng.standard_normal(taps.shape), 0.0)


def synthesize_cir(
    field: ScattererField,
    tx_loc,
    rx_loc,
    cfg: GeometryConfig,
    tap_count: int = DEFAULT_TAPS,
    sampling_interval: float = 2.5e-9,
    noise_sigma: float = 0.0,
    seed: int = 0,
    phases=None,
) -> ChannelImpulseResponse:
    """Delay-binned magnitude CIR of one link plus truncated Gaussian tap noise."""
    if tap_count < 1:
        raise ChannelError("tap_count must be >= 1")
    if not sampling_interval > 0:
        raise ChannelError("sampling_interval must be > 0")
    _check_clearance(field, tx_loc, cfg, "transmitter")
    _check_clearance(field, rx_loc, cfg, "receiver")
    nodes = np.array([tx_loc, rx_loc], dtype=float)
    psi = field.phases if phases is None else np.asarray(phases, dtype=float)
    bank = kernels.cir_bank(
        nodes[:, 0], nodes[:, 1], np.array([0]), np.array([1]),
        np.ascontiguousarray(field.positions[:, 0]), np.ascontiguousarray(field.positions[:, 1]),
        np.ascontiguousarray(field.amplitudes), psi[None, :],
        cfg.wavenumber, cfg.big_distance_D, cfg.path_loss_exponent,
        sampling_interval, SPEED_OF_LIGHT, tap_count,
    )
    taps = np.abs(bank[0, 0])
    if not np.any(taps > 0):
        raise ChannelError("every path delay falls outside the tap window")
    taps = _apply_noise(taps, noise_sigma, np.random.default_rng(seed))
    return ChannelImpulseResponse(taps, sampling_interval)


# --------------------------------------------------------------------------- datasets


def round_sig(values, digits: int = 9) -> np.ndarray:
    """Round to the interchange precision so a CSV round trip is bit-exact."""
    a = np.asarray(values, dtype=float)
    flat = [float(f"{v:.{digits}g}") for v in a.ravel().tolist()]
    return np.array(flat, dtype=float).reshape(a.shape)


def default_layout(count: int = 44, extent=(14.0, 13.0), seed: int = 2007) -> np.ndarray:
    """Jittered-grid node placement in an office-sized rectangle centred at the origin."""
    if count < 2:
        raise ChannelError("a layout needs at least two nodes")
    width, height = extent
    cols = max(1, int(math.ceil(math.sqrt(count * width / height))))
    rows = int(math.ceil(count / cols))
    rng = np.random.default_rng(seed)
    cells = np.sort(rng.choice(rows * cols, size=count, replace=False))
    cw, ch = width / cols, height / rows
    r, c = np.divmod(cells, cols)
    jitter = rng.uniform(0.2, 0.8, size=(count, 2))
    x = (c + jitter[:, 0]) * cw - width / 2.0
    y = (r + jitter[:, 1]) * ch - height / 2.0
    return round_sig(np.stack([x, y], axis=1))


class NetworkChannel:
    """Complex link CIRs for a node layout sharing one scatterer field.

    Measurement ``m`` perturbs scatterer phases by ``drift_rate * m * delta_i``
    with fixed standard-normal ``delta_i``.  Tap windows start at the
    transmission instant, so leading taps before the first arrival are zero.
    """

    def __init__(
        self,
        layout,
        cfg: GeometryConfig,
        seed: int = 0,
        *,
        scatterer_count: int = 200,
        tap_count: int = DEFAULT_TAPS,
        sampling_interval: float | None = None,
        drift_rate: float = 0.0,
        node_ids: Sequence[int] | None = None,
    ):
        layout = np.asarray(layout, dtype=float).reshape(-1, 2)
        if len(layout) < 2:
            raise ChannelError("a network needs at least two nodes")
        if len(np.unique(layout, axis=0)) != len(layout):
            raise ChannelError("duplicate node locations in layout")
        self.layout = layout
        self.cfg = cfg
        self.seed = int(seed)
        self.tap_count = int(tap_count)
        self.drift_rate = float(drift_rate)
        self.node_ids = np.arange(1, len(layout) + 1) if node_ids is None else np.asarray(node_ids)
        if len(self.node_ids) != len(layout) or len(set(self.node_ids.tolist())) != len(layout):
            raise ChannelError("node_ids must be unique and match the layout")
        self._index = {int(n): i for i, n in enumerate(self.node_ids)}
        field_ss, drift_ss = np.random.SeedSequence(self.seed).spawn(2)
        self.field = sample_scatterers(
            cfg, scatterer_count, seed=int(field_ss.generate_state(1)[0]),
            center=layout.mean(axis=0), keep_out=layout,
        )
        self.drift = np.random.default_rng(drift_ss).standard_normal(scatterer_count)
        pos = self.field.positions
        d = np.hypot(pos[None, :, 0] - layout[:, None, 0], pos[None, :, 1] - layout[:, None, 1])
        if sampling_interval is None:
            # The longest path of any link lands at ~80% of the window (about 40 of 50 taps).
            totals = d[:, None, :] + d[None, :, :]
            off_diag = ~np.eye(len(layout), dtype=bool)
            sampling_interval = totals.max(axis=2)[off_diag].max() / SPEED_OF_LIGHT / (0.8 * self.tap_count)
        self.sampling_interval = float(sampling_interval)

    def phases(self, meas_index: int) -> np.ndarray:
        return self.field.phases + self.drift_rate * meas_index * self.drift

    def location(self, node_id: int) -> np.ndarray:
        return self.layout[self._index[int(node_id)]]

    def complex_cirs(self, links: Sequence[tuple[int, int]], meas_indices: Sequence[int]) -> np.ndarray:
        """Complex taps with shape (len(links), len(meas_indices), tap_count)."""
        links = list(links)
        tx = np.array([self._index[int(a)] for a, _ in links], dtype=np.intp)
        rx = np.array([self._index[int(b)] for _, b in links], dtype=np.intp)
        phases = np.stack([self.phases(m) for m in meas_indices])
        pos = self.field.positions
        return kernels.cir_bank(
            np.ascontiguousarray(self.layout[:, 0]), np.ascontiguousarray(self.layout[:, 1]), tx, rx,
            np.ascontiguousarray(pos[:, 0]), np.ascontiguousarray(pos[:, 1]),
            np.ascontiguousarray(self.field.amplitudes), phases,
            self.cfg.wavenumber, self.cfg.big_distance_D, self.cfg.path_loss_exponent,
            self.sampling_interval, SPEED_OF_LIGHT, self.tap_count,
        )

    def __call__(self, a: int, b: int, meas_index: int = 0) -> np.ndarray:
        return self.complex_cirs([(a, b)], [meas_index])[0, 0]

    def dataset(self, meas_per_link: int = 5, noise_fraction: float = 0.01, noise_seed: int | None = None) -> "TraceSet":
        if meas_per_link < 1:
            raise ChannelError("meas_per_link must be >= 1")
        base = self.seed if noise_seed is None else int(noise_seed)
        ids = [int(i) for i in self.node_ids]
        links = [(a, b) for a in sorted(ids) for b in sorted(ids) if a != b]
        bank = np.abs(self.complex_cirs(links, range(meas_per_link)))
        nrec = len(links) * meas_per_link
        taps = bank.reshape(nrec, self.tap_count)
        if noise_fraction > 0:
            for rec in range(nrec):
                rng = np.random.default_rng([base, 1, rec])
                taps[rec] = _apply_noise(taps[rec], noise_fraction * taps[rec].max(), rng)
        tx_id = np.repeat([a for a, _ in links], meas_per_link)
        rx_id = np.repeat([b for _, b in links], meas_per_link)
        meas = np.tile(np.arange(meas_per_link), len(links))
        tx_xy = np.stack([self.location(a) for a in tx_id])
        rx_xy = np.stack([self.location(b) for b in rx_id])
        return TraceSet(tx_id, rx_id, meas, round_sig(tx_xy), round_sig(rx_xy), round_sig(taps), self.sampling_interval)


def generate_network_dataset(
    layout=None,
    cfg: GeometryConfig | None = None,
    meas_per_link: int = 5,
    drift_rate: float = 0.0,
    seed: int = 0,
    *,
    scatterer_count: int = 200,
    tap_count: int = DEFAULT_TAPS,
    sampling_interval: float | None = None,
    noise_fraction: float = 0.01,
) -> "TraceSet":
    """Records for every ordered node pair and measurement index, sorted by (tx, rx, meas)."""
    from .geometry import indoor_default

    layout = default_layout() if layout is None else layout
    cfg = indoor_default() if cfg is None else cfg
    net = NetworkChannel(
        layout, cfg, seed, scatterer_count=scatterer_count, tap_count=tap_count,
        sampling_interval=sampling_interval, drift_rate=drift_rate,
    )
    return net.dataset(meas_per_link, noise_fraction)


def cosine_similarity(a, b) -> float:
    a = np.asarray(getattr(a, "taps", a), dtype=float)
    b = np.asarray(getattr(b, "taps", b), dtype=float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# --------------------------------------------------------------------------- trace sets


class TraceSet:
    """Columnar collection of link-signature records; iterates as records."""

    def __init__(self, tx_id, rx_id, meas_idx, tx_xy, rx_xy, taps, sampling_interval=None):
        self.tx_id = _readonly(tx_id, np.int64).reshape(-1)
        self.rx_id = _readonly(rx_id, np.int64).reshape(-1)
        self.meas_idx = _readonly(meas_idx, np.int64).reshape(-1)
        self.tx_xy = _readonly(tx_xy).reshape(-1, 2)
        self.rx_xy = _readonly(rx_xy).reshape(-1, 2)
        taps = np.asarray(taps, dtype=float)
        if taps.ndim != 2:
            taps = taps.reshape(len(self.tx_id), -1) if taps.size else np.zeros((len(self.tx_id), 0))
        self.taps = _readonly(taps)
        self.sampling_interval = sampling_interval
        n = len(self.tx_id)
        if not all(len(a) == n for a in (self.rx_id, self.meas_idx, self.tx_xy, self.rx_xy, self.taps)):
            raise ChannelError("trace columns have mismatched lengths")
        if n and np.any(self.tx_id == self.rx_id):
            raise ChannelError("a link needs distinct transmitter and receiver ids")

    @classmethod
    def from_records(cls, records: Iterable[LinkSignatureRecord]) -> "TraceSet":
        records = list(records)
        if not records:
            return cls([], [], [], np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 0)))
        return cls(
            [r.tx_id for r in records], [r.rx_id for r in records], [r.meas_index for r in records],
            [r.tx_loc for r in records], [r.rx_loc for r in records], [r.cir.taps for r in records],
            records[0].cir.sampling_interval,
        )

    @property
    def tap_count(self) -> int:
        return self.taps.shape[1]

    def __len__(self) -> int:
        return len(self.tx_id)

    def __getitem__(self, i: int) -> LinkSignatureRecord:
        return LinkSignatureRecord(
            int(self.tx_id[i]), int(self.rx_id[i]),
            (float(self.tx_xy[i, 0]), float(self.tx_xy[i, 1])),
            (float(self.rx_xy[i, 0]), float(self.rx_xy[i, 1])),
            int(self.meas_idx[i]),
            ChannelImpulseResponse(self.taps[i], self.sampling_interval),
        )

    def __iter__(self) -> Iterator[LinkSignatureRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("tx_id", "rx_id", "meas_idx", "tx_xy", "rx_xy", "taps")
        )

    def subset(self, mask) -> "TraceSet":
        mask = np.asarray(mask)
        return TraceSet(
            self.tx_id[mask], self.rx_id[mask], self.meas_idx[mask],
            self.tx_xy[mask], self.rx_xy[mask], self.taps[mask], self.sampling_interval,
        )

    def links(self) -> list[tuple[int, int]]:
        seen = dict.fromkeys(zip(self.tx_id.tolist(), self.rx_id.tolist()))
        return list(seen)

    def node_locations(self) -> dict[int, np.ndarray]:
        locs = {}
        for ids, xy in ((self.tx_id, self.tx_xy), (self.rx_id, self.rx_xy)):
            for i, node in enumerate(ids.tolist()):
                locs.setdefault(node, xy[i])
        return locs


def save_trace_file(records, path) -> None:
    """Write records as trace CSV, sorted by (tx_id, rx_id, meas_idx), 9 significant digits."""
    ts = records if isinstance(records, TraceSet) else TraceSet.from_records(records)
    order = np.lexsort((ts.meas_idx, ts.rx_id, ts.tx_id))
    header = TRACE_FIXED_COLUMNS + [f"tap_{k}" for k in range(ts.tap_count)]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in order:
            writer.writerow(
                [int(ts.tx_id[i]), int(ts.rx_id[i]), int(ts.meas_idx[i])]
                + [f"{v:.9g}" for v in (*ts.tx_xy[i], *ts.rx_xy[i])]
                + [f"{v:.9g}" for v in ts.taps[i]]
            )


def load_trace_file(path, sampling_interval: float | None = None) -> TraceSet:
    """Parse a trace CSV; raises TraceFormatError naming the offending line."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError("missing header", 1) from None
        if header[: len(TRACE_FIXED_COLUMNS)] != TRACE_FIXED_COLUMNS:
            raise TraceFormatError(f"unknown header {header[:len(TRACE_FIXED_COLUMNS)]}", 1)
        tap_names = header[len(TRACE_FIXED_COLUMNS):]
        if not tap_names or tap_names != [f"tap_{k}" for k in range(len(tap_names))]:
            raise TraceFormatError("tap columns must be tap_0..tap_{K-1}", 1)
        width = len(header)
        cols: list[list] = [[] for _ in range(6)]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise TraceFormatError(f"expected {width} fields ({len(tap_names)} taps), got {len(row)}", lineno)
            try:
                ints = [int(v) for v in row[:3]]
                floats = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise TraceFormatError(f"malformed value ({exc})", lineno) from None
            if ints[0] == ints[1]:
                raise TraceFormatError("tx_id equals rx_id", lineno)
            if any(not math.isfinite(v) for v in floats) or any(v < 0 for v in floats[4:]):
                raise TraceFormatError("taps must be finite and non-negative", lineno)
            cols[0].append(ints[0])
            cols[1].append(ints[1])
            cols[2].append(ints[2])
            cols[3].append(floats[0:2])
            cols[4].append(floats[2:4])
            cols[5].append(floats[4:])
    if not cols[0]:
        return TraceSet([], [], [], np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, len(tap_names))), sampling_interval)
    return TraceSet(*cols, sampling_interval=sampling_interval)
