"""Command-line experiment runner: ``linksig {correlate,synth,attack,fbch,poisson}``.

Every run writes its outputs plus ``manifest.json`` (config snapshot, master
seed, file hashes, duration) under ``--out``.  Work is split into cells keyed
by a deterministic tuple; each cell seeds itself from the master seed and a
CRC of its key, and results are assembled in key order, so the output bytes do
not depend on ``--workers``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import chansynth, corrmodel, fbch, keyext, poisson, sia
from .config import ConfigError, dump_config, load_config
from .geometry import default_for

log = logging.getLogger("linksig")

COMMANDS = ("correlate", "synth", "attack", "fbch", "poisson")


def derive_seed(master: int, *key) -> int:
    """Seed for one work cell: master seed mixed with a stable hash of the cell key."""
    crc = zlib.crc32(repr(tuple(key)).encode())
    return int(np.random.SeedSequence([int(master), crc]).generate_state(1)[0])


def _fmt(x) -> str:
    return f"{x:.9g}" if isinstance(x, float) else str(x)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _k_label(k) -> str:
    return "all" if k is None else str(k)


# --------------------------------------------------------------------------- worker pool

_STATE: dict = {}


def _init_worker(state: dict) -> None:
    _STATE.clear()
    _STATE.update(state)
    _STATE["_limits"] = threadpool_limits(1)


def _run_cells(func, cells: list, workers: int, state: dict) -> list:
    """``[func(cell) for cell in cells]``, possibly on a process pool, in cell order."""
    if workers <= 1 or len(cells) <= 1:
        _init_worker(state)
        return [func(c) for c in cells]
    chunk = max(1, len(cells) // (4 * workers))
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(state,)) as ex:
        return list(ex.map(func, cells, chunksize=chunk))


# --------------------------------------------------------------------------- datasets


def make_network(cfg: dict, seed: int) -> chansynth.NetworkChannel:
    s, g = cfg["synthesis"], cfg["geometry"]
    env = s["environment"]
    geo = default_for(
        env,
        big_distance_D=g[env]["big_distance_D"],
        ring_radius_R=g[env]["ring_radius_R"],
        wavelength=g["wavelength"],
        path_loss_exponent=g["path_loss_exponent"],
    )
    layout = chansynth.default_layout(s["nodes"], tuple(s["extent"]), s["layout_seed"])
    return chansynth.NetworkChannel(
        layout, geo, seed,
        scatterer_count=s["scatterer_count"], tap_count=s["tap_count"],
        sampling_interval=s["sampling_interval"], drift_rate=s["drift_rate"],
    )


def make_dataset(cfg: dict, seed: int):
    """Return (TraceSet, NetworkChannel or None); a configured trace file wins over synthesis."""
    s = cfg["synthesis"]
    if s["traces"]:
        return chansynth.load_trace_file(s["traces"]), None
    net = make_network(cfg, seed)
    return net.dataset(s["meas_per_link"], s["noise_fraction"]), net


# --------------------------------------------------------------------------- commands


def cmd_correlate(cfg: dict, seed: int, out: Path, workers: int) -> list[Path]:
    g = cfg["geometry"]
    ratios = np.round(np.arange(g["ratio_start"], g["ratio_stop"] + 0.5 * g["ratio_step"], g["ratio_step"]), 12)
    cells = []
    for env in g["environments"]:
        for theta in sorted(g[env]["thetas"]):
            for r in ratios:
                cells.append((env, float(theta), float(r)))
    results = _run_cells(_correlate_cell, cells, workers, {"cfg": cfg})
    paths = []
    for env in g["environments"]:
        rows = [(c[2], c[1], res) for c, res in zip(cells, results) if c[0] == env]
        path = out / f"correlation_{env}.csv"
        corrmodel.write_curve_csv(rows, path)
        paths.append(path)
    return paths


def _correlate_cell(cell):
    env, theta, ratio = cell
    g = _STATE["cfg"]["geometry"]
    geo = default_for(
        env,
        big_distance_D=g[env]["big_distance_D"],
        ring_radius_R=g[env]["ring_radius_R"],
        wavelength=g["wavelength"],
        path_loss_exponent=g["path_loss_exponent"],
        angle_theta_R=theta,
        separation_d=ratio * g["wavelength"],
    )
    return corrmodel.correlation(geo, tol=g["tol"])


def cmd_synth(cfg: dict, seed: int, out: Path, workers: int) -> list[Path]:
    ds, _ = make_dataset(cfg, seed)
    path = out / "traces.csv"
    chansynth.save_trace_file(ds, path)
    return [path]


def _attack_cells(cfg: dict, seed: int, ds) -> list:
    a = cfg["attack"]
    targets = sia.select_targets(ds, a["targets"], derive_seed(seed, "targets"))
    cells = []
    for scenario in a["scenarios"]:
        for model in a["models"]:
            for k in a["k_nearest"][scenario]:
                for tx, rx in targets:
                    cells.append((scenario, model, k, int(tx), int(rx)))
    return cells


def _model_seed(seed: int, scenario: str, model: str, k, tx: int, rx: int) -> int:
    return derive_seed(seed, "attack", scenario, model, k, tx, rx)


def _attack_cell(cell):
    scenario, model, k, tx, rx = cell
    cfg, seed = _STATE["cfg"], _STATE["seed"]
    a = cfg["attack"]
    trace = sia.attack_link(
        _STATE["dataset"], sia.AttackScenario(scenario, tx, rx), model,
        hyperparams=a["hyperparams"].get(model), key_points=a["key_points"],
        k_nearest=k, seed=_model_seed(seed, scenario, model, k, tx, rx),
    )
    return trace.per_point_guesses


def cmd_attack(cfg: dict, seed: int, out: Path, workers: int) -> list[Path]:
    a = cfg["attack"]
    ds, _ = make_dataset(cfg, seed)
    cells = _attack_cells(cfg, seed, ds)
    results = _run_cells(_attack_cell, cells, workers, {"cfg": cfg, "seed": seed, "dataset": ds})
    paths = []
    guess_path = out / "guesses.csv"
    points = a["key_points"]
    _write_rows(
        guess_path,
        ["scenario", "model", "k", "tx", "rx"] + [f"g_{i}" for i in range(points)],
        [[s, m, _k_label(k), tx, rx, *g.tolist()] for (s, m, k, tx, rx), g in zip(cells, results)],
    )
    paths.append(guess_path)
    groups: dict = {}
    for (s, m, k, _tx, _rx), g in zip(cells, results):
        groups.setdefault((s, m, k), []).append(sia.GuessTrace(g))
    rows = []
    for (s, m, k), traces in groups.items():
        path = out / f"cdf_{s}_{m}_k{_k_label(k)}.csv"
        sia.write_cdf_csv(sia.cdf_of_guesses(traces), path)
        paths.append(path)
        rows.append(sia.summary(s, m, k, traces, points))
    brute = [sia.brute_force_trace(points)] * 2
    rows.append(sia.summary("brute_force", None, None, brute, points))
    summary_path = out / "summary.json"
    sia.write_summary_json(rows, summary_path)
    paths.append(summary_path)
    for r in rows:
        log.info("%-11s %-5s k=%-4s mean %.2f  one-guess %.2f  log2 %.1f",
                 r["scenario"], r["model"], _k_label(r["k"]), r["mean"], r["one_guess_fraction"], r["log2_search_space"])
    return paths


def _provider(ds, net, meas_index=0):
    if net is not None:
        return fbch.trace_provider(ds, meas_index, phase_source=net)
    return fbch.trace_provider(ds, meas_index)


def _fbch_guess_cell(cell):
    n, model, tx, rx = cell
    cfg, seed, ds = _STATE["cfg"], _STATE["seed"], _STATE["dataset"]
    f = cfg["fbch"]
    scenario = f["scenario"]
    k = None if scenario == "case3" else f["k_nearest"]
    pool = tuple(int(h) for h in sorted(set(ds.tx_id.tolist())) if h not in (tx, rx))
    session = fbch.FbchSession(tx, rx, pool, n, seed=derive_seed(seed, "fbch-session", n, tx, rx))
    trace = fbch.fbch_adversary_attack(
        session, ds, scenario, model, f["adversary_knows_selection"],
        phase_source=_STATE.get("net"), meas_index=None,
        hyperparams=cfg["attack"]["hyperparams"].get(model), key_points=cfg["attack"]["key_points"],
        k_nearest=k, seed=_model_seed(seed, scenario, model, k, tx, rx),
    )
    return trace.per_point_guesses


def _fbch_agreement_cell(cell):
    n, idx, tx, rx = cell
    cfg, seed, ds = _STATE["cfg"], _STATE["seed"], _STATE["dataset"]
    f = cfg["fbch"]
    pool = tuple(int(h) for h in sorted(set(ds.tx_id.tolist())) if h not in (tx, rx))
    sess_seed = derive_seed(seed, "fbch-agreement", n, idx)
    session = fbch.FbchSession(tx, rx, pool, n, seed=sess_seed)
    provider = _provider(ds, _STATE.get("net"))
    clean = fbch.run_fbch(session, provider)
    noisy = session.with_(noise_fraction=f["noise_fraction"])
    a, b = fbch.fbch_samplers(noisy, provider)
    rate, rounds = float("nan"), -1
    try:
        first = fbch.run_fbch(noisy, provider)
        rate = keyext.bit_agreement_rate(first.key_tx, first.key_rx)
        rounds = keyext.reconcile(a, b, key_length=session.key_length, max_rounds=f["max_rounds"]).rounds
    except keyext.ReconciliationError:
        rounds = 0
    except fbch.FbchError as exc:
        log.debug("session %d/%d aborted: %s", n, idx, exc)
    return clean.key_tx == clean.key_rx, rate, rounds


def cmd_fbch(cfg: dict, seed: int, out: Path, workers: int) -> list[Path]:
    f = cfg["fbch"]
    ds, net = make_dataset(cfg, seed)
    targets = sia.select_targets(ds, f["sessions"], derive_seed(seed, "targets"))
    state = {"cfg": cfg, "seed": seed, "dataset": ds, "net": net}
    cells = [(n, m, int(tx), int(rx)) for m in f["models"] for n in f["helpers"] for tx, rx in targets]
    results = _run_cells(_fbch_guess_cell, cells, workers, state)
    paths = []
    points = cfg["attack"]["key_points"]
    guess_path = out / "guesses.csv"
    _write_rows(
        guess_path,
        ["helpers", "model", "tx", "rx"] + [f"g_{i}" for i in range(points)],
        [[n, m, tx, rx, *g.tolist()] for (n, m, tx, rx), g in zip(cells, results)],
    )
    paths.append(guess_path)
    summary = []
    for m in f["models"]:
        by_n: dict = {}
        for (n, mm, _tx, _rx), g in zip(cells, results):
            if mm == m:
                by_n.setdefault(n, []).append(sia.GuessTrace(g))
        path = out / f"helpers_{f['scenario']}_{m}.csv"
        fbch.write_helper_csv(fbch.helper_sweep_cdf(by_n), path)
        paths.append(path)
        for n in sorted(by_n):
            stats = sia.summary(f["scenario"], m, f["k_nearest"], by_n[n], points)
            summary.append({**stats, "helpers": n})
            log.info("%s helpers=%d mean %.2f  within-6 %.2f", m, n, stats["mean"], stats["within_6_fraction"])

    agreement_helpers = [n for n in f["helpers"] if n >= 1]
    acells = []
    for n in agreement_helpers:
        for i in range(f["agreement_sessions"]):
            tx, rx = targets[i % len(targets)]
            acells.append((n, i, int(tx), int(rx)))
    aresults = _run_cells(_fbch_agreement_cell, acells, workers, state)
    agree_path = out / "agreement.csv"
    _write_rows(
        agree_path,
        ["helpers", "session", "tx", "rx", "noiseless_keys_equal", "noisy_bit_agreement", "reconcile_rounds"],
        [[n, i, tx, rx, str(eq).lower(), rate, rounds] for (n, i, tx, rx), (eq, rate, rounds) in zip(acells, aresults)],
    )
    paths.append(agree_path)
    for n in agreement_helpers:
        sub = [r for c, r in zip(acells, aresults) if c[0] == n]
        ok = sum(1 for r in sub if r[2] > 0)
        log.info("helpers=%d noiseless agreement %d/%d, reconciled %d/%d", n, sum(r[0] for r in sub), len(sub), ok, len(sub))

    summary_path = out / "summary.json"
    sia.write_summary_json(summary, summary_path)
    paths.append(summary_path)
    paths += cmd_poisson(cfg, seed, out, workers)
    return paths


def _poisson_cell(cell):
    lam, r, n = cell
    p = _STATE["cfg"]["poisson"]
    placement = poisson.PoissonPlacement(lam, r, n)
    exact = poisson.close_attack_probability(placement)
    trials = p["mc_trials"]
    if not trials:
        return exact, None
    est = poisson.monte_carlo_close_attack(placement, p["mc_region_area"], trials, derive_seed(_STATE["seed"], "poisson", lam, r, n))
    return exact, est


def cmd_poisson(cfg: dict, seed: int, out: Path, workers: int) -> list[Path]:
    p = cfg["poisson"]
    cells = [(float(l), float(r), int(n)) for l in p["densities"] for r in p["radii"] for n in p["node_counts"]]
    results = _run_cells(_poisson_cell, cells, workers, {"cfg": cfg, "seed": seed})
    header = ["lambda_A", "close_radius", "legit_count", "probability"]
    if p["mc_trials"]:
        header.append("mc_estimate")
    rows = []
    for (lam, r, n), (exact, est) in zip(cells, results):
        row = [lam, r, n, exact]
        if p["mc_trials"]:
            row.append(est)
        rows.append(row)
    path = out / "poisson_table.csv"
    _write_rows(path, header, rows)
    return [path]


RUNNERS = {
    "correlate": cmd_correlate,
    "synth": cmd_synth,
    "attack": cmd_attack,
    "fbch": cmd_fbch,
    "poisson": cmd_poisson,
}


# --------------------------------------------------------------------------- manifest


def sha256_of(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, command: str, cfg: dict, seed: int, workers: int, paths, duration: float) -> Path:
    manifest = {
        "command": command,
        "master_seed": seed,
        "version": _version(),
        "workers": workers,
        "config": cfg,
        "outputs": {str(p.relative_to(out)): sha256_of(p) for p in sorted(paths)},
        "duration_s": round(duration, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    data = json.loads(Path(path).read_text())
    for key in ("command", "master_seed", "config"):
        if key not in data:
            raise ConfigError(f"manifest {path} lacks {key!r}")
    return data


# --------------------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linksig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=RUNNERS[name].__name__.replace("cmd_", "run "))
        p.add_argument("--config", type=Path, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--from-manifest", type=Path, dest="manifest",
                       help="rerun with the config and seed recorded in a manifest")
        if name in ("attack", "fbch"):
            p.add_argument("--traces", type=Path, help="trace CSV to attack instead of synthesizing one")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    if args.manifest is not None:
        if args.config is not None:
            raise ConfigError("--config and --from-manifest are mutually exclusive")
        m = read_manifest(args.manifest)
        if m["command"] != args.command:
            raise ConfigError(f"manifest was written by {m['command']!r}, not {args.command!r}")
        cfg = load_config(overrides=m["config"])
        seed = int(m["master_seed"]) if args.seed is None else args.seed
    else:
        overrides = {}
        if getattr(args, "traces", None) is not None:
            overrides = {"synthesis": {"traces": str(args.traces)}}
        cfg = load_config(args.config, overrides)
        seed = 0 if args.seed is None else args.seed
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    start = time.perf_counter()
    with threadpool_limits(1):
        paths = RUNNERS[args.command](cfg, seed, out, args.workers)
    paths = [Path(p) for p in paths] + [out / "config.yaml"]
    manifest = write_manifest(out, args.command, cfg, seed, args.workers, paths, time.perf_counter() - start)
    log.info("wrote %d files; manifest %s", len(paths), manifest)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any failure as one JSON line
        print(json.dumps({"error": "runtime", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
