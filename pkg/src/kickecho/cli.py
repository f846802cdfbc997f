"""Command-line batch runner.

Each subcommand runs one scenario from a YAML config (``--config``) with
flag overrides, writes CSV/JSON files into ``--out`` and appends a run entry
to ``manifest.json`` there.  Exit codes: 0 success, 1 some cells failed,
2 invalid configuration.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import config as config_mod
from .config import ExperimentConfig
from .decayfit import (
    CharTimeConfig,
    characteristic_times,
    decay_time_tau,
    fit_decay_law,
    fit_gamma,
    fit_nu,
    local_alpha,
    loglog,
)
from .dephasing import msc_first_order_series, msc_second_order_series
from .ensembles import WavePacketSpec, diffusion_fit, evolve_actions, sample_wavepacket
from .errors import ConfigError, KickEchoError
from .levy import critical_eta_exp, critical_eta_lin, fit_eta_dl, lm_fit, spectrum
from .maps import MapParams, accumulate_action, iterate, lyapunov_spectrum, sticking_time
from .qdyn import EchoSeries, TorusGrid, coherent_state, echo_series, saturation_estimate
from .serialize import levy_fit_record, read_csv, write_csv, write_json

COMMANDS = {
    "classical": "classical",
    "lyapunov": "lyapunov",
    "stick": "stick",
    "echo": "quantum-echo",
    "semiclassical": "semiclassical",
    "levy-fit": "levy-fit",
    "decay-fit": "decay-fit",
    "sweep": "sweep",
}


class Progress:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def __call__(self, msg: str):
        if self.enabled:
            print(msg, file=sys.stderr, flush=True)


def _spec(cfg: ExperimentConfig, p0=None) -> WavePacketSpec:
    hbar = TorusGrid(cfg.N).hbar
    return WavePacketSpec.from_k(cfg.packet.r0, cfg.packet.p0 if p0 is None else p0, hbar, cfg.packet.k)


def _char_config(cfg: ExperimentConfig) -> CharTimeConfig:
    th = cfg.thresholds
    return CharTimeConfig(step=th.step, gap=th.gap, saturation_alpha=th.saturation_alpha, slope_tol=th.slope_tol,
                          search_horizon=th.search_horizon, horizon=th.horizon, floor=th.floor,
                          span=th.span, repeats=th.repeats)


# ------------------------------------------------------------------ scenarios


def run_classical(cfg, out, say):
    params = MapParams(cfg.map.K, cfg.map.variant)
    spec = _spec(cfg)
    r, p = iterate(params, (spec.r0, spec.p0), cfg.T)
    files = [write_csv(out / "orbit.csv", ["t", "r", "p"], zip(range(cfg.T + 1), r, p))]
    ens = sample_wavepacket(spec, cfg.ensemble.n, cfg.seed, cfg.ensemble.fixed_r)
    times = np.unique(np.geomspace(1, cfg.T, num=min(cfg.T, 50)).astype(int))
    s = accumulate_action(params, (ens.r, ens.p), times)
    w = ens.weights
    m2 = []
    for row in s:
        c = row - w @ row
        m2.append(float(w @ (c * c)))
    files.append(write_csv(out / "diffusion.csv", ["t", "second_moment"], zip(times, m2)))
    summary = {"T": cfg.T, "n": cfg.ensemble.n}
    if times.size >= 3 and min(m2) > 0:
        fit = diffusion_fit(times, m2)
        summary.update(exponent=fit.exponent, regime=fit.regime)
    files.append(write_json(out / "classical.json", summary))
    say(f"classical: {cfg.ensemble.n} members to t={cfg.T}")
    return files, [summary]


def run_lyapunov(cfg, out, say):
    params = MapParams(cfg.map.K, cfg.map.variant)
    if cfg.T < 100:
        raise ConfigError("T: lyapunov needs T >= 100")
    l1, l2 = lyapunov_spectrum(params, (cfg.packet.r0, cfg.packet.p0), cfg.T)
    summary = {"K": cfg.map.K, "r0": cfg.packet.r0, "p0": cfg.packet.p0, "steps": cfg.T, "lambda1": l1, "lambda2": l2}
    return [write_json(out / "lyapunov.json", summary)], [summary]


def run_stick(cfg, out, say):
    params = MapParams(cfg.map.K, cfg.map.variant)
    st = cfg.stick
    res = sticking_time(params, (cfg.packet.r0, cfg.packet.p0), st.r_center, st.max_steps, st.p_threshold)
    summary = {"K": cfg.map.K, "r0": cfg.packet.r0, "p0": cfg.packet.p0, "escaped": res.escaped,
               "escape_time": res.escape_time, "max_steps": st.max_steps}
    return [write_json(out / "stick.json", summary)], [summary]


def _quantum(cfg, sigmas, K=None, p0=None):
    grid = TorusGrid(cfg.N)
    spec = _spec(cfg, p0)
    psi0 = coherent_state(grid, spec.r0, spec.p0, spec.xi)
    return echo_series(psi0, cfg.map.K if K is None else K, sigmas, cfg.T)


def _echo_rows(series_list):
    for s in series_list:
        for t, m in zip(s.times, s.values):
            yield s.sigma, int(t), m


def _saturation(series, cfg):
    try:
        return saturation_estimate(series, min_tail=cfg.thresholds.min_tail), "tail"
    except KickEchoError:
        return 1.0 / cfg.N, "1/N"


def run_echo(cfg, out, say):
    series = _quantum(cfg, cfg.sigmas)
    files = [write_csv(out / "echo.csv", ["sigma", "t", "M"], _echo_rows(series))]
    rows = []
    for s in series:
        sat, how = _saturation(s, cfg)
        rows.append({"sigma": s.sigma, "tau": decay_time_tau(s), "M_final": float(s.values[-1]),
                     "F_inf": sat, "F_inf_source": how})
    files.append(write_json(out / "echo_summary.json", {"N": cfg.N, "K": cfg.map.K, "rows": rows}))
    say(f"echo: N={cfg.N} K={cfg.map.K} T={cfg.T} sigmas={cfg.sigmas}")
    return files, rows


def run_semiclassical(cfg, out, say):
    params = MapParams(cfg.map.K, "B")  # the quantum step kicks first
    spec = _spec(cfg)
    ens = sample_wavepacket(spec, cfg.ensemble.n, cfg.seed, cfg.ensemble.fixed_r)
    series = []
    for sigma in cfg.sigmas:
        if cfg.ensemble.order == "second":
            series.append(msc_second_order_series(ens, params, sigma, cfg.T, k=cfg.ensemble.d_ratio))
        else:
            series.append(msc_first_order_series(ens, params, sigma, cfg.T))
        say(f"semiclassical: sigma={sigma} done")
    files = [write_csv(out / "semiclassical.csv", ["sigma", "t", "M"], _echo_rows(series))]
    rows = [{"sigma": s.sigma, "order": s.order, "tau": decay_time_tau(s)} for s in series]
    return files, rows


def run_levy(cfg, out, say):
    params = MapParams(cfg.map.K, "B")
    spec = _spec(cfg)
    ens = sample_wavepacket(spec, cfg.ensemble.n, cfg.seed, cfg.ensemble.fixed_r)
    dists = evolve_actions(ens, params, sorted(cfg.levy.times), bins=cfg.ensemble.bins)
    fits = []
    for d in dists:
        fits.append(fit_eta_dl(spectrum(d, pad=cfg.levy.pad), cfg.levy.n_freq))
    files = [write_csv(out / "levy.csv", ["time", "eta", "dl", "n_freq", "residual"],
                       [(f.time, f.eta, f.dl, f.n_freq, f.residual) for f in fits])]
    model = None
    need = 4 if cfg.levy.model == "exp" else 2
    if len(fits) >= need:
        pts = [(f.eta, f.dl) for f in fits]
        model = lm_fit(pts, model=cfg.levy.model, policy=cfg.levy.policy)
    records = []
    for f in fits:
        for sigma in cfg.sigmas or [None]:
            crit = None
            if model is not None and sigma not in (None, 0, 1):
                crit = (critical_eta_exp if cfg.levy.model == "exp" else critical_eta_lin)(model, sigma)
            rec = levy_fit_record(f, model, crit)
            rec["sigma"] = sigma
            records.append(rec)
    files.append(write_json(out / "levy.json", records))
    return files, [{"time": f.time, "eta": f.eta, "dl": f.dl} for f in fits]


def _global_alpha(series, floor):
    t = np.asarray(series.times, float)
    m = np.asarray(series.values)
    sel = (m > floor) & (m < 1.0) & (t > 0)
    if np.count_nonzero(sel) < 3:
        return math.nan, (math.nan, math.nan)
    slope = np.polyfit(np.log(t[sel]), loglog(m[sel], floor), 1)[0]
    return float(slope), (float(t[sel].min()), float(t[sel].max()))


def decay_table(series_list, cfg, K, p_center, only_sigma=None):
    """One row per sigma: decay-law fits, characteristic times and time scales."""
    th = cfg.thresholds
    by_sigma = {round(s.sigma, 12): s for s in series_list}
    sigmas = sorted(by_sigma)
    positive = [s for s in sigmas if s > 0]
    nu = math.nan
    t_nu = th.nu_time
    if positive and t_nu <= cfg.T:
        try:
            nu = fit_nu(positive, [by_sigma[s].values[t_nu] for s in positive], th.nu_mode, th.floor).nu
        except KickEchoError:
            pass
    c0 = math.nan
    try:
        M = np.array([by_sigma[s].values for s in positive])
        c0 = fit_decay_law(positive, series_list[0].times, M, th.floor).c0
    except KickEchoError:
        pass
    taus = {s: decay_time_tau(by_sigma[s]) for s in sigmas}
    finite = [s for s in positive if math.isfinite(taus[s])]
    gamma = fit_gamma(finite, [taus[s] for s in finite]).gamma if len(finite) >= 2 else math.nan
    ccfg = _char_config(cfg)
    traces = {}
    can_char = 0.01 in by_sigma and 0.1 in by_sigma and cfg.T >= 2 * th.step and math.isfinite(c0)
    if can_char:
        for s in positive:
            traces[s] = local_alpha(by_sigma[s], th.step, True, th.floor, th.span, th.repeats)
        sat, _ = _saturation(by_sigma[max(positive)], cfg)
    rows = []
    for s in positive:
        if only_sigma is not None and not math.isclose(s, only_sigma, rel_tol=1e-12):
            continue
        alpha, (t_lo, t_hi) = _global_alpha(by_sigma[s], th.floor)
        ct = None
        if can_char:
            try:
                ct = characteristic_times(traces, sat, s, c0=c0, config=ccfg)
            except KickEchoError:
                ct = None
        times = (ct.t0, ct.t1, ct.t2, ct.t3, ct.sigma_h) if ct else (None,) * 5
        rows.append([K, p_center, s, t_lo, t_hi, c0, nu, alpha, *times, taus[s], gamma])
    return rows


DECAY_HEADER = ["K", "p_center", "sigma", "t_lo", "t_hi", "c0", "nu", "alpha", "t0", "t1", "t2", "t3",
                "sigma_h", "tau", "gamma"]


def _thresholds_json(cfg):
    return dataclasses.asdict(cfg.thresholds)


def run_decay(cfg, out, say):
    if cfg.input:
        _, cols = read_csv(cfg.input)
        series = []
        for s in sorted(set(cols["sigma"].tolist())):
            sel = cols["sigma"] == s
            series.append(EchoSeries(float(s), cols["t"][sel].astype(int), cols["M"][sel]))
    else:
        series = _quantum(cfg, cfg.sigmas)
    rows = decay_table(series, cfg, cfg.map.K, cfg.packet.p0)
    files = [write_csv(out / "decayfit.csv", DECAY_HEADER, rows),
             write_json(out / "decayfit_thresholds.json", _thresholds_json(cfg))]
    return files, [dict(zip(DECAY_HEADER, r)) for r in rows]


# --------------------------------------------------------------------- sweep


def _cells(cfg):
    sw = cfg.sweep
    return [(K, p, s) for K in sw.K for p in sw.p_center for s in sw.sigma]


def cell_seed(master: int, index: int) -> int:
    """Per-cell seed derived from the master seed and the cell index only."""
    ss = np.random.SeedSequence(master, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_cell(cfg_dict, index, K, p0, sigma, out_dir):
    cfg = config_mod.from_dict(cfg_dict)
    sigmas = sorted({0.01, 0.02, 0.03, 0.1, float(sigma)})
    series = _quantum(cfg, sigmas, K=K, p0=p0)
    rows = decay_table(series, cfg, K, p0, only_sigma=float(sigma))
    row = rows[0]
    seed = cell_seed(cfg.seed, index)
    path = Path(out_dir) / "cells" / f"cell_{index:05d}.csv"
    write_csv(path, ["cell", "seed", *DECAY_HEADER], [[index, seed, *row]])
    return index, str(path)


def run_sweep(cfg, out, say, manifest):
    cells = _cells(cfg)
    if len(cells) > cfg.sweep.cap:
        work = len(cells) * cfg.T
        raise ConfigError(
            f"sweep.cap: {len(cells)} cells exceed the cap of {cfg.sweep.cap} "
            f"(would run {work} Floquet steps of 6 states at N={cfg.N})"
        )
    done = {t["cell"] for r in manifest["runs"] for t in r["tasks"]
            if t.get("status") == "ok" and t.get("config_hash") == cfg.digest() and (out / t["file"]).exists()}
    tasks, files = [], []
    todo = [(i, c) for i, c in enumerate(cells) if i not in done]
    for i in sorted(done):
        files.append(out / f"cells/cell_{i:05d}.csv")
    say(f"sweep: {len(cells)} cells, {len(done)} already done")
    cfg_dict = cfg.to_dict()

    def record(i, path=None, err=None):
        entry = {"cell": i, "K": cells[i][0], "p_center": cells[i][1], "sigma": cells[i][2],
                 "config_hash": cfg.digest()}
        if err is None:
            entry.update(status="ok", file=str(Path(path).relative_to(out)))
            files.append(Path(path))
        else:
            entry.update(status="failed", error=err)
        tasks.append(entry)
        say(f"cell {i}: {entry['status']}")

    if cfg.threads > 1 and len(todo) > 1:
        with cf.ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            futs = {pool.submit(_run_cell, cfg_dict, i, *c, str(out)): i for i, c in todo}
            for fut in cf.as_completed(futs):
                i = futs[fut]
                try:
                    record(*fut.result())
                except Exception as exc:  # a failed cell must not stop the sweep
                    record(i, err=f"{type(exc).__name__}: {exc}")
    else:
        for i, c in todo:
            try:
                record(*_run_cell(cfg_dict, i, *c, str(out)))
            except Exception as exc:
                record(i, err=f"{type(exc).__name__}: {exc}")
    # merge in cell order so the table does not depend on scheduling
    merged = []
    header = None
    for i in range(len(cells)):
        p = out / f"cells/cell_{i:05d}.csv"
        if p.exists():
            with p.open() as fh:
                lines = fh.read().splitlines()
            header = lines[0]
            merged.extend(lines[1:])
    agg = out / "sweep.csv"
    if header is not None:
        agg.write_text("\n".join([header, *merged]) + "\n")
        files.append(agg)
    return files, tasks


# ------------------------------------------------------------------ driver

RUNNERS = {
    "classical": run_classical,
    "lyapunov": run_lyapunov,
    "stick": run_stick,
    "quantum-echo": run_echo,
    "semiclassical": run_semiclassical,
    "levy-fit": run_levy,
    "decay-fit": run_decay,
}


def _load_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if path.exists():
        return json.loads(path.read_text())
    return {"tool_version": __version__, "runs": [], "outputs": []}


def run(cfg: ExperimentConfig, progress: bool = False) -> tuple[dict, int]:
    """Execute the configured scenario; return the manifest and an exit code."""
    say = Progress(progress)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(out)
    start = time.perf_counter()
    status = 0
    if cfg.scenario == "sweep":
        files, tasks = run_sweep(cfg, out, say, manifest)
        if any(t["status"] != "ok" for t in tasks):
            status = 1
        summary = tasks
    else:
        try:
            files, summary = RUNNERS[cfg.scenario](cfg, out, say)
            tasks = [{"task": cfg.scenario, "status": "ok"}]
        except ConfigError:
            raise
        except KickEchoError as exc:
            files, summary = [], []
            tasks = [{"task": cfg.scenario, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}]
            status = 1
    rel = [os.path.relpath(f, out) for f in files]
    for f in rel:
        if f not in manifest["outputs"]:
            manifest["outputs"].append(f)
    manifest["runs"].append({
        "scenario": cfg.scenario,
        "config_hash": cfg.digest(),
        "tool_version": __version__,
        "wall_time": time.perf_counter() - start,
        "config": cfg.to_dict(),
        "tasks": tasks,
        "outputs": rel,
    })
    write_json(out / "manifest.json", manifest)
    _print_summary(summary)
    return manifest, status


def _print_summary(rows):
    rows = [r for r in rows if isinstance(r, dict)]
    if not rows:
        return
    keys = [k for k in rows[0] if not isinstance(rows[0][k], (dict, list))]
    table = [[_short(r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(row[j]) for row in table)) for j, k in enumerate(keys)]
    print("  ".join(k.ljust(w) for k, w in zip(keys, widths)))
    for row in table:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else str(v)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--seed", type=int, metavar="U64", help="master RNG seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N", help="worker processes for sweeps")
    common.add_argument("--progress", action="store_true", help="report progress on stderr")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set map.K=7 --set sigmas=[0.1,0.2]")
    parser = argparse.ArgumentParser(prog="kickecho", description="Kicked-rotator echo experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "validate-config"]:
        sub.add_parser(name, parents=[common])
    return parser


def effective_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        except Exception as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a mapping")
    if args.command in COMMANDS:
        data["scenario"] = COMMANDS[args.command]
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item}: expected KEY=VALUE")
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(value)
    for flag in ("seed", "out", "threads"):
        v = getattr(args, flag)
        if v is not None:
            data[flag] = v
    return config_mod.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.command == "validate-config":
            print(config_mod.dump(cfg), end="")
            return 0
        _, status = run(cfg, progress=args.progress)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
