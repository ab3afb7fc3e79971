"""
Command line: ``drivencce {run,validate,fit,bootstrap,deer}``.

Exit codes: 0 success, 1 configuration error, 2 partial failure.

Output layout of ``run``::

    OUT/curves/<protocol>_<ppm>ppm/config_000.tsv   per-configuration curves
    OUT/ensemble/<protocol>_<ppm>ppm.tsv            ensemble averages
    OUT/fits.tsv, OUT/scaling.tsv, OUT/manifest.json

A rerun skips every curve already listed in the manifest whose checksum still
matches, so interrupted runs resume where they stopped.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .cce import configuration_coherence
from .config import ConfigError, ExperimentConfig, load_config, preset, validate
from .dynamics import CoherenceCurve, HahnEchoSchedule, deer_ensemble, tau_mask
from .lattice import split_seed

log = logging.getLogger("drivencce")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out: Path, config_hash: str):
        self.out = out
        self.path = out / "manifest.json"
        self.data = {"config_hash": config_hash, "tasks": {}, "files": {}, "timing": {}}
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == config_hash:
                self.data.update({k: old.get(k, {}) for k in ("tasks", "files")})

    def verified(self, rel: str) -> bool:
        p = self.out / rel
        return rel in self.data["files"] and p.exists() and sha256_file(p) == self.data["files"][rel]

    def record(self, rel: str, status: str = "done") -> None:
        self.data["files"][rel] = sha256_file(self.out / rel)
        self.data["tasks"][rel] = status

    def fail(self, task: str, message: str) -> None:
        self.data["tasks"][task] = f"failed: {message}"

    @property
    def content_hash(self) -> str:
        core = {k: self.data[k] for k in ("config_hash", "tasks", "files")}
        return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()

    def save(self) -> None:
        self.data["manifest_hash"] = self.content_hash
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _ppm_tag(c: float) -> str:
    return f"{c:g}ppm"


def _curve_task(args):
    conc, proto, tau, cce, seed, n_bath, n_shell, iso = args
    try:
        return configuration_coherence(conc, proto, HahnEchoSchedule(tau), cce, seed, n_bath, n_shell, iso), None
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(v if isinstance(v, str) else repr(v) for v in r) + "\n")


def run_sweep(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, cfg.digest())
    cce = cfg.cce_config()
    t_start = time.time()
    fit_rows, failed = [], 0
    t2_points = {}
    for spec in cfg.protocols:
        proto = spec.build()
        for conc in cfg.concentrations:
            grid = cfg.tau.grid(conc, spec.tau_stop)
            keep = tau_mask(grid, proto.effective_rabi, cfg.tau.mask_threshold)
            tau = grid[keep]
            group = f"{proto.label}_{_ppm_tag(conc)}"
            (out / "curves" / group).mkdir(parents=True, exist_ok=True)
            seeds = [split_seed(cfg.master_seed, i) for i in range(cfg.n_s)]
            rels = [f"curves/{group}/config_{i:03d}.tsv" for i in range(cfg.n_s)]
            todo = [i for i, r in enumerate(rels) if not manifest.verified(r)]
            tasks = [(conc, proto, tau, cce, seeds[i], cfg.bath.n_bath, cfg.bath.n_mf_shell, cfg.isotope)
                     for i in todo]
            log.info("%s: %d of %d configurations to compute", group, len(todo), cfg.n_s)
            pool = ProcessPoolExecutor(max_workers=min(workers, len(tasks))) if workers > 1 and len(tasks) > 1 else None
            results = pool.map(_curve_task, tasks) if pool else map(_curve_task, tasks)
            try:
                # record each curve as it arrives so an interrupted run loses at most one configuration
                for i, (curve, err) in zip(todo, results):
                    if err is not None:
                        manifest.fail(rels[i], f"seed {seeds[i]}: {err}")
                        failed += 1
                        continue
                    curve.write(out / rels[i], proto.label, seeds[i])
                    manifest.record(rels[i])
                    manifest.save()
            finally:
                if pool:
                    pool.shutdown()
            manifest.save()
            curves = [CoherenceCurve.read(out / r) for r in rels if manifest.verified(r)]
            if not curves:
                continue
            mean = np.mean([c.values for c in curves], axis=0)
            ens_rel = f"ensemble/{group}.tsv"
            (out / "ensemble").mkdir(exist_ok=True)
            CoherenceCurve(curves[0].times, mean).write(out / ens_rel, proto.label, cfg.master_seed)
            with open(out / ens_rel, "a") as fh:
                fh.write(f"# tau_mask_removed {int((~keep).sum())} of {keep.size}\n")
            manifest.record(ens_rel)
            for method in analysis.METHODS:
                try:
                    f = analysis.fit_stretched((curves[0].times, mean), method, cfg.fit.fit_fraction)
                except ValueError as exc:
                    log.warning("%s %s fit failed: %s", group, method, exc)
                    fit_rows.append((proto.label, conc, method, "nan", "nan", 0, 0))
                    continue
                fit_rows.append((proto.label, conc, method, f.T2, f.p, f.points_used, len(f.masked)))
                if method == cfg.fit.method:
                    t2_points.setdefault(proto.label, []).append((conc, f.T2))
    _write_table(out / "fits.tsv", ("protocol", "concentration_ppm", "method", "T2_us", "p", "n_points",
                                    "masked_count"), fit_rows)
    manifest.record("fits.tsv")
    scale_rows = []
    for label, pts in t2_points.items():
        if len({c for c, _ in pts}) >= 2:
            s = analysis.fit_scaling(pts)
            pl = analysis.fit_power_law(pts)
            scale_rows.append((label, s.A, s.uncertainty, float(pl.x), float(pl.x_uncertainty)))
    _write_table(out / "scaling.tsv", ("protocol", "A_us_ppm", "A_err", "exponent_x", "x_err"), scale_rows)
    manifest.record("scaling.tsv")
    manifest.data["timing"] = {"wall_seconds": round(time.time() - t_start, 3)}
    manifest.save()
    return EXIT_PARTIAL if failed else EXIT_OK


def run_deer(cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, cfg.digest())
    d = cfg.deer
    probes = np.arange(d.probe_min, d.probe_max + d.probe_step / 2, d.probe_step)
    rel = f"deer_{cfg.isotope}.tsv"
    if not manifest.verified(rel):
        scan = deer_ensemble(d.concentration, cfg.isotope, probes, d.n_bath, d.n_configs, cfg.master_seed,
                             d.linewidth)
        _write_table(out / rel, ("probe_MHz", "L"), zip(scan.probe_frequencies.tolist(), scan.coherence.tolist()))
        with open(out / rel, "a") as fh:
            fh.write(f"# reference {float(np.mean(scan.reference))!r}\n")
        manifest.record(rel)
    manifest.save()
    return EXIT_OK


def _load(args) -> ExperimentConfig:
    if args.preset and args.config:
        raise ConfigError("--config", "give either --config or --preset, not both")
    if args.preset:
        cfg = preset(args.preset)
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise ConfigError("--config", "a configuration file or preset is required")
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _read_curve_files(paths):
    return [CoherenceCurve.read(p) for p in paths]


def cmd_run(args) -> int:
    cfg = _load(args)
    errors = [d for d in validate(cfg) if d.level == "error"]
    for d in errors:
        print(d, file=sys.stderr)
    if errors:
        return EXIT_CONFIG
    workers = cfg.workers or os.cpu_count() or 1
    if cfg.kind == "deer":
        return run_deer(cfg, Path(cfg.out))
    if cfg.kind != "hahn_sweep":
        raise ConfigError("kind", f"'run' handles hahn_sweep and deer, not {cfg.kind}")
    return run_sweep(cfg, Path(cfg.out), workers)


def cmd_validate(args) -> int:
    cfg = _load(args)
    diags = validate(cfg)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return EXIT_CONFIG if any(d.level == "error" for d in diags) else EXIT_OK


def cmd_fit(args) -> int:
    paths = args.curves or sorted(Path(args.out or "results").glob("ensemble/*.tsv"))
    if not paths:
        raise ConfigError("--curves", "no curve files found")
    rows, failed = [], 0
    for p in paths:
        c = CoherenceCurve.read(p)
        for method in analysis.METHODS:
            try:
                f = analysis.fit_stretched(c, method, args.fit_fraction)
                rows.append((Path(p).stem, method, f.T2, f.p, f.points_used, len(f.masked)))
            except ValueError as exc:
                failed += 1
                print(f"{p} {method}: {exc}", file=sys.stderr)
    target = Path(args.out or ".") / "refits.tsv"
    target.parent.mkdir(parents=True, exist_ok=True)
    _write_table(target, ("curve", "method", "T2_us", "p", "n_points", "masked_count"), rows)
    print(target)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_bootstrap(args) -> int:
    cfg = _load(args) if (args.config or args.preset) else None
    out = Path(args.out or (cfg.out if cfg else "results"))
    groups = sorted(p for p in (out / "curves").glob("*") if p.is_dir())
    if not groups:
        raise ConfigError("--out", f"no per-configuration curves under {out / 'curves'}")
    sizes = args.sizes or (cfg.bootstrap.sample_sizes if cfg else [5, 10])
    n_res = args.resamples or (cfg.bootstrap.n_resamples if cfg else 2000)
    seed = args.seed if args.seed is not None else (cfg.master_seed if cfg else 0)
    rows = []
    for g in groups:
        curves = _read_curve_files(sorted(g.glob("config_*.tsv")))
        usable = [n for n in sizes if n <= len(curves)]
        if not usable:
            continue
        rep = analysis.bootstrap_errors(curves, usable, n_res, seed)
        for n in usable:
            rows.append((g.name, n, rep.sigma_T2_pct[n], rep.sigma_p_pct[n], rep.failures[n]))
    _write_table(out / "bootstrap.tsv", ("group", "N", "sigma_T2_pct", "sigma_p_pct", "failed_fits"), rows)
    print(out / "bootstrap.tsv")
    return EXIT_OK


def cmd_deer(args) -> int:
    if not (args.config or args.preset):
        args.preset = "deer-n15"
    cfg = _load(args)
    cfg.kind = "deer"
    return run_deer(cfg, Path(cfg.out))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivencce", description="Driven spin-bath pCCE simulations")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", type=str)
        p.add_argument("--preset", type=str)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", type=str)

    for name, fn in (("run", cmd_run), ("validate", cmd_validate), ("deer", cmd_deer)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("fit")
    p.add_argument("--curves", nargs="*")
    p.add_argument("--out", type=str)
    p.add_argument("--fit-fraction", type=float, default=0.6)
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("bootstrap")
    common(p)
    p.add_argument("--sizes", type=int, nargs="*")
    p.add_argument("--resamples", type=int)
    p.set_defaults(func=cmd_bootstrap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
