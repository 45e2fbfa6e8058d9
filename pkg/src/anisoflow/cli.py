"""Batch experiment runner: YAML configs in, CSV reports, certificates and plots out.

Exit codes: 0 when every declared invariant check of the pipeline passed,
1 when a check failed (named in the summary), 2 for config or manifest
errors.  Identical config and seed produce byte-identical CSV output; sweep
points run concurrently (``ANISOFLOW_WORKERS`` caps the pool) and each
writes to its own subdirectory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import fixtures
from .diffquot import (AnisotropyMatrix, DerivativeStructure, StructureTerm, big_u,
                       operator_bounds, verify_difference_quotient)
from .flow import (FIELD_REGISTRY, SplitVectorField, builtin_field, compressibility,
                   decay_curve_from_flow, integrate_flow, make_split_field, vlasov_field,
                   vlasov_structure)
from .grid import (Grid, GridFunction, Region, ball, lebesgue_norm, load_binary,
                   load_csv, product_ball, product_grid, sample)
from .maximal import get_bump_family, maximal_function
from .singular import (apply, get_kernel, measure_cz_bounds, measure_from_atoms,
                       measure_from_density, validate_kernel)
from .stability import (budget_terms, equi_curve, measure_block_norm, measure_prefactor,
                        select_parameters, stability_report_from_flows)
from .weak_lebesgue import verify_interpolation, weak_norm


class ConfigError(ValueError):
    pass


EXPERIMENT_KINDS = ("norms", "maximal", "singint", "diffquot", "flow",
                    "stability", "certificate")


@dataclass
class ExperimentConfig:
    kind: str
    output_dir: Path
    seed: int = 0
    plots: bool = True
    params: dict = field(default_factory=dict)
    sweeps: list = field(default_factory=list)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        kind = raw.get("experiment")
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"experiment must be one of {EXPERIMENT_KINDS}, got {kind!r}")
        params = raw.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("params must be a mapping")
        sweeps = raw.get("sweeps", [])
        if sweeps is not None and not isinstance(sweeps, list):
            raise ConfigError("sweeps must be a list of parameter overrides")
        if isinstance(sweeps, list) and len(sweeps) == 0 and "sweeps" in raw:
            raise ConfigError("sweeps, when present, must be non-empty")
        cfg = cls(kind=kind,
                  output_dir=Path(raw.get("output_dir", "anisoflow_out")),
                  seed=int(raw.get("seed", 0)),
                  plots=bool(raw.get("plots", True)),
                  params=params,
                  sweeps=sweeps or [])
        cfg.check_references()
        return cfg

    def check_references(self):
        for key in ("field_manifest", "structure_manifest", "measure_file"):
            path = self.params.get(key)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{key} points at a missing file: {path}")
        for sweep in self.sweeps:
            if not isinstance(sweep, dict):
                raise ConfigError("each sweep point must be a parameter mapping")


# -- manifest loaders -----------------------------------------------------------

def field_from_manifest(manifest: dict) -> SplitVectorField:
    """Builtin fields by kind, or gridded fields from per-slice value files."""
    kind = manifest.get("kind")
    if kind == "vlasov":
        xg = Grid(2, 0, tuple(manifest.get("x_half_widths", (3.0, 3.0))),
                  tuple(manifest.get("x_points", (128, 128))))
        atoms = manifest.get("atoms", [[0.5, 0.0], [-0.4, 0.3], [0.1, -0.5]])
        weights = manifest.get("weights", [0.02, 0.02, 0.01])
        rho = measure_from_atoms(xg, atoms, weights)
        return vlasov_field(rho, manifest.get("coupling", 1.0),
                            manifest.get("eta", 0.1),
                            manifest.get("v_half_width", 2.0),
                            manifest.get("v_points", 8))
    if kind == "gridded":
        paths = manifest.get("slices")
        if not paths:
            raise ConfigError("gridded field manifests need slice paths")
        slices = []
        for p in paths:
            p = Path(p)
            slices.append(load_binary(p) if p.suffix == ".bin" else load_csv(p))
        times = manifest.get("times")
        return make_split_field(slices[0].grid, slices, times,
                                name=manifest.get("name", "gridded"))
    if kind in FIELD_REGISTRY:
        grid = _grid_from_manifest(manifest)
        params = {k: v for k, v in manifest.items()
                  if k in ("rate", "velocity")}
        return builtin_field(kind, grid, **params)
    raise ConfigError(f"unknown field kind {kind!r}")


def _grid_from_manifest(manifest: dict) -> Grid:
    n1 = int(manifest.get("n1", 1))
    n2 = int(manifest.get("n2", 1))
    points = manifest.get("points", 64)
    widths = manifest.get("half_widths", np.pi)
    n = n1 + n2
    points = (points,) * n if np.isscalar(points) else tuple(points)
    widths = (float(widths),) * n if np.isscalar(widths) else tuple(widths)
    return Grid(n1, n2, widths, points)


_GAMMA_SOURCES = {
    "ones": lambda x: np.ones(np.shape(x)),
    "cos": np.cos,
    "sin": np.sin,
    "msin": lambda x: -np.sin(x),
}


def structure_from_manifest(grid: Grid, rows: list) -> DerivativeStructure:
    """Rows of (i, j, k, kernel_name, gamma_source, datum_source).

    Sources are either registry names (ones/cos/sin/msin for 1-D blocks) or
    paths to grid-function files; datum sources may also be
    ``atoms:x;w|x;w|...`` literals.
    """
    g1, g2 = grid.block1(), grid.block2()
    terms = []
    for row in rows:
        i, j, k = int(row["i"]), int(row["j"]), int(row["k"])
        kern = get_kernel(row["kernel"], dim=g1.ndim)
        terms.append(StructureTerm(i, j, k, kern,
                                   _load_gamma(row["gamma_source"], g2),
                                   float(row.get("gamma_q", 2.0)),
                                   _load_datum(row["datum_source"], g1)))
    return DerivativeStructure(grid, tuple(terms))


def _load_gamma(source: str, g2: Grid) -> GridFunction:
    if source in _GAMMA_SOURCES:
        return sample(_GAMMA_SOURCES[source], g2)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"gamma source {source!r} is neither named nor a file")
    return load_binary(path) if path.suffix == ".bin" else load_csv(path)


def _load_datum(source: str, g1: Grid):
    if source.startswith("atoms:"):
        locs, weights = [], []
        for chunk in source[len("atoms:"):].split("|"):
            *xs, w = chunk.split(";")
            locs.append([float(v) for v in xs])
            weights.append(float(w))
        return measure_from_atoms(g1, locs, weights)
    if source in _GAMMA_SOURCES:
        return measure_from_density(sample(_GAMMA_SOURCES[source], g1))
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"datum source {source!r} is neither named nor a file")
    gf = load_binary(path) if path.suffix == ".bin" else load_csv(path)
    return measure_from_density(gf)


# -- pipelines -------------------------------------------------------------------

def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row) + "\n")


def _plot_series(path: Path, xs, series: dict, xlabel: str, ylabel: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def run_norms(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    points = int(params.get("points", 4096))
    u = fixtures.inverse_sqrt(points)
    chk = verify_interpolation(u, float(params.get("p", 2.0)))
    m1 = weak_norm(u, 1).value
    _write_csv(outdir / "report.csv", "quantity,value",
               [("lhs_l1", chk.lhs), ("rhs_interpolation", chk.rhs),
                ("weak_m1", m1), ("holds", chk.holds)])
    return {"passed": bool(chk.holds), "checks": {"interpolation_holds": bool(chk.holds)},
            "lhs": chk.lhs, "rhs": chk.rhs}


def run_maximal(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    points = int(params.get("points", 1024))
    u = fixtures.interval_indicator(points, half_width=8.0)
    mu = maximal_function(u)
    x = u.grid.axis_coords(0)
    idx = int(np.argmin(np.abs(x - 2.0)))
    val = float(mu.values[idx])
    oracle = 1.0 / 3.0
    ok = abs(val - oracle) <= 0.05 * oracle
    _write_csv(outdir / "report.csv", "node,value",
               [(float(x[k]), float(mu.values[k])) for k in range(0, points, max(1, points // 256))])
    if plots:
        _plot_series(outdir / "maximal.png", x, {"Mu": mu.values, "u": u.values},
                     "x", "value")
    return {"passed": ok, "checks": {"plateau_value": ok}, "value_at_2": val}


def run_singint(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    kernel = get_kernel(params.get("kernel", "hilbert"))
    rep = validate_kernel(kernel, int(params.get("cloud", 500)))
    grid = Grid(1, 0, (np.pi,), (int(params.get("points", 1024)),))
    s = sample(np.sin, grid)
    hs = apply(kernel, s)
    spectral_err = float(np.max(np.abs(hs.values + np.cos(grid.axis_coords(0)))))
    cz = measure_cz_bounds(kernel, [fixtures.interval_indicator(1024)])
    checks = {"kernel_valid": rep.valid,
              "spectral_identity": spectral_err < 1e-10,
              "cz_finite": cz.finite}
    _write_csv(outdir / "report.csv", "quantity,value",
               [("c0_measured", rep.c0_measured), ("c1_measured", rep.c1_measured),
                ("a1_measured", rep.a1_measured), ("spectral_error", spectral_err),
                ("weak11_constant", cz.weak_1_constant)])
    return {"passed": all(checks.values()), "checks": checks}


def run_diffquot(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    from .flow import sincos_scalar
    grid = fixtures.split_grid(int(params.get("points", 128)))
    f, ds = sincos_scalar(grid)
    A = AnisotropyMatrix(float(params.get("delta1", 1.0)),
                         float(params.get("delta2", 1.0)), 1, 1)
    U = big_u(ds, A, int(params.get("direction_samples", 64)), seed=seed)
    rep = verify_difference_quotient(f, U, int(params.get("pairs", 10000)), seed=seed)
    _write_csv(outdir / "report.csv", "quantity,value",
               [("pass_rate", rep.pass_rate), ("worst_ratio", rep.worst_ratio),
                ("pairs", rep.pair_count)])
    ok = rep.pass_rate >= 0.99
    return {"passed": ok, "checks": {"pass_rate": ok}, "pass_rate": rep.pass_rate}


def run_flow(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    manifest = params.get("field", {"kind": "rotation", "n1": 1, "n2": 1,
                                    "points": 64, "half_widths": 2.0})
    fld = field_from_manifest(manifest)
    T = float(params.get("T", 1.0))
    dt = float(params.get("dt", 1e-2))
    density = int(params.get("seed_density", 48))
    radius = float(params.get("seed_radius", 1.0))
    fm = integrate_flow(fld, ball(radius), density, 0.0, T, dt)
    fm.save_csv(outdir / "trajectories.csv")
    L = compressibility(fm)
    lams = np.asarray(params.get("lambda_ladder", np.linspace(radius, 3 * radius, 9)),
                      dtype=float)
    curve = decay_curve_from_flow(fm, radius, lams)
    _write_csv(outdir / "decay.csv", "lambda,superlevel_measure",
               list(zip(curve.lambdas, curve.measures)))
    checks = {"decay_monotone": curve.monotone}
    if manifest.get("kind") in ("rotation", "zero", "shear"):
        checks["compressibility_unit"] = bool(0.95 <= L <= 1.05)
    if plots:
        _plot_series(outdir / "decay.png", curve.lambdas,
                     {"superlevel measure": curve.measures}, "lambda", "measure")
    return {"passed": all(checks.values()), "checks": checks, "compressibility": L}


def _vlasov_suite(params: dict, seed: int):
    points = int(params.get("x_points", 128))
    rho = fixtures.three_atom_charge(points)
    coupling = float(params.get("coupling", 1.0))
    etas = list(params.get("etas", (0.2, 0.1, 0.05)))
    T = float(params.get("T", 0.4))
    dt = float(params.get("dt", 5e-3))
    density = int(params.get("seed_density", 18))
    fields = {eta: vlasov_field(rho, coupling, eta, 2.0, int(params.get("v_points", 8)))
              for eta in etas}
    region = Region("box", extents=(1.25,) * 4)
    record = np.linspace(0.0, T, int(params.get("records", 17)))
    flows = {eta: integrate_flow(f, region, density, 0.0, T, dt, record)
             for eta, f in fields.items()}
    return rho, coupling, etas, T, fields, flows


def run_certificate(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    rho, coupling, etas, T, fields, flows = _vlasov_suite(params, seed)
    r = float(params.get("r", 1.2))
    lams = np.linspace(2.0, 5.0, 13)
    curves = [decay_curve_from_flow(flows[e], r, lams) for e in (etas[0], etas[-1])]

    xgc = Grid(2, 0, (3.0, 3.0), (24, 24))
    vgc = Grid(2, 0, (2.0, 2.0), (8, 8))
    dsc = vlasov_structure(measure_from_atoms(xgc, rho.atom_locations, rho.atom_weights),
                           coupling, vgc, product_grid(xgc, vgc))
    C_lam = measure_prefactor(dsc, product_ball(1.5), direction_samples=16, seed=seed)
    m_norm = measure_block_norm(dsc, T)
    cert = select_parameters(eta=float(params.get("eta", 2.0)),
                             gamma=float(params.get("gamma", 0.3)),
                             r=r, m_norm=m_norm, equi_data=equi_curve(dsc, T),
                             decay_curves=curves, C_lambda_model=C_lam)
    (outdir / "certificate.txt").write_text(cert.to_text())

    rows, holds_all, ident_all = [], True, True
    max_sl = []
    pairs = [(etas[i], etas[j]) for i in range(len(etas)) for j in range(i + 1, len(etas))]
    for ea, eb in pairs:
        rep = stability_report_from_flows(flows[ea], flows[eb], fields[ea], fields[eb],
                                          cert, 0.0, T)
        rep.save_csv(outdir / f"experiment_{ea:g}_{eb:g}.csv")
        holds_all &= rep.holds
        ident_all &= rep.identity_ok
        max_sl.append(float(rep.superlevel_measured.max()))
        rows.append((ea, eb, rep.holds, rep.identity_ok, max_sl[-1], rep.rhs))
        if plots:
            _plot_series(outdir / f"phi_{ea:g}_{eb:g}.png", rep.times,
                         {"phi": rep.phi.values,
                          "superlevel": rep.superlevel_measured},
                         "time", "value")
    _write_csv(outdir / "pairs.csv",
               "eta,eta_bar,holds,identity,max_superlevel,rhs", rows)
    budget_ok = cert.budget_total <= cert.params.eta * (1.0 + 1e-6)
    checks = {"budget": bool(budget_ok), "holds": bool(holds_all),
              "identity": bool(ident_all)}
    return {"passed": all(checks.values()), "checks": checks,
            "C": cert.C_gamma_r_eta, "max_superlevels": max_sl}


def run_stability(params: dict, outdir: Path, seed: int, plots: bool) -> dict:
    return run_certificate(params, outdir, seed, plots)


PIPELINES = {
    "norms": run_norms,
    "maximal": run_maximal,
    "singint": run_singint,
    "diffquot": run_diffquot,
    "flow": run_flow,
    "stability": run_stability,
    "certificate": run_certificate,
}


def run(config: ExperimentConfig) -> int:
    """Execute an experiment config (all sweep points); return the exit status."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    points = config.sweeps or [{}]
    workers = int(os.environ.get("ANISOFLOW_WORKERS", "2"))

    def one(idx_override):
        idx, override = idx_override
        outdir = (config.output_dir / f"sweep_{idx:03d}" if config.sweeps
                  else config.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        params = {**config.params, **override}
        summary = PIPELINES[config.kind](params, outdir, config.seed, config.plots)
        summary["params"] = params
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True, default=str)
        return summary

    if len(points) == 1:
        summaries = [one((0, points[0]))]
    else:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            summaries = list(pool.map(one, enumerate(points)))

    passed = all(s["passed"] for s in summaries)
    aggregate = ({**summaries[0], "passed": passed} if len(summaries) == 1
                 else {"passed": passed, "points": len(summaries)})
    with open(config.output_dir / "summary.json", "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True, default=str)
    if not passed:
        failing = [name for s in summaries
                   for name, ok in s.get("checks", {}).items() if not ok]
        print(f"FAIL: {', '.join(sorted(set(failing)))}", file=sys.stderr)
        return 1
    print("PASS")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="anisoflow",
                                     description="anisotropic flow stability laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--outdir", default=None)
    p_run.add_argument("--no-plots", action="store_true")
    p_val = sub.add_parser("validate", help="schema-check a config without running")
    p_val.add_argument("config")
    sub.add_parser("list-fixtures", help="print the builtin fixture catalog")

    args = parser.parse_args(argv)
    if args.command == "list-fixtures":
        for group, names in sorted(fixtures.catalog().items()):
            print(f"{group}: {' '.join(names)}")
        return 0
    try:
        config = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print("OK")
        return 0
    if args.outdir:
        config.output_dir = Path(args.outdir)
    if args.no_plots:
        config.plots = False
    try:
        return run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
