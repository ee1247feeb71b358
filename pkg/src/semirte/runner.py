"""Experiment runners used by the CLI: build objects from a resolved spec, solve, write artifacts."""
from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
import time

import numpy as np

from .diffusion import DiffusionProblem, diffusion_data, solve_semilinear_diffusion
from .experiments import (DIFFUSION_COLUMNS, LP_COLUMNS, STABILITY_COLUMNS,
                          diffusion_limit_scan, diffusion_stability_scan, refinement_spread,
                          stability_scan)
from .forward import FixedPointConfig, MPAModel, fixed_point_solve, internal_data
from .geometry import (AngularField, BoundarySource, Discretization, Domain, ScalarField,
                       ScatteringModel)
from .inversion import InversionConfig, recover_absorption_single, recover_mpa_coefficients
from .peierls import SCAN_COLUMNS, epsilon_scan
from .transport import TransportConfig

_FMT = "%.17g"
INTERIOR = 0.1


class Recorder:
    """Owns one run directory: stage timings, output digests and result values."""

    def __init__(self, run_dir, cfg, base_dir="."):
        self.run_dir = run_dir
        self.cfg = cfg
        self.base_dir = base_dir
        self.stage = "setup"
        self.timings = {}
        self.outputs = {}
        self.results = {}
        self.discretization = None

    @contextlib.contextmanager
    def step(self, name):
        self.stage = name
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def _path(self, name):
        return os.path.join(self.run_dir, name)

    def _register(self, name):
        with open(self._path(name), "rb") as fh:
            self.outputs[name] = hashlib.sha256(fh.read()).hexdigest()

    def field(self, name, grid, values):
        ScalarField(grid, values).to_csv(self._path(name))
        self._register(name)

    def angular(self, name, grid, quad, values):
        AngularField(grid, quad, values).to_csv(self._path(name))
        self._register(name)

    def table(self, name, columns, rows):
        with open(self._path(name), "w", newline="") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_cell(row[c]) for c in columns) + "\n")
        self._register(name)

    def text(self, name, body):
        with open(self._path(name), "w") as fh:
            fh.write(body)
        self._register(name)

    def json(self, name, obj):
        with open(self._path(name), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._register(name)

    def register(self, names):
        for name in names:
            self._register(name)

    def manifest_part(self):
        return {"timings": {k: round(v, 6) for k, v in self.timings.items()},
                "outputs": dict(sorted(self.outputs.items())),
                "results": _jsonable(self.results),
                "discretization": self.discretization}


def _cell(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return _FMT % float(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# builders -----------------------------------------------------------------

def build_domain(cfg):
    d = cfg["domain"]
    if d["shape"] == "rectangle":
        return Domain.rectangle(d["width"], d["height"])
    return Domain.unit_disk()


def build_discretization(cfg):
    return Discretization(build_domain(cfg), cfg["grid"]["h"], cfg["quadrature"]["nv"])


def coefficient_field(entry, grid, base_dir):
    if isinstance(entry, dict):
        return ScalarField.from_csv(os.path.join(base_dir, entry["csv"]), grid).values
    return grid.constant(float(entry))


def build_model(cfg, grid, base_dir):
    c = cfg["coefficients"]
    return MPAModel([coefficient_field(e, grid, base_dir) for e in c["sigma_a"]], q=c["q"])


def build_scattering(cfg, quad):
    s = cfg["coefficients"]["scattering"]
    if s["kind"] == "henyey-greenstein":
        return ScatteringModel.henyey_greenstein(quad, s["g"])
    return ScatteringModel.isotropic(quad)


def build_sources(cfg):
    src = cfg["source"]
    return [BoundarySource.constant(v) for v in (src if isinstance(src, list) else [src])]


def transport_config(cfg):
    t = cfg["tolerances"]
    return TransportConfig(tol_si=t["tol_si"], method=t["method"])


def fixed_point_config(cfg):
    t = cfg["tolerances"]
    return FixedPointConfig(tol_fp=t["tol_fp"], max_iter=t["max_iter"], theta=t["theta"],
                            inner_eta=t["inner_eta"])


def inversion_config(cfg):
    t, inv = cfg["tolerances"], cfg["inversion"]
    return InversionConfig(tol_inv=t["tol_inv"], max_iter=t["max_iter"],
                           delta_floor=inv.get("delta_floor"), q=cfg["coefficients"]["q"],
                           inner_eta=t["inner_eta"], noise=inv["noise"], seed=inv["seed"],
                           anderson=inv["anderson"])


# runners ------------------------------------------------------------------

def _setup(rec):
    with rec.step("setup"):
        disc = build_discretization(rec.cfg)
        rec.discretization = disc.describe()
        model = build_model(rec.cfg, disc.grid, rec.base_dir)
        sigma_s = coefficient_field(rec.cfg["coefficients"]["sigma_s"], disc.grid, rec.base_dir)
        scattering = build_scattering(rec.cfg, disc.quad)
    return disc, model, sigma_s, scattering


def run_forward(rec):
    disc, model, sigma_s, scattering = _setup(rec)
    grid = disc.grid
    source = build_sources(rec.cfg)[0]
    with rec.step("forward"):
        sol = fixed_point_solve(disc, model, sigma_s, scattering, source,
                                fixed_point_config(rec.cfg), transport_config(rec.cfg))
    with rec.step("write"):
        rec.angular("u.csv", grid, disc.quad, sol.u)
        rec.field("mean.csv", grid, sol.m)
        rec.field("sigma_a.csv", grid, sol.sigma_a)
        rec.field("H.csv", grid, internal_data(model, sol))
        rec.table("residuals.csv", ("iteration", "sup", "l2", "theta"),
                  [{"iteration": i, "sup": r, "l2": l, "theta": t} for i, (r, l, t)
                   in enumerate(zip(sol.residuals, sol.l2_residuals, sol.theta_history))])
    rec.results.update({"iterations": sol.iterations, "residual": sol.residual,
                        "u_min": float(sol.u.min()), "u_max": float(sol.u.max()),
                        "a_priori_lower": sol.a_priori_lower, "f_upper": sol.f_upper,
                        "satisfies_a_priori_bound": sol.satisfies_a_priori_bound})


def run_diffusion(rec):
    cfg = rec.cfg
    with rec.step("setup"):
        disc = build_discretization(cfg)
        grid = disc.grid
        rec.discretization = disc.describe()
        model = build_model(cfg, grid, rec.base_dir)
        c = cfg["coefficients"]
        D = coefficient_field(c["D"], grid, rec.base_dir) if "D" in c else None
        sigma_s = coefficient_field(c["sigma_s"], grid, rec.base_dir)
        problem = DiffusionProblem(grid, model, f0=build_sources(cfg)[0].f_upper, D=D,
                                   sigma_s=sigma_s)
    with rec.step("diffusion"):
        sol = solve_semilinear_diffusion(problem, tol=cfg["tolerances"]["tol_diffusion"])
    with rec.step("write"):
        rec.field("U.csv", grid, sol.U)
        rec.field("H.csv", grid, diffusion_data(sol.U, model))
        rec.field("lower.csv", grid, sol.lower)
    rec.results.update({"method": sol.method, "iterations": len(sol.residuals) - 1,
                        "residual": sol.residual, "U_min": float(sol.U.min()),
                        "U_max": float(sol.U.max())})


def run_invert(rec):
    cfg = rec.cfg
    disc, model, sigma_s, scattering = _setup(rec)
    grid = disc.grid
    sources = build_sources(cfg)
    transport = transport_config(cfg)
    data_files = cfg["inversion"].get("data")
    truth = None
    with rec.step("data"):
        if data_files:
            H_list = [ScalarField.from_csv(os.path.join(rec.base_dir, p), grid).values
                      for p in data_files]
        else:
            # synthetic data from the experiment's own model
            truth = model
            H_list = []
            for src in sources:
                sol = fixed_point_solve(disc, model, sigma_s, scattering, src,
                                        fixed_point_config(cfg), transport)
                H_list.append(internal_data(model, sol))
    with rec.step("inversion"):
        icfg = inversion_config(cfg)
        if len(sources) == 1:
            res = recover_absorption_single(disc, H_list[0], sigma_s, scattering, sources[0],
                                            icfg, transport)
        else:
            res = recover_mpa_coefficients(disc, H_list, sources, sigma_s, scattering, icfg,
                                           transport)
    with rec.step("write"):
        for k, H in enumerate(H_list):
            rec.field(f"H_{k}.csv", grid, H)
        rec.register(res.write(rec.run_dir, grid))
    rec.results.update(res.summary())
    if truth is not None:
        mask = grid.boundary_distance > INTERIOR
        if res.coefficients is not None:
            errs = []
            for c, t in zip(res.coefficients, truth.coefficients):
                ok = mask & np.isfinite(c)
                errs.append(float(np.abs(c - t)[ok].sum() / np.abs(t)[ok].sum())
                            if t[ok].any() else float("nan"))
            rec.results["coefficient_interior_l1_error"] = errs


def run_spectral_scan(rec):
    cfg = rec.cfg
    disc, model, sigma_s, _ = _setup(rec)
    sp = cfg["spectral"]
    with rec.step("scan"):
        out = epsilon_scan(model.coefficients[0], sigma_s, cfg["epsilons"], disc,
                           beta=sp["beta"], seed=sp["seed"], near_cells=sp["near_cells"],
                           diagnostics=sp["diagnostics"])
    with rec.step("write"):
        rec.table("scan.csv", SCAN_COLUMNS, out["rows"])
        if out["diagnostics"]:
            cols = tuple(out["diagnostics"][0])
            rec.table("diagnostics.csv", cols, out["diagnostics"])
        rec.text("scan.gp", _gnuplot_loglog(
            "scan.csv", "1 - rho(P_eps)", 2, out["rows"][0]["epsilon"],
            out["rows"][0]["one_minus_rho"], 2.0, "spectral_gap.png"))
    rec.results.update({"slope": out["slope"], "rows": out["rows"]})


def _boundary_perturbation(cfg, grid):
    st = cfg["stability"]
    return np.where(grid.boundary_distance < st["width"], st["amplitude"], 0.0)


def run_stability_scan(rec):
    cfg = rec.cfg
    st = cfg["stability"]
    if st["regime"] == "diffusion":
        return _run_lp_stability(rec)
    disc, model, sigma_s, scattering = _setup(rec)
    source = build_sources(cfg)[0]
    with rec.step("scan"):
        out = stability_scan(disc, model, _boundary_perturbation(cfg, disc.grid), sigma_s,
                             scattering, source, cfg["epsilons"],
                             fixed_point_config(cfg), cfg["tolerances"]["method"])
    rows = out["rows"]
    with rec.step("write"):
        rec.table("stability.csv", STABILITY_COLUMNS, rows)
        rec.text("stability.gp", _gnuplot_two(
            "stability.csv", "L1 stability ratio", (2, "weighted"), (3, "unweighted"),
            "stability.png"))
    w = [r["weighted_ratio"] for r in rows]
    rec.results.update({"rows": rows, "weighted_spread": max(w) / min(w),
                        "unweighted_growth": rows[-1]["unweighted_ratio"]
                        / rows[0]["unweighted_ratio"]})


def _run_lp_stability(rec):
    cfg = rec.cfg
    st = cfg["stability"]
    with rec.step("setup"):
        domain = build_domain(cfg)
        c = cfg["coefficients"]
        fns = [_const_fn(v) for v in c["sigma_a"]]
        h = cfg["grid"]["h"]
        rec.discretization = {"h_list": [h, h / 2]}
    with rec.step("scan"):
        out = diffusion_stability_scan(domain, [h, h / 2], fns, _const_fn(c["sigma_s"]),
                                       f0=build_sources(cfg)[0].f_upper, pairs=st["pairs"],
                                       seed=st["seed"], p_list=st["p"])
    with rec.step("write"):
        rec.table("lp_stability.csv", LP_COLUMNS, out["rows"])
    rec.results.update({"rows": out["rows"], "bumps": out["bumps"],
                        "refinement_spread": refinement_spread(out["rows"])})


def _const_fn(v):
    v = float(v)
    return lambda x, y: np.full(np.shape(x), v)


def run_diffusion_limit_scan(rec):
    cfg = rec.cfg
    disc, model, sigma_s, scattering = _setup(rec)
    source = build_sources(cfg)[0]
    with rec.step("scan"):
        out = diffusion_limit_scan(disc, model, sigma_s, scattering, source, cfg["epsilons"],
                                   interior=cfg["diffusion_limit"]["interior"],
                                   fp=fixed_point_config(cfg),
                                   method=cfg["tolerances"]["method"])
    rows = out["rows"]
    with rec.step("write"):
        rec.table("diffusion_limit.csv", DIFFUSION_COLUMNS, rows)
        rec.field("U.csv", disc.grid, out["diffusion"].U)
        rec.text("diffusion_limit.gp", _gnuplot_loglog(
            "diffusion_limit.csv", "interior sup |<u_eps> - U|", 2, rows[0]["epsilon"],
            rows[0]["interior_error"], 1.0, "diffusion_limit.png"))
    rec.results.update({"rows": rows})


def _gnuplot_loglog(csv_name, ylabel, col, x0, y0, order, png):
    return (f'set datafile separator ","\n'
            f'set terminal pngcairo size 800,600\n'
            f'set output "{png}"\n'
            f'set logscale xy\n'
            f'set key top left\n'
            f'set xlabel "epsilon"\n'
            f'set ylabel "{ylabel}"\n'
            f'ref(x) = {_FMT % y0} * (x / {_FMT % x0})**{order:g}\n'
            f'plot "{csv_name}" skip 1 using 1:{col} with linespoints pt 7 title "{ylabel}", '
            f'ref(x) with lines dt 2 title "slope {order:g}"\n')


def _gnuplot_two(csv_name, ylabel, first, second, png):
    return (f'set datafile separator ","\n'
            f'set terminal pngcairo size 800,600\n'
            f'set output "{png}"\n'
            f'set logscale x\n'
            f'set xlabel "epsilon"\n'
            f'set ylabel "{ylabel}"\n'
            f'plot "{csv_name}" skip 1 using 1:{first[0]} with linespoints pt 7 '
            f'title "{first[1]}", "" skip 1 using 1:{second[0]} with linespoints pt 5 '
            f'title "{second[1]}"\n')


RUNNERS = {
    "forward": run_forward,
    "diffusion": run_diffusion,
    "invert": run_invert,
    "spectral-scan": run_spectral_scan,
    "stability-scan": run_stability_scan,
    "diffusion-limit-scan": run_diffusion_limit_scan,
}
