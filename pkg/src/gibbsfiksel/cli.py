"""Command-line pipeline: windows, summaries, profiling, fitting, residuals, simulation.

Every command reads a cohort manifest and writes CSV/JSON files into an
output directory.  Settings come from an optional JSON config file; command
line flags override it.  Each output starts with a provenance line holding
the package version and a hash of the effective settings.  Failures print a
JSON error object on stderr and exit with a nonzero code.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    KINDS,
    comparison_table,
    model_menu,
    residual_field,
    residual_totals,
    write_comparison_csv,
    write_totals_csv,
)
from .fitting import FitConfig, FitError, FittedModel, fit_cohort, profile_pl
from .geometry import GeometryError, tile_grid
from .interactions import InteractionKind, InteractionSpec, estimate_hardcore
from .intensity import mark_intensities
from .patterns import SchemaError, load_manifest, save_pattern
from .simulation import MetropolisHastingsChain, SimulationConfig, model_from_fit, spawn_seeds
from .summaries import (
    choose_max_range,
    default_rgrid,
    k_inhom_cross,
    l_from_k,
    pool_functions,
    write_summaries_csv,
)

log = logging.getLogger("gibbsfiksel")

DEFAULTS = {
    "manifest": None,
    "out": "out",
    "grid": 128,
    "dummy": None,
    "border": None,
    "models": "Fiksel 1",
    "max_range": None,
    "seed": 0,
    "threads": 1,
    "r_steps": 512,
    "profile_r_grid": None,
    "profile_gamma_grid": [-0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2],
    "profile_points": 8,
    "interaction": "fiksel",
    "irregular": None,
    "covariates": "all",
    "model_files": None,
    "fields": False,
    "steps": 200_000,
    "burn_in": 100_000,
    "trace_every": 1000,
}

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_FIT = 4


class RunConfig(dict):
    """Effective settings of one command (defaults, then config file, then flags)."""

    def digest(self):
        # where the files go does not change what is in them
        text = json.dumps({k: v for k, v in self.items() if k != "out"}, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def header(self, command):
        return f"gibbsfiksel {__version__} {command} config-sha256={self.digest()}"


def _slug(label):
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def _out(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cohort(cfg):
    if not cfg.get("manifest"):
        raise SchemaError("a cohort manifest is required (--manifest)")
    return load_manifest(cfg["manifest"])


def _common(cohort):
    return cohort.restricted()


def _fit_config(cfg, **override):
    base = {
        "dummy": cfg["dummy"],
        "border": cfg["border"],
        "offset_grid": cfg["grid"],
        "threads": cfg["threads"],
        "covariates": cfg["covariates"],
    }
    base.update(override)
    return FitConfig(**base)


def _write_json(path, obj, header):
    obj = {"provenance": header, **obj}
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _matrix_dict(mat, labels):
    if mat is None:
        return None
    return {"marks": list(labels), "values": np.asarray(mat, dtype=float).tolist()}


def _matrix(d):
    return None if d is None else np.asarray(d["values"], dtype=float)


def cmd_window(cfg):
    cohort = _cohort(cfg)
    out = _out(cfg)
    header = cfg.header("window")
    common = cohort.common_window()
    per = {}
    for p in cohort.patterns:
        area = p.window.area
        per[p.id] = area
        print(f"{p.id}\t{area:.6g}")
    print(f"common\t{common.area:.6g}")
    _write_json(out / "window.json", {"window": common.to_dict(), "patient_areas": per}, header)
    return 0


def _summaries(cohort, cfg):
    labels = cohort.mark_set.labels
    window = cohort.window
    grid = tile_grid(window, cfg["grid"])
    rgrid = default_rgrid(window, cfg["r_steps"])
    per_pair = {}
    for p in cohort.patterns:
        surfaces = mark_intensities(p, grid)
        m = len(labels)
        for i in range(m):
            for j in range(m):
                per_pair.setdefault((i, j), []).append(k_inhom_cross(p, i, j, surfaces[i], surfaces[j], rgrid, window))
    return rgrid, per_pair


def cmd_summaries(cfg):
    cohort = _common(_cohort(cfg))
    out = _out(cfg)
    header = cfg.header("summaries")
    labels = cohort.mark_set.labels
    _, per_pair = _summaries(cohort, cfg)
    write_summaries_csv(out / "summaries_patients.csv", [k for ks in per_pair.values() for k in ks], labels, header)
    pooled_l = {}
    with open(out / "summaries_pooled.csv", "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["pair", "r", "K", "L"])
        for (i, j), ks in per_pair.items():
            try:
                k = pool_functions(ks)
            except ValueError as exc:
                log.warning("%s", exc)
                continue
            lf = l_from_k(k)
            pooled_l[(i, j)] = lf
            for r, kv, lv in zip(k.r, k.values, lf.values):
                w.writerow([f"{labels[i]}:{labels[j]}", repr(float(r)), repr(float(kv)), repr(float(lv))])
    suggested = {f"{labels[i]}:{labels[j]}": choose_max_range(lf) for (i, j), lf in pooled_l.items()}
    chosen = cfg["max_range"] if cfg["max_range"] is not None else max(suggested.values())
    print("pair\tr\tpooled L(r)")
    for (i, j), lf in pooled_l.items():
        idx = np.linspace(0, len(lf.r) - 1, 9).astype(int)
        for t in idx:
            print(f"{labels[i]}:{labels[j]}\t{lf.r[t]:.4g}\t{lf.values[t]:.4g}")
    print(f"max range: {chosen:.6g}")
    _write_json(out / "max_range.json", {"max_range": chosen, "suggested": suggested,
                                         "user_supplied": cfg["max_range"] is not None}, header)
    return 0


def _spec_template(kind, hardcore, m):
    kind = InteractionKind(kind)
    if kind in (InteractionKind.FIKSEL, InteractionKind.FIKSEL_WITHIN):
        return InteractionSpec(kind, m, hardcore, hardcore + 1.0, np.full((m, m), 0.1))
    if kind == InteractionKind.STRAUSS:
        return InteractionSpec(kind, m, interaction_range=hardcore + 1.0)
    if kind == InteractionKind.STRAUSS_HARDCORE:
        return InteractionSpec(kind, m, hardcore, hardcore + 1.0)
    raise ValueError(f"interaction {kind.value!r} has no range to profile")


def _hardcore(cohort):
    h = estimate_hardcore(cohort)
    if np.any(np.isnan(h)):
        log.warning("pairs without cross distances get hardcore 0")
        h = np.nan_to_num(h, nan=0.0)
    return h


def cmd_profile(cfg):
    cohort = _common(_cohort(cfg))
    out = _out(cfg)
    header = cfg.header("profile")
    labels = cohort.mark_set.labels
    max_range = cfg["max_range"]
    if max_range is None:
        mr = out / "max_range.json"
        if not mr.exists():
            raise SchemaError("no --max-range given and no max_range.json from the summaries command")
        max_range = json.loads(mr.read_text())["max_range"]
    print(f"max range: {max_range:.6g}")
    h = _hardcore(cohort)
    if cfg["profile_r_grid"] is not None:
        r_grid = [float(r) for r in cfg["profile_r_grid"]]
    else:
        lo = float(h.max())
        r_grid = list(np.linspace(lo + (max_range - lo) / cfg["profile_points"], max_range, cfg["profile_points"]))
    if min(r_grid) <= h.max():
        raise ValueError("every profiled range must exceed the largest hardcore distance")
    template = _spec_template(cfg["interaction"], h, len(labels))
    res = profile_pl(cohort, template, r_grid, cfg["profile_gamma_grid"], _fit_config(cfg))
    spec = res.spec
    _write_json(out / "irregular.json", {
        "interaction": spec.kind.value,
        "hardcore": _matrix_dict(spec.hardcore if spec.hardcore is not None else h, labels),
        "interaction_range": _matrix_dict(spec.interaction_range, labels),
        "rate": _matrix_dict(spec.rate, labels),
        "max_range": max_range,
        "profile_pl": res.ppl,
        "sweeps": res.sweeps,
    }, header)
    with open(out / "profile_trace.csv", "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["pair", "R", "gamma", "ppl"])
        for (i, j), r, g, v in res.trace:
            w.writerow([f"{labels[i]}:{labels[j]}", repr(r), "" if g is None else repr(g), repr(v)])
    print(f"profile pseudolikelihood {res.ppl:.6f} after {res.sweeps} sweep(s)")
    return 0


def _irregular(cfg, cohort):
    path = cfg["irregular"] or Path(cfg["out"]) / "irregular.json"
    path = Path(path)
    if path.exists():
        d = json.loads(path.read_text())
        return _matrix(d["hardcore"]), _matrix(d["interaction_range"]), _matrix(d["rate"])
    return None


def _selected(menu, models):
    if models == "all":
        return menu
    wanted = [s.strip() for s in (models.split(",") if isinstance(models, str) else models)]
    by = {c.label: c for c in menu} | {_slug(c.label): c for c in menu}
    missing = [w for w in wanted if w not in by]
    if missing:
        raise ValueError(f"unknown models {missing}; choose from {[c.label for c in menu]}")
    return [by[w] for w in wanted]


def cmd_fit(cfg):
    cohort = _common(_cohort(cfg))
    out = _out(cfg)
    header = cfg.header("fit")
    m = len(cohort.mark_set)
    irr = _irregular(cfg, cohort)
    if irr is None:
        if cfg["models"] not in ("Poisson", "poisson"):
            raise SchemaError("interaction models need irregular.json from the profile command (or --config irregular)")
        menu = [c for c in model_menu(0.0, 1.0, 0.1, m) if c.label == "Poisson"]
    else:
        h, r, g = irr
        menu = model_menu(h, r, g if g is not None else np.full((m, m), 0.1), m)
    chosen = _selected(menu, cfg["models"])
    border = cfg["border"] if cfg["border"] is not None else max(c.spec.reach for c in chosen)
    written = []
    for choice in chosen:
        fc = _fit_config(cfg, border=border, use_offset=choice.use_offset,
                         covariates=cfg["covariates"] if choice.use_covariates else None)
        model = fit_cohort(cohort, choice.spec, fc, label=choice.label)
        stem = f"model_{_slug(choice.label)}"
        model.to_json(out / f"{stem}.json", provenance=header, interaction_label=choice.interaction,
                      offset=choice.use_offset, uses_covariates=choice.use_covariates)
        model.write_coefficients_csv(out / f"coefficients_{_slug(choice.label)}.csv", header)
        written.append(f"{stem}.json")
        print(f"{choice.label}: logPL {model.logpl:.6f}")
        for row in model.coefficient_table():
            print(f"  {row['name']:<32} {row['estimate']: .5g}  se {row['std_error']:.3g}  p {row['p_value']:.3g}")
    return 0


def cmd_residuals(cfg):
    cohort = _common(_cohort(cfg))
    out = _out(cfg)
    header = cfg.header("residuals")
    files = cfg["model_files"] or sorted(str(p) for p in out.glob("model_*.json"))
    if not files:
        raise SchemaError("no fitted model files given or found in the output directory")
    fits, all_totals = [], []
    for f in files:
        model = FittedModel.from_json(f)
        meta = json.loads(Path(f).read_text())
        choice = type("Choice", (), {
            "label": model.label or Path(f).stem,
            "interaction": meta.get("interaction_label", model.spec.kind.value),
            "use_offset": meta.get("offset", model.config.use_offset),
            "use_covariates": meta.get("uses_covariates", bool(model.covariate_names)),
        })()
        fits.append((choice, model))
        totals = residual_totals(model, cohort, KINDS)
        all_totals.extend((choice.label, t) for t in totals)
        if cfg["fields"]:
            for p in cohort.patterns:
                for mark in cohort.mark_set:
                    for kind in KINDS:
                        field = residual_field(model, p, mark, kind)
                        grid = model.patient_data(p).quad.grid
                        path = out / f"field_{_slug(choice.label)}_{_slug(p.id)}_{_slug(mark)}_{kind}.csv"
                        _write_field(path, grid, field, header)
    with open(out / "residual_totals.csv", "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["model", "patient", "mark", "kind", "value"])
        for label, t in all_totals:
            w.writerow([label, t.patient, t.mark, t.kind, repr(t.value)])
    rows = comparison_table(fits, cohort)
    write_comparison_csv(out / "comparison.csv", rows, header)
    print("model\traw\tpearson\tinverse")
    for r in rows:
        print(f"{r['model']}\t{r['rmse_raw']:.5g}\t{r['rmse_pearson']:.5g}\t{r['rmse_inverse']:.5g}")
    return 0


def _write_field(path, grid, field, header):
    cx, cy = grid.centers[:, 0], grid.centers[:, 1]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["cell_x", "cell_y", "value"])
        for x, y, v in zip(cx, cy, field.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def cmd_simulate(cfg):
    cohort = _common(_cohort(cfg))
    out = _out(cfg)
    header = cfg.header("simulate")
    files = cfg["model_files"]
    if not files or len(files) != 1:
        raise SchemaError("simulate needs exactly one fitted model file")
    fitted = FittedModel.from_json(files[0])
    seeds = spawn_seeds(cfg["seed"], len(cohort.patterns))
    for p, seed in zip(cohort.patterns, seeds):
        model = model_from_fit(fitted, p, cohort.window)
        sc = SimulationConfig(steps=cfg["steps"], burn_in=cfg["burn_in"], seed=seed, trace_every=cfg["trace_every"])
        chain = MetropolisHastingsChain(model, sc)
        chain.advance(sc.steps)
        sim = chain.pattern(f"sim_{p.id}")
        save_pattern(sim, out / f"sim_{_slug(p.id)}.csv", header=f"{header}\nseed {seed}")
        chain.write_trace(out / f"trace_{_slug(p.id)}.json")
        print(f"{p.id}: {len(sim.coords)} points")
    return 0


COMMANDS = {
    "window": cmd_window,
    "summaries": cmd_summaries,
    "profile": cmd_profile,
    "fit": cmd_fit,
    "residuals": cmd_residuals,
    "simulate": cmd_simulate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gibbsfiksel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON settings file; flags override it")
        p.add_argument("--manifest")
        p.add_argument("--out")
        p.add_argument("--grid", type=int, help="tiles along the longer window side for intensity grids")
        p.add_argument("--dummy", type=int, help="dummy grid tiles along each window side (one dummy per tile and mark)")
        p.add_argument("--border", type=float, help="border erosion margin")
        p.add_argument("--models", help="'all' or comma-separated menu labels")
        p.add_argument("--max-range", dest="max_range", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("model_files", nargs="*", help="fitted model JSON files (residuals, simulate)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args):
    cfg = RunConfig(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise SchemaError(f"unknown config keys {sorted(unknown)}")
        cfg.update(user)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val != []:
            cfg[key] = val
    if cfg["threads"] < 1:
        raise ValueError("--threads must be at least 1")
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (SchemaError, GeometryError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail(args.command, exc, EXIT_INPUT)
    except FitError as exc:
        return _fail(args.command, exc, EXIT_FIT)
    except ValueError as exc:
        return _fail(args.command, exc, EXIT_USAGE)


def _fail(command, exc, code):
    err = {"error": type(exc).__name__, "message": str(exc), "command": command}
    if getattr(exc, "trace", None) is not None:
        err["trace"] = exc.trace
    print(json.dumps(err, default=_jsonable), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
