"""Command-line driver.

Every command prints one JSON line ``{"command", "status", "metric", "outputs"}``
and exits with 0 on success, 1 on validation failure and 2 on numerical
failure (stagnation, Bolker failure, sinogram leakage).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .geometry import BeylkinClassError, check_bolker, check_defining, sample_directions, validate_weight
from .microlocal import conormal_probe, decay_scan
from .normal import PrincipalSymbol, SymbolError, probe_symbol
from .phantoms import make_phantom
from .recon import StagnationError, SymbolPreconditioner, cg_normal_solve, perturbation_sweep
from .transform import Projector, TransformError, make_layout

__all__ = ["main", "build_parser", "NumericalFailure"]


class NumericalFailure(RuntimeError):
    """Raised by a command whose pipeline ran but failed a numerical invariant."""

    def __init__(self, invariant: str, metric=None, outputs=None):
        super().__init__(invariant)
        self.invariant = invariant
        self.metric = metric or {}
        self.outputs = outputs or []


def _phantom(cfg: RunConfig, grid):
    kw = {}
    if cfg.phantom in ("disk", "ball"):
        kw = {"radius": cfg.phantom_radius, "supersample": cfg.supersample}
    elif cfg.phantom == "gaussian":
        kw = {"sigma": cfg.phantom_sigma}
    elif cfg.phantom == "shepp-logan":
        kw = {"supersample": cfg.supersample}
    return make_phantom(cfg.phantom, grid, **kw)


def _projector(cfg: RunConfig, grid, layout=None):
    df = cfg.defining_function()
    w = cfg.weight_function()
    validate_weight(w, cfg.domain)
    if layout is None:
        layout = make_layout(df, grid, cfg.n_theta, cfg.delta_factor,
                             n_s=cfg.n_s or None)
    return Projector(df, w, grid, layout, cfg.delta_factor, threads=cfg.threads)


def _read_field(cfg: RunConfig, path):
    f = io.read_field(path, pad=cfg.pad, inner=cfg.inner)
    if f.grid.domain != cfg.domain:
        raise ConfigError(f"{path}: field domain {f.grid.domain} does not match the config")
    return f


# -- commands ---------------------------------------------------------------

def cmd_phantom(cfg: RunConfig, out: Path, args):
    if args.name:
        cfg = cfg.replace(phantom=args.name)
    f = _phantom(cfg, cfg.make_grid())
    path = io.write_field(out / f"{cfg.phantom}.grtf", f)
    vals = f.values
    mass = float(np.sum(vals) * f.grid.cell_volume)
    summary = io.write_csv(out / f"{cfg.phantom}_summary.csv", ["name", "grid", "mass", "min", "max"],
                           [(cfg.phantom, cfg.grid, mass, float(vals.min()), float(vals.max()))])
    return {"mass": mass, "min": float(vals.min()), "max": float(vals.max())}, [path, summary]


def cmd_forward(cfg: RunConfig, out: Path, args):
    if args.input:
        f = _read_field(cfg, args.input)
    else:
        f = _phantom(cfg, cfg.make_grid())
    P = _projector(cfg, f.grid)
    g = P.forward(f)
    lay = g.layout
    j0 = int(np.argmin(np.abs(lay.s_axis())))
    path = io.write_sinogram(out / "sinogram.grts", g)
    csv = io.sinogram_to_csv(out / "sinogram.csv", g)
    return {"s0_row_max": float(np.max(g.values[j0].real)), "n_s": lay.n_s, "n_theta": lay.n_theta}, [path, csv]


def cmd_adjoint(cfg: RunConfig, out: Path, args):
    if not args.input:
        raise ConfigError("adjoint needs --input <sinogram.grts>")
    g = io.read_sinogram(args.input)
    grid = cfg.make_grid()
    P = _projector(cfg, grid, layout=g.layout)
    f = P.transpose(g) if cfg.adjoint_mode == "transpose" else P.backproject(g)
    path = io.write_field(out / "adjoint.grtf", f)
    csv = io.field_to_csv(out / "adjoint.csv", f)
    return {"mode": cfg.adjoint_mode, "max": float(np.max(f.values.real)), "norm": f.norm()}, [path, csv]


def cmd_recon(cfg: RunConfig, out: Path, args):
    grid = cfg.make_grid()
    truth = None
    if args.input:
        g = io.read_sinogram(args.input)
        P = _projector(cfg, grid, layout=g.layout)
    else:
        truth = _phantom(cfg, grid)
        P = _projector(cfg, grid)
        g = P.forward(truth)
    pre = SymbolPreconditioner(PrincipalSymbol(P.df, P.weight), grid) if cfg.precondition else None
    res = cg_normal_solve(P, g, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, preconditioner=pre)
    path = io.write_field(out / "recon.grtf", res.field)
    log = res.to_csv(out / "cg_log.csv")
    metric = {"iterations": res.iterations, "relative_residual": res.relative_residual,
              "converged": res.converged}
    if truth is not None:
        metric["relative_error"] = float(np.linalg.norm(res.field.values - truth.values)
                                         / np.linalg.norm(truth.values))
    if res.stagnated:
        raise NumericalFailure("cg stagnation", metric, [path, log])
    return metric, [path, log]


def cmd_bolker(cfg: RunConfig, out: Path, args):
    df = cfg.defining_function()
    rep = check_defining(df, cfg.domain, cfg.bolker_n_x, cfg.bolker_n_theta)
    if rep.defining_ok:
        rep = check_bolker(df, cfg.domain, cfg.bolker_n_x, cfg.bolker_n_theta)
    csv = io.write_csv(out / "bolker.csv", ["condition", "status", "value"], rep.rows())
    metric = {name: status for name, status, _ in rep.rows()}
    if not rep.passed:
        failed = [name for name, status, _ in rep.rows() if status != "PASS"]
        raise NumericalFailure("bolker: " + ",".join(failed), metric, [csv])
    return metric, [csv]


def cmd_symbol(cfg: RunConfig, out: Path, args):
    df = cfg.defining_function()
    w = cfg.weight_function()
    validate_weight(w, cfg.domain)
    res = probe_symbol(df, w, cfg.make_grid(cfg.probe_grid), cfg.probe_x0, cfg.probe_xi, cfg.lambdas,
                       n_theta=cfg.probe_n_theta, delta_factor=cfg.delta_factor)
    csv = res.to_csv(out / "symbol_probe.csv")
    return {"q": res.q, "q_uncorrected": res.q_uncorrected, "ratio_at_lambda_max": float(res.ratio[-1]),
            "ratio_full_at_lambda_max": float(res.ratio_full[-1])}, [csv]


def cmd_sweep(cfg: RunConfig, out: Path, args):
    sw = perturbation_sweep(cfg.bump, cfg.make_grid(cfg.small_grid), cfg.deltas, cfg.weight_function(),
                            couple_weight=cfg.couple_weight, n_theta=cfg.small_n_theta, seed=cfg.seed,
                            delta_factor=cfg.delta_factor)
    csv = sw.to_csv(out / "perturb_sweep.csv")
    return {"slope": sw.slope, "r2": sw.r2, "delta_abs": sw.delta_abs,
            "weyl_ok": bool(np.all(sw.weyl_ok)), "margin_positive": bool(np.all(sw.sigma_min > 0))}, [csv]


def cmd_fbi(cfg: RunConfig, out: Path, args):
    grid = cfg.make_grid()
    f = _read_field(cfg, args.input) if args.input else _phantom(cfg, grid)
    dirs = sample_directions(cfg.dimension, cfg.fbi_directions)
    scan = decay_scan(f, cfg.fbi_x0, dirs, cfg.fbi_lambdas)
    csv = scan.to_csv(out / "fbi_scan.csv")
    metric = {"suspect_directions": int(np.count_nonzero(scan.suspect))}
    outputs = [csv]
    if cfg.dimension == 2:
        P = _projector(cfg, f.grid)
        rep = conormal_probe(P.df, f, cfg.conormal_s0, cfg.conormal_theta, cfg.fbi_lambdas, projector=P)
        outputs.append(rep.to_csv(out / "conormal_probe.csv"))
        metric.update({"conormal_agreement": rep.agreement, "conormal_points": len(rep.points),
                       "sinogram_alpha": rep.alpha, "kinked": rep.kinked})
    return metric, outputs


COMMANDS = {
    "phantom": cmd_phantom,
    "forward": cmd_forward,
    "adjoint": cmd_adjoint,
    "recon": cmd_recon,
    "bolker-check": cmd_bolker,
    "symbol-check": cmd_symbol,
    "perturb-sweep": cmd_sweep,
    "fbi-probe": cmd_fbi,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradon", description="Generalized Radon transform toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("name", nargs="?", help="phantom name (phantom command only)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--input", help="input GRTF/GRTS file")
    return p


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, Path):
        return str(v)
    return v


def _emit(command, status, metric, outputs, error=None):
    rec = {"command": command, "status": status, "metric": metric, "outputs": outputs}
    if error:
        rec["error"] = error
    print(json.dumps(_jsonable(rec), sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.name and cmd != "phantom":
            raise ConfigError("a positional name is only accepted by the phantom command")
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        metric, outputs = COMMANDS[cmd](cfg, out, args)
    except NumericalFailure as exc:
        _emit(cmd, "FAIL", exc.metric, exc.outputs, exc.invariant)
        return 2
    except (TransformError, StagnationError, SymbolError, BeylkinClassError) as exc:
        _emit(cmd, "FAIL", {}, [], f"{type(exc).__name__}: {exc}")
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        _emit(cmd, "INVALID", {}, [], f"{type(exc).__name__}: {exc}")
        return 1
    _emit(cmd, "PASS", metric, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
