"""``phaseprice`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .converter import DEFAULT_HORIZON_QUANTILE, FittedModel
from .errors import NumericalError, PhasePriceError, ValidationError
from .estimation import DEFAULT_SHRINKAGE, jitter_los, two_stage_fit
from .gof import (
    BinningSpec,
    chi2_joint,
    grid_csv,
    kde_2d,
    log_charge_marginal_report,
    los_marginal_report,
    model_density_grid,
)
from .numerics import OdeSpec, OptimizerSpec, QuadratureSpec
from .phase_type import cph_quantile
from .pricing import price_csv, price_table
from .simulation import cohort_csv, paths_json, simulate_arrays

log = logging.getLogger("phaseprice")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
MAX_REJECTED_FRACTION = 0.01


# --------------------------------------------------------------------------
# Configuration


def _spec_from(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ValidationError(f"{name}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"{name}: unknown field {unknown[0]!r}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ValidationError(f"{name}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    n: int = 4
    seed: int = 0
    optimizer: OptimizerSpec = field(default_factory=lambda: OptimizerSpec(restarts=4))
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    ode: OdeSpec = field(default_factory=OdeSpec)
    binning: BinningSpec = field(default_factory=BinningSpec)
    joint_bins: int = 5
    tail_quantile: float = DEFAULT_HORIZON_QUANTILE
    horizon: float | None = None
    shrinkage: float = DEFAULT_SHRINKAGE
    jitter: bool = False
    size: int = 5000
    t_grid: tuple[float, ...] = tuple(float(k) for k in range(1, 31))
    grid_size: int = 50
    bandwidths: tuple[float, float] = (0.15, 1.0)
    kde_samples: int = 100_000

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ValidationError("n: must be an integer >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError("seed: must be a non-negative integer")
        if not 0.0 < self.tail_quantile < 1.0:
            raise ValidationError("tail_quantile: must lie in (0, 1)")
        if self.horizon is not None and not self.horizon > 0:
            raise ValidationError("horizon: must be positive")
        if self.joint_bins < 2:
            raise ValidationError("joint_bins: must be >= 2")
        if self.size < 1:
            raise ValidationError("size: must be >= 1")
        if self.grid_size < 2:
            raise ValidationError("grid_size: must be >= 2")
        if self.kde_samples < 1:
            raise ValidationError("kde_samples: must be >= 1")
        if not self.shrinkage >= 0:
            raise ValidationError("shrinkage: must be non-negative")
        if len(self.bandwidths) != 2 or min(self.bandwidths) <= 0:
            raise ValidationError("bandwidths: need two positive values")
        if not self.t_grid or any(not (t >= 0) for t in self.t_grid):
            raise ValidationError("t_grid: need non-negative times")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RunConfig:
        if not isinstance(raw, dict):
            raise ValidationError("config: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(f"config: unknown field {unknown[0]!r}")
        kw = dict(raw)
        for name, spec in (("optimizer", OptimizerSpec), ("quadrature", QuadratureSpec),
                           ("ode", OdeSpec), ("binning", BinningSpec)):
            if name in kw:
                kw[name] = _spec_from(spec, kw[name], name)
        for name in ("t_grid", "bandwidths"):
            if name in kw:
                if not isinstance(kw[name], list):
                    raise ValidationError(f"{name}: expected a list")
                kw[name] = tuple(float(v) for v in kw[name])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["t_grid"] = list(self.t_grid)
        out["bandwidths"] = list(self.bandwidths)
        return out

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def optimizer_spec(self) -> OptimizerSpec:
        return replace(self.optimizer, seed=self.seed)


def load_config(path: str | None, overrides: dict[str, Any]) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ValidationError(f"config {path}: expected a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(raw)


# --------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class Dataset:
    charge: np.ndarray
    los: np.ndarray
    source: str
    rejected: tuple[tuple[int, str], ...] = ()

    @property
    def rows(self) -> int:
        return self.los.size

    def pairs(self) -> np.ndarray:
        return np.column_stack([self.charge, self.los])


def _data_lines(fh):
    for number, line in enumerate(fh, start=1):
        if line.startswith("#") or not line.strip():
            continue
        yield number, line


def ingest(path: str, *, jitter: bool = False, seed: int = 0) -> Dataset:
    """Read a ``charge,los`` CSV. Rows with missing or non-positive values are
    dropped and reported; more than 1% rejected rows is an error."""
    with open(path, encoding="utf-8", newline="") as fh:
        numbered = list(_data_lines(fh))
    if not numbered:
        raise ValidationError(f"{path}: empty file")
    reader = csv.reader([line for _, line in numbered])
    header = [h.strip() for h in next(reader)]
    if "charge" not in header or "los" not in header:
        raise ValidationError(f"{path}: header must contain 'charge' and 'los' columns")
    ic, il = header.index("charge"), header.index("los")
    charge, los, rejected = [], [], []
    for (number, _), row in zip(numbered[1:], reader):
        try:
            y, t = float(row[ic]), float(row[il])
            if not (math.isfinite(y) and math.isfinite(t)):
                raise ValueError("non-finite value")
            if y <= 0 or t <= 0:
                raise ValueError("charge and los must be positive")
        except (ValueError, IndexError) as exc:
            rejected.append((number, str(exc) or "missing field"))
            continue
        charge.append(y)
        los.append(t)
    total = len(charge) + len(rejected)
    if rejected and len(rejected) > MAX_REJECTED_FRACTION * total:
        report = "; ".join(f"line {n}: {why}" for n, why in rejected[:20])
        raise ValidationError(f"{path}: {len(rejected)} of {total} rows rejected ({report})")
    for number, why in rejected:
        log.warning("%s line %d rejected: %s", path, number, why)
    if not charge:
        raise ValidationError(f"{path}: no valid rows")
    los_arr = np.array(los)
    if jitter:
        los_arr = jitter_los(los_arr, np.random.default_rng([seed, 1]))
    return Dataset(np.array(charge), los_arr, str(path), tuple(rejected))


def load_model(path: str) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model {path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"model {path}: expected a JSON object")
    return FittedModel.from_dict(raw.get("model", raw))


# --------------------------------------------------------------------------
# Artifacts


def _meta(config: RunConfig, command: str) -> dict[str, Any]:
    return {"version": __version__, "config_hash": config.digest(), "command": command,
            "config": config.to_dict()}


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _csv_text(config: RunConfig, body: str) -> str:
    return f"# phaseprice {__version__} config {config.digest()}\n" + body


def write_artifacts(out_dir: str, artifacts: dict[str, str]) -> list[Path]:
    """Write every file to a temporary name first, then rename them all."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in artifacts.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)
    return [dest for _, dest in staged]


def _optimize_dict(res) -> dict[str, Any]:
    return {"nfev": res.nfev, "nit": res.nit, "restarts": res.restarts,
            "converged": bool(res.converged), "warning": res.warning}


def _require(value, flag: str):
    if value is None:
        raise ValidationError(f"{flag} is required for this command")
    return value


# --------------------------------------------------------------------------
# Commands


def cmd_fit(config: RunConfig, args) -> dict[str, str]:
    data = ingest(_require(args.data, "--data"), jitter=config.jitter, seed=config.seed)
    s1, s2 = two_stage_fit(data.pairs(), config.n, config.optimizer_spec(),
                           horizon=config.horizon, ode_spec=config.ode,
                           quad_spec=config.quadrature, shrinkage=config.shrinkage)
    model = s2.model.to_dict()
    report = {
        "meta": _meta(config, "fit"),
        "data": {"source": data.source, "rows": data.rows, "rejected": len(data.rejected)},
        "stage1": {**s1.params.to_dict(), "loglik": s1.loglik,
                   "diagnostics": _optimize_dict(s1.diagnostics)},
        "stage2": {**s2.lognormal.to_dict(), "loglik": s2.loglik,
                   "diagnostics": _optimize_dict(s2.diagnostics)},
        "model": model,
    }
    return {"fit_report.json": _json_text(report),
            "model.json": _json_text({"meta": _meta(config, "fit"), **model})}


def cmd_simulate(config: RunConfig, args) -> dict[str, str]:
    m = load_model(_require(args.model, "--model"))
    cohort = simulate_arrays(m, config.size, config.seed)
    out = {"cohort.csv": _csv_text(config, cohort_csv(cohort.charge, cohort.los))}
    if args.paths:
        body = json.loads(paths_json(cohort))
        out["paths.json"] = _json_text({"meta": _meta(config, "simulate"), **body})
    return out


def cmd_price(config: RunConfig, args) -> dict[str, str]:
    m = load_model(_require(args.model, "--model"))
    grid = [t for t in config.t_grid if t <= m.horizon]
    if len(grid) < len(config.t_grid):
        log.warning("dropped %d grid times beyond the model horizon %.6g",
                    len(config.t_grid) - len(grid), m.horizon)
    if not grid:
        raise ValidationError("t_grid: no time lies within the model horizon")
    curves = price_table(m, grid, config.quadrature)
    for curve in curves:
        if not curve.is_increasing():
            log.info("band %d: price is not increasing over the grid", curve.band)
    return {"prices.csv": _csv_text(config, price_csv(curves))}


def cmd_gof(config: RunConfig, args) -> dict[str, str]:
    m = load_model(_require(args.model, "--model"))
    data = ingest(_require(args.data, "--data"), jitter=config.jitter, seed=config.seed)
    joint_spec = replace(config.binning, bins=config.joint_bins)
    report = {
        "meta": _meta(config, "gof"),
        "rows": data.rows,
        "los": los_marginal_report(data.los, m, config.binning).to_dict(),
        "log_charge": log_charge_marginal_report(data.charge, m, config.binning).to_dict(),
        "joint": chi2_joint(data.charge, data.los, m, joint_spec).to_dict(),
    }
    return {"gof.json": _json_text(report)}


def cmd_grid(config: RunConfig, args) -> dict[str, str]:
    m = load_model(_require(args.model, "--model"))
    lp = m.lognormal
    t_max = cph_quantile(m.params, 0.99)
    gx = np.linspace(lp.mu - 4 * lp.sigma, lp.mu + 4 * lp.sigma + t_max, config.grid_size)
    gy = np.linspace(0.0, t_max, config.grid_size)
    if args.data is not None:
        data = ingest(args.data, jitter=config.jitter, seed=config.seed)
        charge, los = data.charge, data.los
    else:
        cohort = simulate_arrays(m, config.kde_samples, config.seed)
        charge, los = cohort.charge, cohort.los
    _, _, kde = kde_2d(np.column_stack([np.log(charge), los]), config.bandwidths, (gx, gy))
    dens = model_density_grid(m, gx, gy)
    return {"model_density.csv": _csv_text(config, grid_csv(gx, gy, dens)),
            "kde_density.csv": _csv_text(config, grid_csv(gx, gy, kde))}


COMMANDS: dict[str, Callable] = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "price": cmd_price,
    "gof": cmd_gof,
    "grid": cmd_grid,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phaseprice",
                                     description="Coxian charge/LOS models: fit, simulate, price.")
    parser.add_argument("--version", action="version", version=f"phaseprice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--data", help="CSV with charge and los columns")
        p.add_argument("--model", help="model JSON written by fit")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument("--n", type=int, help="phase count (overrides config)")
        p.add_argument("--size", type=int, help="cohort size for simulate")
        p.add_argument("--paths", action="store_true", help="also write band paths")
        p.add_argument("--jitter", action="store_true", default=None,
                       help="spread whole-day LOS values over the day")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, {"seed": args.seed, "n": args.n,
                                           "size": args.size, "jitter": args.jitter})
        artifacts = COMMANDS[args.command](config, args)
        for path in write_artifacts(args.out, artifacts):
            print(path)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage} " if stage is not None else ""
        print(f"numerical {prefix}failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PhasePriceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
