"""
Free-Field Lattice Verifier - Main Entry Point
==============================================

Batch front door for the verification suites. Reads a flat JSON config,
applies command-line overrides, runs the selected suites and writes one JSON
report per suite plus a summary. ``dump`` writes kernels as CSV and
observables or cohomology tables as JSON for external plotting.

Usage:
    python main.py verify --suite propagators --lattice time1d
    python main.py verify --suite all --lattice mink2d --out reports/mink
    python main.py dump --what kernel:retarded --what cohomology:slab:10-14
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import bv
from errors import ConfigError, FreeFieldError, InvalidSpec, ParseError, UnknownReference, ValidationError
from lattice import Diamond, Interval, Lattice, Region, Site, build_lattice, delta_smearing, full_region, make_region
from observables import Linear, Truncation, Vector, generator, random_observable
from propagators import KernelKind, build_kernels
from report_manager import CheckReport, ReportManager
from verifier import FAULTS, SUITES, SuiteVerifier

OUT_DIR_ENV = "FREEFIELD_OUT_DIR"

DEFAULT_LATTICES: Dict[str, Dict[str, Any]] = {
    "time1d": {"dimension": "time1d", "n_time": 100, "n_space": 1, "dt": 0.05, "dx": 1.0, "mass": 1.0},
    "mink2d": {"dimension": "mink2d", "n_time": 48, "n_space": 16, "dt": 0.1, "dx": 0.2, "mass": 1.0},
}

LATTICE_KEYS = ("n_time", "n_space", "dt", "dx", "mass")

# full-region cohomology dumps stop at linear functions above this many sites
DUMP_QUADRATIC_SITE_LIMIT = 64

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; the flat dict form is the config file format."""

    lattice: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_LATTICES["time1d"]))
    d_max: int = 4
    a_max: int = 2
    h_max: int = 4
    tolerance: float = 1e-9
    rank_threshold: float = bv.DEFAULT_RANK_THRESHOLD
    suites: Tuple[str, ...] = ("all",)
    seed: int = 0
    n_seeds: int = 10
    n_bv_seeds: int = 50
    n_pairs: int = 100
    out_dir: str = "reports"
    inject_fault: Optional[str] = None
    dump: Tuple[str, ...] = ()

    @property
    def truncation(self) -> Truncation:
        return Truncation(d_max=self.d_max, a_max=self.a_max, h_max=self.h_max)

    @property
    def seeds(self) -> List[int]:
        return list(range(self.seed, self.seed + self.n_seeds))

    @property
    def bv_seeds(self) -> List[int]:
        return list(range(self.seed, self.seed + self.n_bv_seeds))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        lattice = data.pop("lattice")
        data["lattice"] = lattice["dimension"]
        data.update({key: lattice[key] for key in LATTICE_KEYS})
        data["suites"] = list(self.suites)
        data["dump"] = list(self.dump)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build and validate a config from the flat key/value form.

        Missing keys take their defaults; lattice keys default per dimension.

        Raises:
            ValidationError: for unknown keys or invalid values
        """
        known = {f for f in cls.__dataclass_fields__} | set(LATTICE_KEYS)
        for key in data:
            if key not in known:
                raise ValidationError(key, "unknown configuration key")

        dimension = data.get("lattice", "time1d")
        if dimension not in DEFAULT_LATTICES:
            raise ValidationError("lattice", f"expected one of {sorted(DEFAULT_LATTICES)}, got {dimension!r}")
        lattice = dict(DEFAULT_LATTICES[dimension])
        for key in LATTICE_KEYS:
            if key in data:
                lattice[key] = _number(f"lattice.{key}", data[key], int if key.startswith("n_") else float)
        for key in ("dt", "dx", "mass"):
            if lattice[key] <= 0:
                raise ValidationError(f"lattice.{key}", f"must be positive, got {lattice[key]}")

        kwargs: Dict[str, Any] = {"lattice": lattice}
        for key in ("d_max", "a_max", "h_max", "seed", "n_seeds", "n_bv_seeds", "n_pairs"):
            if key in data:
                kwargs[key] = _number(key, data[key], int)
        for key in ("tolerance", "rank_threshold"):
            if key in data:
                kwargs[key] = _number(key, data[key], float)
                if kwargs[key] <= 0:
                    raise ValidationError(key, f"must be positive, got {kwargs[key]}")
        for key in ("d_max", "a_max", "h_max"):
            if kwargs.get(key, 0) < 0:
                raise ValidationError(f"truncation.{key}", "must be non-negative")
        for key in ("n_seeds", "n_bv_seeds", "n_pairs"):
            if kwargs.get(key, 1) < 1:
                raise ValidationError(key, "need at least one sample")

        if "suites" in data:
            suites = data["suites"]
            if isinstance(suites, str):
                suites = [suites]
            for i, name in enumerate(suites):
                if name != "all" and name not in SUITES:
                    raise ValidationError(f"suites[{i}]", f"unknown suite {name!r}")
            kwargs["suites"] = tuple(suites)
        if data.get("out_dir") is not None:
            kwargs["out_dir"] = str(data["out_dir"])
        if data.get("inject_fault") is not None:
            if data["inject_fault"] not in FAULTS:
                raise ValidationError("inject_fault", f"expected one of {list(FAULTS)}, got {data['inject_fault']!r}")
            kwargs["inject_fault"] = data["inject_fault"]
        if "dump" in data:
            kwargs["dump"] = tuple(data["dump"])

        cfg = cls(**kwargs)
        try:
            cfg.build_lattice()
        except InvalidSpec as e:
            raise ValidationError("lattice", str(e)) from e
        return cfg

    def build_lattice(self) -> Lattice:
        return build_lattice(self.lattice)


def _number(path: str, value: Any, kind: type):
    if isinstance(value, bool):
        raise ValidationError(path, f"expected a number, got {value!r}")
    try:
        converted = kind(value)
    except (TypeError, ValueError):
        raise ValidationError(path, f"expected {kind.__name__}, got {value!r}")
    if kind is int and converted != value:
        raise ValidationError(path, f"expected an integer, got {value!r}")
    return converted


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a flat JSON config file."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ParseError(f"config {path} must hold a JSON object")
    return data


def parse_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 environ: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    Layer defaults, the config file, the output directory variable and flag overrides.

    Args:
        path: optional JSON config file
        overrides: flag values; ``None`` entries are ignored
        environ: environment mapping, ``os.environ`` by default

    Returns:
        Validated RunConfig

    Raises:
        ParseError: unreadable or malformed config file
        ValidationError: invalid value, with its field path
    """
    environ = os.environ if environ is None else environ
    data: Dict[str, Any] = load_config_file(path) if path else {}
    if environ.get(OUT_DIR_ENV):
        data["out_dir"] = environ[OUT_DIR_ENV]

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "lattice" in overrides and overrides["lattice"] != data.get("lattice"):
        # switching dimension drops lattice values written for the other one
        for key in LATTICE_KEYS:
            data.pop(key, None)
    data.update(overrides)
    return RunConfig.from_dict(data)


def run_suite(cfg: RunConfig) -> Tuple[int, List[CheckReport]]:
    """
    Run the configured suites and write their reports.

    Returns:
        (exit status, reports); the status is 0 iff every record passed
    """
    lat = cfg.build_lattice()
    verifier = SuiteVerifier(lat, cfg.seeds, cfg.truncation, cfg.tolerance, cfg.rank_threshold, cfg.inject_fault,
                             bv_seeds=cfg.bv_seeds, n_pairs=cfg.n_pairs)
    reports = verifier.run_all(cfg.suites)

    manager = ReportManager(cfg.out_dir)
    for report in reports:
        manager.save_report(report)
    manager.save_summary(reports, cfg.to_dict())

    failed = [r for r in reports if not r.passed]
    for report in failed:
        for record in report.failures():
            logger.warning(f"{report.suite}: {record.name} {record.status} "
                           f"(residual {record.residual:.3e}, tolerance {record.tolerance:.1e})")
    if failed:
        logger.error(f"{len(failed)} of {len(reports)} suites failed: {', '.join(r.suite for r in failed)}")
        return 1, reports
    logger.info(f"All {len(reports)} suites passed")
    return 0, reports


def parse_region(lat: Lattice, ref: str) -> Region:
    """
    Region reference: ``full``, ``slab:t0-t1`` or ``diamond:t,x,r``.

    Raises:
        UnknownReference: for a malformed or off-lattice reference
    """
    try:
        if ref == "full":
            return full_region(lat)
        kind, _, args = ref.partition(":")
        if kind == "slab":
            t0, t1 = (int(v) for v in args.split("-"))
            return make_region(lat, Interval(t0, t1))
        if kind == "diamond":
            t, x, r = (int(v) for v in args.split(","))
            return make_region(lat, Diamond(Site(t, x), r))
    except (ValueError, FreeFieldError) as e:
        raise UnknownReference(f"bad region {ref!r}: {e}") from e
    raise UnknownReference(f"unknown region {ref!r}")


def _dump_kernel(cfg: RunConfig, lat: Lattice, name: str, manager: ReportManager) -> Path:
    try:
        kind = KernelKind(name)
    except ValueError:
        raise UnknownReference(f"unknown kernel {name!r}; expected one of {[k.value for k in KernelKind]}")
    matrix = build_kernels(lat).by_kind(kind).matrix
    rows, cols = np.indices(matrix.shape)
    table = np.column_stack([rows.ravel(), cols.ravel(), matrix.real.ravel(), np.imag(matrix).ravel()])
    path = manager.out_dir / f"kernel_{kind.value}.csv"
    np.savetxt(path, table, delimiter=",", fmt=["%d", "%d", "%.17g", "%.17g"], header="row,col,re,im", comments="")
    logger.info(f"Wrote {matrix.shape[0] ** 2} kernel entries to {path}")
    return path


def _dump_observable(cfg: RunConfig, lat: Lattice, ref: str, manager: ReportManager) -> Path:
    """Observable reference: ``phi:<site>``, ``antifield:<site>`` or ``random:<seed>@<region>``."""
    kind, _, args = ref.partition(":")
    try:
        if kind in ("phi", "antifield"):
            index = int(args)
            if not 0 <= index < lat.n_sites:
                raise UnknownReference(f"site {index} is not on the lattice")
            smearing = delta_smearing(lat, index)
            A = generator(lat, Linear(smearing) if kind == "phi" else Vector(smearing), truncation=cfg.truncation)
        elif kind == "random":
            seed, _, region_ref = args.partition("@")
            region = parse_region(lat, region_ref or "slab:1-3")
            A = random_observable(lat, region, int(seed), n_max=2, k_max=1, truncation=cfg.truncation)
        else:
            raise UnknownReference(f"unknown observable {ref!r}")
    except UnknownReference:
        raise
    except (ValueError, FreeFieldError) as e:
        raise UnknownReference(f"bad observable {ref!r}: {e}") from e
    safe = ref.replace(":", "_").replace("@", "_").replace(",", "_")
    return manager.write_json(f"observable_{safe}.json", {"ref": ref, **A.to_json_terms()})


def _dump_cohomology(cfg: RunConfig, lat: Lattice, ref: str, manager: ReportManager) -> Path:
    region = parse_region(lat, ref)
    degree = 2 if region.size <= DUMP_QUADRATIC_SITE_LIMIT else 1
    coh = bv.cohomology(region, bv.Differential.CLASSICAL, degree, build_kernels(lat), max_ext_degree=1,
                        rank_threshold=cfg.rank_threshold, with_representatives=False)
    safe = ref.replace(":", "_").replace(",", "_")
    return manager.write_json(f"cohomology_{safe}.json", {"ref": ref, **coh.to_dict()})


def dump(cfg: RunConfig, what: str) -> Path:
    """
    Write one object for external plotting.

    Args:
        cfg: run configuration (lattice, truncation, output directory)
        what: ``kernel:<kind>``, ``observable:<ref>`` or ``cohomology:<region>``

    Returns:
        Path of the written file

    Raises:
        UnknownReference: if ``what`` names nothing constructible
        SizeCap: if a cohomology dump needs a block beyond the size cap
    """
    lat = cfg.build_lattice()
    manager = ReportManager(cfg.out_dir)
    category, _, ref = what.partition(":")
    if category == "kernel":
        return _dump_kernel(cfg, lat, ref, manager)
    if category == "observable":
        return _dump_observable(cfg, lat, ref, manager)
    if category == "cohomology":
        return _dump_cohomology(cfg, lat, ref, manager)
    raise UnknownReference(f"unknown dump target {what!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freefield", description="Free-field lattice quantization verifier")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--lattice", choices=sorted(DEFAULT_LATTICES), help="lattice dimension")
    common.add_argument("--seed", type=int, help="first random seed")
    common.add_argument("--out", dest="out_dir", help=f"output directory (overrides {OUT_DIR_ENV})")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", parents=[common], help="run verification suites")
    verify.add_argument("--suite", action="append", dest="suites", choices=list(SUITES) + ["all"])
    verify.add_argument("--inject-fault", choices=list(FAULTS), help="deliberately break one check")
    dump_cmd = sub.add_parser("dump", parents=[common], help="dump kernels, observables or cohomology tables")
    dump_cmd.add_argument("--what", action="append", required=True,
                          help="kernel:<kind> | observable:<ref> | cohomology:<region>")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    overrides = {"lattice": args.lattice, "seed": args.seed, "out_dir": args.out_dir}
    if args.command == "verify":
        overrides.update({"suites": args.suites, "inject_fault": args.inject_fault})
    else:
        overrides["dump"] = args.what
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2

    if args.command == "verify":
        status, _ = run_suite(cfg)
        return status

    try:
        for what in cfg.dump:
            dump(cfg, what)
    except FreeFieldError as e:
        logger.error(f"Dump failed: {type(e).__name__}: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
