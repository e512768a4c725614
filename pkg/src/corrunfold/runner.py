"""Command-line runner: exact reference plus master equations in lockstep,
per-method metric series, CSV and JSON output.

Config files are flat JSON objects with the ``RunConfig`` field names::

    {"spectral_density": {"kind": "ohmic", "eta": 1.0, "omega_c": 10.0},
     "n_modes": 255, "d_omega": 0.1, "omega0": 1.0, "dt": 0.0005,
     "t_final": 3.0, "b_width": null, "methods": ["ULL2", "TCL2"],
     "exact_scheme": "eigenprop", "out_dir": "out", "sample_stride": 20}
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exact, mesolve, model, unfold
from .errors import ConfigError, NumericalError
from .mesolve import MethodId
from .opalg import TruncatedBasis, flat_to_blocks, hs_norm, trace_distance

log = logging.getLogger("corrunfold")

METHOD_COLUMNS = (
    "t", "rho11", "coherence", "chi_norm", "dhs_chi", "acc_dhs_chi",
    "td_state", "acc_td_state", "neg_pop_flag",
)
EXACT_COLUMNS = ("t", "rho11", "coherence", "chi_norm", "bath_td_from_initial")
FLOAT_FORMAT = "%.12e"
RANK_GAP_ATOL = 1e-12

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


@dataclass
class RunConfig:
    spectral_density: dict = field(
        default_factory=lambda: {"kind": "ohmic", "eta": 1.0, "omega_c": 10.0}
    )
    n_modes: int = 255
    d_omega: float = 0.1
    omega0: float = 1.0
    dt: float = 0.0005
    t_final: float = 3.0
    b_width: float | None = None
    methods: list = field(default_factory=lambda: [m.value for m in MethodId])
    exact_scheme: str = "eigenprop"
    out_dir: str = "out"
    sample_stride: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.n_modes, int) or self.n_modes < 1:
            raise ConfigError(f"n_modes must be an integer >= 1, got {self.n_modes!r}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ConfigError(f"t_final must be >= dt, got {self.t_final}")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        if not isinstance(self.sample_stride, int) or self.sample_stride < 1:
            raise ConfigError(f"sample_stride must be an integer >= 1, got {self.sample_stride!r}")
        if self.b_width is not None and not self.b_width > 0:
            raise ConfigError(f"b_width must be > 0, got {self.b_width}")
        if self.exact_scheme not in ("eigenprop", "rk4"):
            raise ConfigError(f"exact_scheme must be eigenprop or rk4, got {self.exact_scheme!r}")
        self.method_ids()
        self.density()
        mesolve.n_steps_for(self.dt, self.t_final)

    def method_ids(self) -> list[MethodId]:
        ids = [MethodId.parse(m) if isinstance(m, str) else MethodId(m) for m in self.methods]
        return list(dict.fromkeys(ids))

    def density(self) -> model.SpectralDensity:
        params = dict(self.spectral_density)
        kind = str(params.pop("kind", "")).lower()
        return model.SpectralDensity(kind, {k: float(v) for k, v in params.items()})

    @property
    def delta_width(self) -> float:
        return self.d_omega if self.b_width is None else self.b_width

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> RunConfig:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    "fig1": {
        "spectral_density": {"kind": "ohmic", "eta": 1.0, "omega_c": 10.0},
        "n_modes": 255, "d_omega": 0.1, "omega0": 1.0, "dt": 0.0005, "t_final": 3.0,
    },
    "fig2": {
        "spectral_density": {"kind": "lorentzian", "gamma": 1.0, "lam": 0.2},
        "n_modes": 255, "d_omega": 0.05, "omega0": 1.0, "dt": 0.0005, "t_final": 3.0,
    },
}
SMALL_MODES = 16


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig.from_dict({**PRESETS[name], **overrides})


@dataclass
class Series:
    """Full-grid metric arrays for one method (or the exact reference)."""

    times: np.ndarray
    values: dict
    neg_population: bool = False
    wall_time: float = 0.0
    error: str | None = None


@dataclass
class ScenarioResult:
    config: RunConfig
    exact: Series
    methods: dict
    windows: list
    wall_time: float

    @property
    def failed(self) -> bool:
        return any(s.error for s in self.methods.values())


def _cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
    return out


def _plus_state() -> np.ndarray:
    return np.full((2, 2), 0.5, dtype=complex)


def run_scenario(config: RunConfig) -> ScenarioResult:
    """Run the exact reference and every requested method on a shared grid.

    A method that raises a numerical error is dropped from that point on;
    its series is truncated and tagged, the others continue.
    """
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        modes = model.discretize(config.density(), config.n_modes, config.d_omega, config.omega0)
    for w in caught:
        log.warning("%s", w.message)
    basis = TruncatedBasis(config.n_modes)
    n_steps = mesolve.n_steps_for(config.dt, config.t_final)
    times = config.dt * np.arange(n_steps + 1)
    psi0 = exact.product_state(modes)

    solvers = {
        m: mesolve.make_solver(m, modes, basis, _plus_state(), config.dt, config.delta_width)
        for m in config.method_ids()
    }
    per_step = ("rho11", "coherence", "chi_norm", "dhs_chi", "td_state", "neg_pop_flag")
    raw = {m: {k: np.full(n_steps + 1, np.nan) for k in per_step} for m in solvers}
    clock = {m: 0.0 for m in solvers}
    errors: dict = {}
    ex = {k: np.zeros(n_steps + 1) for k in ("rho11", "coherence", "chi_norm", "bath_td")}

    t_exact = time.perf_counter()
    trajectory = exact.iter_exact(modes, psi0, config.dt, config.t_final, config.exact_scheme)
    exact_clock = time.perf_counter() - t_exact
    for n in range(n_steps + 1):
        t0 = time.perf_counter()
        psi = next(trajectory)
        snap = exact.reduced_and_chi(psi, basis, True, modes)
        ex["rho11"][n] = snap.rho_s[1, 1].real
        ex["coherence"][n] = abs(snap.rho_s[0, 1])
        ex["chi_norm"][n] = hs_norm(snap.chi)
        exact_blocks = flat_to_blocks(snap.chi, basis)
        ex["bath_td"][n] = exact.bath_distance_from_vacuum(psi)
        exact_clock += time.perf_counter() - t0

        for m, solver in list(solvers.items()):
            t0 = time.perf_counter()
            try:
                if n:
                    solver.advance()
                chi = unfold.chi_of(solver).blocks
            except NumericalError as exc:
                errors[m] = str(exc)
                log.error("%s", exc)
                del solvers[m]
                continue
            rho = solver.rho_s
            row = raw[m]
            row["rho11"][n] = rho[1, 1].real
            row["coherence"][n] = abs(rho[0, 1])
            row["chi_norm"][n] = np.linalg.norm(chi)
            row["dhs_chi"][n] = np.linalg.norm(chi - exact_blocks)
            row["td_state"][n] = trace_distance(rho, snap.rho_s)
            row["neg_pop_flag"][n] = float(mesolve.min_population(rho) < mesolve.NEGATIVE_POP_THRESHOLD)
            clock[m] += time.perf_counter() - t0

    exact_series = Series(
        times,
        {
            "rho11": ex["rho11"],
            "coherence": ex["coherence"],
            "chi_norm": ex["chi_norm"],
            "bath_td_from_initial": _cumtrapz(ex["bath_td"], config.dt),
        },
        wall_time=exact_clock,
    )
    series = {}
    for m, row in raw.items():
        done = int(np.sum(~np.isnan(row["rho11"])))
        vals = {k: v[:done] for k, v in row.items()}
        vals["acc_dhs_chi"] = _cumtrapz(vals["dhs_chi"], config.dt)
        vals["acc_td_state"] = _cumtrapz(vals["td_state"], config.dt)
        series[m] = Series(
            times[:done],
            vals,
            neg_population=bool(np.any(vals["neg_pop_flag"] > 0)),
            wall_time=clock[m],
            error=errors.get(m),
        )
        log.info("%s done in %.1f s%s", m.value, clock[m], " (failed)" if m in errors else "")
    windows = inconsistency_windows(exact_series, series)
    return ScenarioResult(config, exact_series, series, windows, time.perf_counter() - start)


def _ranking(values: dict, idx: int) -> list[str]:
    """Method names by ascending value at grid index ``idx``."""
    return [m.value for m, _ in sorted(values.items(), key=lambda kv: kv[1][idx])]


def _discordant_pairs(norm_gap: dict, dist: dict, idx: int) -> list[tuple[str, str]]:
    """Method pairs ordered one way by the norm gap and the other way by the
    distance, each difference exceeding ``RANK_GAP_ATOL``."""
    methods = sorted(norm_gap, key=lambda m: m.value)
    out = []
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            dn = norm_gap[a][idx] - norm_gap[b][idx]
            dd = dist[a][idx] - dist[b][idx]
            if abs(dn) > RANK_GAP_ATOL and abs(dd) > RANK_GAP_ATOL and (dn > 0) != (dd > 0):
                out.append((a.value, b.value))
    return out


def inconsistency_windows(exact_series: Series, series: dict, max_windows: int = 50) -> list:
    """Time windows where ranking methods by ``| ||chi^M|| - ||chi^EX|| |``
    disagrees with ranking them by ``D_HS(chi^M, chi^EX)``.

    A window is a maximal run of grid points with at least one discordant
    pair; it lists every pair discordant somewhere inside it and both
    rankings at its midpoint.  Only methods that completed the whole grid
    take part.  Longest windows come first.
    """
    n = len(exact_series.times)
    full = {m: s for m, s in series.items() if len(s.times) == n}
    if len(full) < 2:
        return []
    norm_gap = {m: np.abs(s.values["chi_norm"] - exact_series.values["chi_norm"]) for m, s in full.items()}
    dist = {m: s.values["dhs_chi"] for m, s in full.items()}
    times = exact_series.times
    windows, start, pairs = [], None, set()
    for i in range(n + 1):
        found = _discordant_pairs(norm_gap, dist, i) if i < n else []
        if found:
            if start is None:
                start, pairs = i, set()
            pairs.update(found)
            continue
        if start is not None:
            mid = (start + i - 1) // 2
            windows.append({
                "t_start": float(times[start]),
                "t_end": float(times[i - 1]),
                "pairs": [list(p) for p in sorted(pairs)],
                "norm_ranking": _ranking(norm_gap, mid),
                "distance_ranking": _ranking(dist, mid),
            })
            start = None
    windows.sort(key=lambda w: w["t_end"] - w["t_start"], reverse=True)
    return windows[:max_windows]


def _sample_indices(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n, stride)
    if n and idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def _write_csv(path: Path, columns, data: dict, times: np.ndarray, stride: int):
    idx = _sample_indices(len(times), stride)
    table = np.column_stack([times[idx]] + [data[c][idx] for c in columns[1:]])
    header = ",".join(columns)
    np.savetxt(path, table, fmt=FLOAT_FORMAT, delimiter=",", newline="\n", header=header, comments="")


def emit(result: ScenarioResult, out_dir=None) -> list[Path]:
    """Write one CSV per method, ``exact.csv`` and ``summary.json``."""
    cfg = result.config
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    if not result.methods:
        raise ConfigError("nothing to write: no method results")
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        path = out / "exact.csv"
        _write_csv(path, EXACT_COLUMNS, result.exact.values, result.exact.times, cfg.sample_stride)
        written.append(path)
        for m, s in result.methods.items():
            if len(s.times) == 0:
                continue
            path = out / f"{m.value}.csv"
            _write_csv(path, METHOD_COLUMNS, s.values, s.times, cfg.sample_stride)
            written.append(path)
        path = out / "summary.json"
        path.write_text(json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
        written.append(path)
    except OSError as exc:
        raise ConfigError(f"cannot write output to {out}: {exc}") from None
    return written


def _last(values: np.ndarray):
    return float(values[-1]) if len(values) else None


def summary(result: ScenarioResult) -> dict:
    cfg = result.config
    methods = {}
    for m, s in result.methods.items():
        # The last grid point is always written, so these match the CSV's last row.
        methods[m.value] = {
            "acc_dhs_chi": _last(s.values["acc_dhs_chi"]),
            "acc_td_state": _last(s.values["acc_td_state"]),
            "t_reached": _last(s.times),
            "wall_time_s": round(s.wall_time, 3),
            "neg_population": s.neg_population,
            "error": s.error,
        }
    return {
        "config": cfg.to_dict(),
        "b_width_used": cfg.delta_width,
        "exact": {
            "bath_td_from_initial": _last(result.exact.values["bath_td_from_initial"]),
            "wall_time_s": round(result.exact.wall_time, 3),
        },
        "methods": methods,
        "flags": {
            "neg_population": sorted(m.value for m, s in result.methods.items() if s.neg_population),
            "failed": sorted(m.value for m, s in result.methods.items() if s.error),
        },
        "norm_distance_inconsistency": {
            "found": bool(result.windows),
            "windows": result.windows,
        },
        "wall_time_s": round(result.wall_time, 3),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="corrunfold",
        description="Exact vs approximate qubit-bath dynamics and their correlation operators.",
    )
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in parameter set")
    p.add_argument("--methods", help="comma-separated list, e.g. ULL2,TCL2,R")
    p.add_argument("--out", help="output directory")
    p.add_argument("--small", action="store_true", help=f"smoke mode with M={SMALL_MODES}")
    p.add_argument("--seed", type=int, default=None, help="accepted for compatibility; runs are deterministic")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        base = RunConfig.from_json(args.config).to_dict()
    elif args.preset:
        base = preset(args.preset).to_dict()
    else:
        base = RunConfig().to_dict()
    if args.methods:
        base["methods"] = [m for m in args.methods.split(",") if m.strip()]
    if args.out:
        base["out_dir"] = args.out
    if args.small:
        base["n_modes"] = SMALL_MODES
    return RunConfig.from_dict(base)


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        config = config_from_args(args)
        result = run_scenario(config)
        emit(result)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for m, s in result.methods.items():
        status = f"FAILED: {s.error}" if s.error else "ok"
        print(f"{m.value}: {s.wall_time:.1f} s {status}", file=sys.stderr)
    return EXIT_SOLVER if result.failed else EXIT_OK


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
