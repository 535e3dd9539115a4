"""Configuration, experiment orchestration and CSV/JSON export.

A run is described by one flat YAML mapping.  Command-line flags override
file values.  Every run writes its CSV files plus a single ``manifest.json``
into the output directory; on failure the files written so far are removed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import yaml

from . import __version__
from .ensemble import (
    EnsembleConfig,
    ensemble_distribution,
    fit_localization_length,
    normalized_ipr,
    variance,
)
from .errors import DFLWalkError, ParseError, ValidationError
from .exact_oracle import (
    MAX_EXACT_SITES,
    exact_bond_entropy,
    exact_init,
    exact_spin_expectation,
    exact_step,
    exact_walker_distribution,
)
from .mps_engine import (
    DEFAULT_MAX_BOND,
    DEFAULT_TRUNC_RULE,
    DEFAULT_TRUNC_TOL,
    TRUNC_RULES,
    bond_entropies,
    bond_entropy,
    mps_init,
    mps_step,
    spin_expectations,
    walker_distribution_mps,
)
from .spectrum import spectrum_sweep
from .walk_core import WalkParams

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DFLWALK_OUTPUT_DIR"

ENGINES = ("sector", "mps", "exact")
EXPERIMENTS = {
    "distribution": ("sector", "mps", "exact"),
    "variance_series": ("sector", "mps", "exact"),
    "ipr_scan": ("sector", "mps", "exact"),
    "spectrum": ("sector",),
    "entropy_series": ("mps", "exact"),
    "spin_textures": ("mps", "exact"),
    "field_perturbation": ("mps", "exact"),
    "entropy_profile": ("mps", "exact"),
    "volume_law": ("exact",),
}

# experiments defined on a ring regardless of the ``periodic`` setting
RING_EXPERIMENTS = ("spectrum", "volume_law")

_ANGLE = re.compile(r"^\s*([-+]?\d*\.?\d*(?:e[-+]?\d+)?)?\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$", re.I)


def parse_angle(value: Any) -> float:
    """Accept plain numbers or strings such as ``"3pi/8"`` or ``"pi/100"``."""
    if isinstance(value, bool):
        raise ValidationError(f"angle must be numeric, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
        m = _ANGLE.match(value)
        if m:
            coef = m.group(1)
            if coef in (None, "", "+"):
                c = 1.0
            elif coef == "-":
                c = -1.0
            else:
                c = float(coef)
            d = float(m.group(2)) if m.group(2) else 1.0
            if d == 0:
                raise ValidationError(f"zero denominator in angle {value!r}")
            return c * math.pi / d
    raise ValidationError(f"cannot interpret {value!r} as an angle")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    engine: str = "sector"
    experiment: str = "distribution"
    # walk
    theta: float = math.pi / 4
    phi: float = 0.0
    steps: int = 10
    n_sites: int | None = None
    periodic: bool = False
    coin_init: tuple[complex, complex] = (1 / math.sqrt(2), 1 / math.sqrt(2))
    # ensemble
    n_samples: int = 4000
    seed: int = 0
    exhaustive: bool = False
    chunk_size: int = 128
    workers: int = 1
    # sweeps and diagnostics
    phi_grid: tuple[float, ...] = ()
    phi_prime: tuple[float, ...] = (0.0,)
    snapshot_times: tuple[int, ...] = ()
    fit_window: tuple[int, int] = (2, 20)
    n_norm: int | None = None
    n_sites_grid: tuple[int, ...] = ()
    sector_source: str = "exhaustive"
    sector_count: int = 200
    # matrix product states
    trunc_tol: float = DEFAULT_TRUNC_TOL
    trunc_rule: str = DEFAULT_TRUNC_RULE
    max_bond: int | None = DEFAULT_MAX_BOND
    hard_cap: bool = False
    entropy_base: int = 2
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if self.engine not in ENGINES:
            raise ValidationError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        if self.engine not in EXPERIMENTS[self.experiment]:
            raise ValidationError(
                f"experiment {self.experiment!r} requires engine in {EXPERIMENTS[self.experiment]}, "
                f"got {self.engine!r}"
            )
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.n_sites is None:
            object.__setattr__(self, "n_sites", 2 * self.steps + 1)
        if self.experiment in RING_EXPERIMENTS:
            object.__setattr__(self, "periodic", True)
        if self.entropy_base != 2:
            raise ValidationError("entropy_base must be 2")
        if self.trunc_tol < 0:
            raise ValidationError("trunc_tol must be >= 0")
        if self.trunc_rule not in TRUNC_RULES:
            raise ValidationError(f"trunc_rule must be one of {TRUNC_RULES}")
        if self.max_bond is not None and self.max_bond < 1:
            raise ValidationError("max_bond must be positive")
        if self.sector_source not in ("exhaustive", "sampled"):
            raise ValidationError("sector_source must be 'exhaustive' or 'sampled'")
        if self.fit_window[0] > self.fit_window[1]:
            raise ValidationError("fit_window must be (lo, hi) with lo <= hi")
        if any(t < 0 or t > self.steps for t in self.snapshot_times):
            raise ValidationError("snapshot_times must lie in [0, steps]")
        if self.engine == "exact" and self.experiment != "volume_law" and self.n_sites > MAX_EXACT_SITES:
            raise ValidationError(f"exact engine limited to n_sites <= {MAX_EXACT_SITES}")
        if self.experiment == "volume_law" and any(n > MAX_EXACT_SITES for n in self.n_sites_grid):
            raise ValidationError(f"exact engine limited to n_sites <= {MAX_EXACT_SITES}")
        # validates lattice geometry and the coin state
        self.walk_params()
        EnsembleConfig(self.n_samples, self.seed, self.exhaustive, self.chunk_size, self.workers)

    @property
    def phis(self) -> tuple[float, ...]:
        return self.phi_grid if self.phi_grid else (self.phi,)

    @property
    def times(self) -> list[int]:
        return sorted(set(self.snapshot_times)) if self.snapshot_times else list(range(self.steps + 1))

    def walk_params(self, phi: float | None = None, n_sites: int | None = None) -> WalkParams:
        return WalkParams(
            theta=self.theta,
            phi=self.phi if phi is None else phi,
            n_sites=self.n_sites if n_sites is None else n_sites,
            steps=self.steps,
            coin_init=self.coin_init,
            periodic=self.periodic,
        )

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(self.n_samples, self.seed, self.exhaustive, self.chunk_size, self.workers)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["coin_init"] = [[c.real, c.imag] for c in (complex(x) for x in self.coin_init)]
        return d


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}
_ALIASES = {"samples": "n_samples", "delta": "trunc_tol", "N": "n_sites"}
_ANGLE_KEYS = {"theta", "phi"}
_ANGLE_LIST_KEYS = {"phi_grid", "phi_prime"}
_INT_LIST_KEYS = {"snapshot_times", "n_sites_grid"}


def _coerce(key: str, value: Any) -> Any:
    if key in _ANGLE_KEYS:
        return parse_angle(value)
    if key in _ANGLE_LIST_KEYS:
        items = value if isinstance(value, (list, tuple)) else [value]
        return tuple(parse_angle(v) for v in items)
    if key in _INT_LIST_KEYS:
        items = value if isinstance(value, (list, tuple)) else [value]
        return tuple(_as_int(key, v) for v in items)
    if key == "fit_window":
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValidationError("fit_window must be a pair [lo, hi]")
        return (_as_int(key, value[0]), _as_int(key, value[1]))
    if key == "coin_init":
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValidationError("coin_init must hold two amplitudes")
        return tuple(_as_complex(v) for v in value)
    if key in ("steps", "n_samples", "seed", "chunk_size", "workers", "sector_count", "entropy_base"):
        return _as_int(key, value)
    if key in ("n_sites", "n_norm", "max_bond"):
        return None if value is None else _as_int(key, value)
    if key in ("periodic", "exhaustive", "hard_cap"):
        if not isinstance(value, bool):
            raise ValidationError(f"{key} must be true or false")
        return value
    if key == "trunc_tol":
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ValidationError("trunc_tol must be a number")
        try:
            return float(value)
        except ValueError as exc:
            raise ValidationError(f"trunc_tol must be a number, got {value!r}") from exc
    if key == "output_dir":
        return None if value is None else str(value)
    if not isinstance(value, str):
        raise ValidationError(f"{key} must be a string")
    return value


def _as_int(key: str, v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or float(v) != int(v):
        raise ValidationError(f"{key} needs integer values, got {v!r}")
    return int(v)


def _as_complex(v: Any) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    raise ValidationError(f"cannot interpret {v!r} as a complex amplitude")


def parse_config(text: str, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from YAML text plus optional overrides.

    Raises
    ------
    ParseError
        Malformed YAML, a non-mapping document, or an unknown key; the message
        names the line.
    ValidationError
        A value violates a field constraint or the engine/experiment matrix.
    """
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ParseError(f"{where}{exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError("line 1: config must be a key-value mapping")
    lines = {}
    if node is not None:
        for k, _ in node.value:
            lines[k.value] = k.start_mark.line + 1
    values: dict[str, Any] = {}
    for key, value in data.items():
        name = _ALIASES.get(str(key), str(key))
        if name not in _FIELD_NAMES:
            raise ParseError(f"line {lines.get(str(key), '?')}: unknown key {key!r}")
        values[name] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[_ALIASES.get(key, key)] = value
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    return ExperimentConfig(**coerced)


# ---------------------------------------------------------------- export


SCHEMAS = {
    "distribution": None,  # n followed by one P column per coupling
    "variance_series": ("phi", "t", "variance", "ipr"),
    "ipr_scan": ("phi", "t", "ipr", "variance", "lambda", "fit_rms"),
    "spectrum": ("phi", "sector_id", "E", "ipr"),
    "entropy_series": ("phi", "t", "S_center", "max_bond", "discarded_weight"),
    "spin_textures": ("phi", "t", "n", "X", "Y", "Z"),
    "field_perturbation": ("phi_prime", "t", "variance", "S_center"),
    "entropy_profile": ("phi", "t", "bond", "S"),
    "volume_law": ("N", "t", "S_half", "S_per_site"),
}


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if x == 0.0:
        x = 0.0  # drop the sign of negative zero
    return format(x, ".12g")


def export_csv(records: Iterable[Sequence[Any]], schema: Sequence[str], path: str | os.PathLike) -> Path:
    """Write ``records`` under a header row; floats use 12 significant digits."""
    path = Path(path)
    width = len(schema)
    lines = [",".join(schema)]
    for rec in records:
        if len(rec) != width:
            raise ValidationError(f"record of length {len(rec)} does not match schema {tuple(schema)}")
        lines.append(",".join(_fmt(v) for v in rec))
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- engines


@dataclass
class EngineStats:
    discarded_weight: float = 0.0
    max_bond: int = 0


def _walker_series(cfg: ExperimentConfig, phi: float, phi_prime: float = 0.0):
    """Walker distributions (and central entropies) at ``cfg.times`` for one coupling.

    Returns ``(dists, entropies, stats)``; entropies are ``None`` for the
    sector engine.
    """
    p = cfg.walk_params(phi)
    times = cfg.times
    if cfg.engine == "sector":
        res = ensemble_distribution(p, times[-1], cfg.ensemble_config(), snapshot_times=times)
        return res.distributions, None, EngineStats()
    return _state_series(cfg, p, phi_prime, lambda obs, t: (obs["P"], 0.0))


def _state_series(cfg: ExperimentConfig, p: WalkParams, phi_prime: float, pick: Callable):
    """Evolve one mps/exact state and collect observables at ``cfg.times``."""
    times = set(cfg.times)
    dists, ents = [], []
    stats = EngineStats()

    def record(obs, t):
        P, S = pick(obs, t)
        dists.append(P)
        ents.append(S)

    if cfg.engine == "mps":
        m = mps_init(p, cfg.trunc_tol, cfg.max_bond, cfg.hard_cap, cfg.trunc_rule)
        for t in range(cfg.times[-1] + 1):
            if t > 0:
                mps_step(m, p, phi_prime)
                stats.max_bond = max(stats.max_bond, m.max_bond_dim())
            if t in times:
                record(_mps_obs(m), t)
        stats.discarded_weight = m.discarded_weight
    else:
        st = exact_init(p)
        for t in range(cfg.times[-1] + 1):
            if t > 0:
                st = exact_step(st, p, phi_prime)
            if t in times:
                record(_exact_obs(st), t)
    return np.array(dists), np.array(ents), stats


def _mps_obs(m) -> dict[str, Any]:
    return {"P": walker_distribution_mps(m), "S": bond_entropies(m)}


def _exact_obs(st) -> dict[str, Any]:
    ents = np.array([exact_bond_entropy(st, b) for b in range(st.n_sites - 1)])
    return {"P": exact_walker_distribution(st), "S": ents}


def _center_bond(n_sites: int) -> int:
    """Bond just left of the origin site, i.e. between sites ``N//2 - 1`` and ``N//2``."""
    return max(n_sites // 2 - 1, 0)


# ---------------------------------------------------------------- experiments


def _per_phi(cfg: ExperimentConfig, fn: Callable, items: Sequence[Any]) -> list[Any]:
    """Map ``fn(cfg, item)`` over couplings; processes are used for mps/exact runs."""
    if cfg.engine != "sector" and cfg.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(items))) as pool:
            return list(pool.map(fn, [cfg] * len(items), items))
    return [fn(cfg, it) for it in items]


def _dist_task(cfg: ExperimentConfig, phi: float):
    return _walker_series(cfg, phi)


def _exp_distribution(cfg: ExperimentConfig):
    cfg = replace(cfg, snapshot_times=(cfg.steps,))
    results = _per_phi(cfg, _dist_task, cfg.phis)
    sites = cfg.walk_params().sites
    schema = ["n"] + [f"P(phi={_fmt(phi)})" for phi in cfg.phis]
    rows = [[int(n)] + [r[0][-1][j] for r in results] for j, n in enumerate(sites)]
    return {"distribution.csv": (schema, rows)}, _merge_stats(r[2] for r in results)


def _exp_variance_series(cfg: ExperimentConfig):
    results = _per_phi(cfg, _dist_task, cfg.phis)
    sites = cfg.walk_params().sites
    n_norm = cfg.n_norm or max(cfg.steps, 1)
    rows = []
    for phi, (dists, _, _) in zip(cfg.phis, results):
        for t, p in zip(cfg.times, dists):
            rows.append([phi, t, variance(p, sites), normalized_ipr(p, n_norm)])
    return {"variance_series.csv": (SCHEMAS["variance_series"], rows)}, _merge_stats(r[2] for r in results)


def _exp_ipr_scan(cfg: ExperimentConfig):
    cfg = replace(cfg, snapshot_times=(cfg.steps,))
    results = _per_phi(cfg, _dist_task, cfg.phis)
    sites = cfg.walk_params().sites
    n_norm = cfg.n_norm or max(cfg.steps, 1)
    rows = []
    for phi, (dists, _, _) in zip(cfg.phis, results):
        p = dists[-1]
        try:
            lam, rms = fit_localization_length(p, cfg.fit_window, sites, sublattice=cfg.steps % 2)
        except DFLWalkError as exc:
            logger.warning("localization fit failed at phi=%g: %s", phi, exc)
            lam, rms = float("nan"), float("nan")
        rows.append([phi, cfg.steps, normalized_ipr(p, n_norm), variance(p, sites), lam, rms])
    return {"ipr_scan.csv": (SCHEMAS["ipr_scan"], rows)}, _merge_stats(r[2] for r in results)


def _exp_spectrum(cfg: ExperimentConfig):
    source = "exhaustive" if cfg.sector_source == "exhaustive" else ("sampled", cfg.sector_count, cfg.seed)
    records = spectrum_sweep(
        cfg.phis, source, cfg.walk_params(), cfg.n_sites, n_norm=cfg.n_norm, workers=cfg.workers
    )
    rows = [[r.phi, r.sector_id, r.quasi_energy, r.ipr] for r in records]
    return {"spectrum.csv": (SCHEMAS["spectrum"], rows)}, EngineStats()


def _exp_entropy_series(cfg: ExperimentConfig):
    results = _per_phi(cfg, _entropy_series_task, cfg.phis)
    rows = [row for r in results for row in r[0]]
    return {"entropy_series.csv": (SCHEMAS["entropy_series"], rows)}, _merge_stats(r[1] for r in results)


def _entropy_series_task(cfg: ExperimentConfig, phi: float):
    """Central-bond entropy with the running bond dimension and truncation."""
    p = cfg.walk_params(phi)
    cb = _center_bond(p.n_sites)
    times = set(cfg.times)
    rows, stats = [], EngineStats()
    if cfg.engine == "mps":
        m = mps_init(p, cfg.trunc_tol, cfg.max_bond, cfg.hard_cap, cfg.trunc_rule)
        for t in range(cfg.times[-1] + 1):
            if t > 0:
                mps_step(m, p)
            stats.max_bond = max(stats.max_bond, m.max_bond_dim())
            if t in times:
                s = bond_entropy(m, cb) if p.n_sites > 1 else 0.0
                rows.append([phi, t, s, m.max_bond_dim(), m.discarded_weight])
        stats.discarded_weight = m.discarded_weight
    else:
        st = exact_init(p)
        for t in range(cfg.times[-1] + 1):
            if t > 0:
                st = exact_step(st, p)
            if t in times:
                s = exact_bond_entropy(st, cb) if p.n_sites > 1 else 0.0
                rows.append([phi, t, s, 0, 0.0])
    return rows, stats


def _textures_task(cfg: ExperimentConfig, phi: float):
    p = cfg.walk_params(phi)
    times = set(cfg.times)
    rows, stats = [], EngineStats()
    sites = p.sites

    def emit(t, x, y, z):
        for j, n in enumerate(sites):
            rows.append([phi, t, int(n), x[j], y[j], z[j]])

    if cfg.engine == "mps":
        m = mps_init(p, cfg.trunc_tol, cfg.max_bond, cfg.hard_cap, cfg.trunc_rule)
        for t in range(cfg.times[-1] + 1):
            if t > 0:
                mps_step(m, p)
                stats.max_bond = max(stats.max_bond, m.max_bond_dim())
            if t in times:
                e = spin_expectations(m)
                emit(t, e["X"], e["Y"], e["Z"])
        stats.discarded_weight = m.discarded_weight
    else:
        st = exact_init(p)
        for t in range(cfg.times[-1] + 1):
            if t > 0:
                st = exact_step(st, p)
            if t in times:
                xyz = [[exact_spin_expectation(st, j, a) for j in range(p.n_sites)] for a in "XYZ"]
                emit(t, *xyz)
    return rows, stats


def _exp_spin_textures(cfg: ExperimentConfig):
    results = _per_phi(cfg, _textures_task, cfg.phis)
    rows = [row for r in results for row in r[0]]
    return {"spin_textures.csv": (SCHEMAS["spin_textures"], rows)}, _merge_stats(r[1] for r in results)


def _field_task(cfg: ExperimentConfig, phi_prime: float):
    p = cfg.walk_params()
    cb = _center_bond(p.n_sites)
    dists, ents, stats = _state_series(
        cfg, p, phi_prime, lambda obs, t: (obs["P"], obs["S"][cb] if len(obs["S"]) else 0.0)
    )
    sites = p.sites
    rows = [[phi_prime, t, variance(d, sites), s] for t, d, s in zip(cfg.times, dists, ents)]
    return rows, stats


def _exp_field_perturbation(cfg: ExperimentConfig):
    results = _per_phi(cfg, _field_task, cfg.phi_prime)
    rows = [row for r in results for row in r[0]]
    return {"field_perturbation.csv": (SCHEMAS["field_perturbation"], rows)}, _merge_stats(r[1] for r in results)


def _profile_task(cfg: ExperimentConfig, phi: float):
    p = cfg.walk_params(phi)
    dists, profiles, stats = _state_series(cfg, p, 0.0, lambda obs, t: (obs["P"], obs["S"]))
    rows = [
        [phi, t, b, s] for t, prof in zip(cfg.times, profiles) for b, s in enumerate(prof)
    ]
    return rows, stats


def _exp_entropy_profile(cfg: ExperimentConfig):
    results = _per_phi(cfg, _profile_task, cfg.phis)
    rows = [row for r in results for row in r[0]]
    return {"entropy_profile.csv": (SCHEMAS["entropy_profile"], rows)}, _merge_stats(r[1] for r in results)


def volume_law_times(steps: int, per_decade: int = 10) -> list[int]:
    """Logarithmically spaced integer times in ``[1, steps]``, plus 0 and ``steps``."""
    if steps <= 0:
        return [0]
    k = int(math.ceil(per_decade * math.log10(steps)))
    ts = {0, steps} | {int(round(10 ** (i / per_decade))) for i in range(k + 1)}
    return sorted(t for t in ts if t <= steps)


def _volume_task(cfg: ExperimentConfig, n: int):
    p = WalkParams(theta=cfg.theta, phi=cfg.phi, n_sites=n, steps=cfg.steps, coin_init=cfg.coin_init, periodic=True)
    times = set(cfg.snapshot_times) if cfg.snapshot_times else set(volume_law_times(cfg.steps))
    cut = n // 2 - 1
    st = exact_init(p)
    rows = []
    for t in range(max(times) + 1):
        if t > 0:
            st = exact_step(st, p)
        if t in times:
            s = exact_bond_entropy(st, cut)
            rows.append([n, t, s, s / n])
    return rows


def _exp_volume_law(cfg: ExperimentConfig):
    grid = cfg.n_sites_grid or (cfg.n_sites,)
    if cfg.workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(grid))) as pool:
            results = list(pool.map(_volume_task, [cfg] * len(grid), grid))
    else:
        results = [_volume_task(cfg, n) for n in grid]
    rows = [row for r in results for row in r]
    return {"volume_law.csv": (SCHEMAS["volume_law"], rows)}, EngineStats()


def _merge_stats(stats: Iterable[EngineStats]) -> EngineStats:
    out = EngineStats()
    for s in stats:
        out.discarded_weight = max(out.discarded_weight, s.discarded_weight)
        out.max_bond = max(out.max_bond, s.max_bond)
    return out


_EXPERIMENTS = {
    "distribution": _exp_distribution,
    "variance_series": _exp_variance_series,
    "ipr_scan": _exp_ipr_scan,
    "spectrum": _exp_spectrum,
    "entropy_series": _exp_entropy_series,
    "spin_textures": _exp_spin_textures,
    "field_perturbation": _exp_field_perturbation,
    "entropy_profile": _exp_entropy_profile,
    "volume_law": _exp_volume_law,
}


# ---------------------------------------------------------------- orchestration


@dataclass
class RunManifest:
    config: dict[str, Any]
    seed: int
    version: str
    wall_time: float
    discarded_weight: float
    max_bond: int
    outputs: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV) or ".")


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """Run the configured experiment and write its CSV files and manifest.

    Returns the written paths, manifest last.  If anything fails, files
    written by this call are deleted before the error propagates.
    """
    out_dir = resolve_output_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    start = time.perf_counter()
    try:
        tables, stats = _EXPERIMENTS[cfg.experiment](cfg)
        for name, (schema, rows) in tables.items():
            written.append(export_csv(rows, schema, out_dir / name))
        manifest = RunManifest(
            config=cfg.to_dict(),
            seed=cfg.seed,
            version=__version__,
            wall_time=time.perf_counter() - start,
            discarded_weight=stats.discarded_weight,
            max_bond=stats.max_bond,
            outputs=[p.name for p in written],
        )
        mpath = out_dir / "manifest.json"
        manifest.write(mpath)
        written.append(mpath)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


# ---------------------------------------------------------------- command line


_SUBCOMMANDS = {
    "walk": ("sector", "distribution"),
    "mps": ("mps", "entropy_series"),
    "exact": ("exact", "distribution"),
    "spectrum": ("sector", "spectrum"),
    "field": ("mps", "field_perturbation"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dflwalk", description="Quantum walk in a spin-chain environment.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (engine, experiment) in _SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=f"engine={engine}, default experiment={experiment}")
        sp.add_argument("--config", type=Path, help="YAML config file")
        sp.add_argument("--experiment", choices=sorted(EXPERIMENTS))
        sp.add_argument("--phi", nargs="+", help="coupling(s); accepts forms like 3pi/8")
        sp.add_argument("--phi-prime", nargs="+", help="field strength(s)")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--n-sites", type=int)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or cwd)")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    engine, experiment = _SUBCOMMANDS[args.command]
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    base = yaml.safe_load(text) if text.strip() else {}
    overrides: dict[str, Any] = {}
    if not isinstance(base, dict) or "engine" not in base:
        overrides["engine"] = engine
    if args.experiment:
        overrides["experiment"] = args.experiment
    elif not isinstance(base, dict) or "experiment" not in base:
        overrides["experiment"] = experiment
    if args.phi:
        if len(args.phi) == 1:
            overrides["phi"] = args.phi[0]
            overrides["phi_grid"] = []
        else:
            overrides["phi_grid"] = list(args.phi)
    if args.phi_prime:
        overrides["phi_prime"] = list(args.phi_prime)
    overrides.update(
        steps=args.steps, n_sites=args.n_sites, n_samples=args.samples, seed=args.seed,
        workers=args.workers, output_dir=args.out,
    )
    return parse_config(text, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        paths = run_experiment(cfg)
    except (DFLWalkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
