"""Experiment pipelines: oracle verification, ground-state spectra, gap scans,
variational fits, quenches and scaling re-analysis.

Every pipeline writes a ``metadata.json`` header plus CSV tables into the
output directory and returns an in-memory result object.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, geometry_node
from .entanglement import (
    CUTOFF,
    GapScan,
    closing_window,
    critical_coupling,
    entanglement_gap,
    reduce_to_A,
    spectrum_of_state,
    von_neumann_entropy,
)
from .lattice import Kind, LatticeGeometry, verify_canonical_map
from .spectra import (
    DENSE_LIMIT,
    BudgetExceeded,
    NonConvergence,
    StateVector,
    ThermalModel,
    check_budget,
    eigenstate_near,
    estimate_memory,
    evolve,
    ground_state,
    match_beta,
)
from .stats import MEAN_RATIO, bhattacharyya, gap_ratio_stats, rmt_reference, scaling_fit, ScalingGrid
from .systems import CutSystem, build_system, spectrum_equivalence
from .variational import ansatz_for_system, fit, spectrum_match

log = logging.getLogger(__name__)


class VerificationFailed(RuntimeError):
    """An oracle check reported violations."""


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------
def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


class RunOutput:
    """Output directory with a JSON metadata header and self-describing CSVs."""

    def __init__(self, directory: str | Path | None, config: RunConfig, command: str):
        self.dir = Path(directory) if directory is not None else None
        self.config = config
        self.command = command
        self.files: list[str] = []
        self.summary: dict = {}
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    @property
    def stamp(self) -> str:
        return f"# z2ent {__version__} command={self.command} config={self.config.digest()} seed={self.config.seed}"

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path | None:
        if self.dir is None:
            return None
        path = self.dir / name
        with path.open("w", newline="") as fh:
            fh.write(self.stamp + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.files.append(name)
        return path

    def finish(self, summary: dict) -> dict:
        self.summary = summary
        meta = {
            "command": self.command,
            "version": __version__,
            "config_hash": self.config.digest(),
            "seed": self.config.seed,
            "config": self.config.tree,
            "files": self.files,
            "summary": summary,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        if self.dir is not None:
            (self.dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))
        return meta


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, LatticeGeometry):
        return geometry_node(o)
    return str(o)


def preflight(dim: int, budget_gb: float, krylov_dim: int = 30, dense_a: int = 0, dense_full: int = 0):
    """Raise BudgetExceeded before allocating when the estimate exceeds the budget."""
    # the dense solve works in place on one real matrix plus O(n) workspace
    need = estimate_memory(dim, krylov_dim, dense_a) + dense_full * (dense_full + 64) * 8
    check_budget(need, budget_gb)
    return need


def _system(config: RunConfig, geometry: LatticeGeometry, eps: float, electric_limit: bool | None = None) -> CutSystem:
    w = config["winding"]
    el = config["electric_limit"] if electric_limit is None else electric_limit
    if geometry.kind is not Kind.CUT_TORUS:
        raise ConfigError("this pipeline needs a cut_torus geometry")
    return build_system(geometry, eps, el, vx=w.get("vx", 1), vy=w.get("vy", 1))


def _epsilons(config: RunConfig) -> list[float]:
    eps = config.get("epsilons") or [config["epsilon"]]
    return [float(e) for e in eps]


def _sector_str(s) -> str:
    return str(s) if s is not None else ""


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------
ORACLE_MAX_LINKS = 16


@dataclass
class VerifyReport:
    entries: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e["status"] != "fail" for e in self.entries)


def run_verify(config: RunConfig, out_dir=None, maps: dict | None = None) -> VerifyReport:
    """Canonical-map and spectrum-equivalence checks on all configured geometries.

    ``maps`` optionally replaces the substitution table of a geometry (keyed by
    ``geometry.describe()``); used for negative controls.
    """
    geoms = config.geometries()
    out = RunOutput(out_dir, config, "verify")
    rep = VerifyReport()
    eps = float(config["epsilon"])
    for g in geoms:
        name = g.describe()
        target = (maps or {}).get(name, g)
        cm = verify_canonical_map(target)
        rep.entries.append({"geometry": name, "check": "canonical_map", "status": "pass" if cm.ok else "fail",
                            "value": len(cm.violations), "detail": "; ".join(map(str, cm.violations[:5]))})
        if g.kind is Kind.OPEN_CYLINDER:
            rep.entries.append({"geometry": name, "check": "spectrum", "status": "skip", "value": None,
                                "detail": "no gauge-variant oracle for open geometries"})
            continue
        if 2 * g.nx * g.ny > ORACLE_MAX_LINKS:
            rep.entries.append({"geometry": name, "check": "spectrum", "status": "skip", "value": None,
                                "detail": f"{2 * g.nx * g.ny} links exceed the oracle limit {ORACLE_MAX_LINKS}"})
            continue
        for e in sorted({0.0, eps, 1.0}):
            try:
                eq = spectrum_equivalence(g, e)
            except BudgetExceeded as exc:
                rep.entries.append({"geometry": name, "check": f"spectrum eps={e}", "status": "skip",
                                    "value": None, "detail": str(exc)})
                continue
            rep.entries.append({"geometry": name, "check": f"spectrum eps={e}", "status": "pass" if eq.ok else "fail",
                                "value": eq.max_deviation, "detail": f"dims {eq.dim_original}/{eq.dim_dual}"})
    out.csv("verify.csv", ["geometry", "check", "status", "value", "detail"],
            ([e["geometry"], e["check"], e["status"], e["value"], e["detail"]] for e in rep.entries))
    out.finish({"ok": rep.ok, "n_checks": len(rep.entries),
                "n_fail": sum(e["status"] == "fail" for e in rep.entries)})
    return rep


# ---------------------------------------------------------------------------
# ground-state entanglement spectra and scans
# ---------------------------------------------------------------------------
@dataclass
class GroundRecord:
    epsilon: float
    energy: float
    entropy: float
    schmidt_rank: int
    gap: float
    band_size: int
    gap_flagged: bool
    spectrum: object = None


def _ground_records(config: RunConfig, geometry: LatticeGeometry, epsilons: Sequence[float]) -> list[GroundRecord]:
    cutoff = float(config["analysis.cutoff"])
    tol = float(config["analysis.ground_tol"])
    recs = []
    for e in epsilons:
        sysm = _system(config, geometry, e)
        preflight(sysm.space.dim, config["budget_gb"], config["analysis.krylov_dim"])
        energy, st = ground_state(sysm.op, tol=tol)
        es = spectrum_of_state(st, sysm.labels, cutoff)
        gap = entanglement_gap(es, 1)
        recs.append(GroundRecord(e, energy, von_neumann_entropy(es), es.schmidt_rank, gap.gap, gap.band_size,
                                 gap.flagged, es))
    return recs


def _write_spectra(out: RunOutput, name: str, key: str, recs, attr="spectrum"):
    rows = []
    for r in recs:
        es = getattr(r, attr)
        for n, (x, s) in enumerate(es.levels):
            rows.append([getattr(r, key), n, x, _sector_str(s)])
    out.csv(name, [key, "n", "xi", "sector"], rows)


def run_ground_es(config: RunConfig, out_dir=None) -> list[GroundRecord]:
    g = config.geometry()
    eps = [float(config["epsilon"])] if not config.tree.get("epsilons") else _epsilons(config)
    recs = _ground_records(config, g, eps)
    out = RunOutput(out_dir, config, "ground-es")
    out.csv("ground.csv", ["epsilon", "energy", "entropy", "entropy_bits", "schmidt_rank", "gap", "band_size", "gap_flagged"],
            ([r.epsilon, r.energy, r.entropy, r.entropy / math.log(2), r.schmidt_rank, r.gap, r.band_size, r.gap_flagged]
             for r in recs))
    _write_spectra(out, "spectra.csv", "epsilon", recs)
    out.finish({"geometry": g.describe(), "points": len(recs)})
    return recs


@dataclass
class ScanResult:
    scan: GapScan
    epsilon_c: float
    error: float
    window: tuple
    records: list


def run_scan(config: RunConfig, out_dir=None) -> ScanResult:
    g = config.geometry()
    eps = _epsilons(config)
    recs = _ground_records(config, g, eps)
    scan = GapScan([r.epsilon for r in recs], [r.gap for r in recs], [r.entropy for r in recs], g.describe())
    win = config["analysis.gap_window"]
    window = tuple(win) if win else closing_window(scan, int(config["analysis.gap_points"]))
    ec, err = critical_coupling(scan, window)
    out = RunOutput(out_dir, config, "scan")
    out.csv("scan.csv", ["epsilon", "gap", "entropy", "band_size", "gap_flagged"],
            ([r.epsilon, r.gap, r.entropy, r.band_size, r.gap_flagged] for r in recs))
    _write_spectra(out, "spectra.csv", "epsilon", recs)
    out.csv("critical.csv", ["geometry", "epsilon_c", "error", "window_lo", "window_hi"],
            [[g.describe(), ec, err, window[0], window[1]]])
    out.finish({"geometry": g.describe(), "epsilon_c": ec, "error": err, "window": list(window)})
    return ScanResult(scan, ec, err, window, recs)


# ---------------------------------------------------------------------------
# variational entanglement Hamiltonian
# ---------------------------------------------------------------------------
@dataclass
class EHFitRecord:
    epsilon: float
    result: object
    keys: list
    es_deviation: np.ndarray


def run_eh_fit(config: RunConfig, out_dir=None) -> list[EHFitRecord]:
    g = config.geometry()
    v = config["analysis.variational"]
    recs = []
    for e in _epsilons(config):
        sysm = _system(config, g, e)
        preflight(sysm.space.dim, config["budget_gb"], config["analysis.krylov_dim"])
        _, st = ground_state(sysm.op, tol=float(config["analysis.ground_tol"]))
        rho = reduce_to_A(st, labels=sysm.labels)
        keys: list = []
        ans = ansatz_for_system(sysm, v["include_boundary"], v["tie"], v["init"], keys)
        res = fit(rho, ans, v["gtol"], v["max_evaluations"])
        if not res.converged:
            log.warning("fit at eps=%g not converged: %s", e, res.message)
        dev = spectrum_match(rho, res.sigma, v["fraction"], float(config["analysis.cutoff"]))
        recs.append(EHFitRecord(e, res, keys, dev))
    out = RunOutput(out_dir, config, "eh-fit")
    out.csv("fits.csv", ["epsilon", "entropy_exact", "entropy_variational", "relative_entropy", "converged",
                         "gradient_norm", "evaluations", "es_max_relative_deviation"],
            ([r.epsilon, r.result.entropy_exact, r.result.entropy_variational, r.result.relative_entropy,
              r.result.converged, r.result.gradient_norm, r.result.n_evaluations, float(r.es_deviation.max())]
             for r in recs))
    out.csv("betas.csv", ["epsilon", "term", "beta"],
            ([r.epsilon, "/".join(map(str, k)), b] for r in recs for k, b in zip(r.keys, r.result.betas)))
    out.csv("trajectory.csv", ["epsilon", "iteration", "relative_entropy"],
            ([r.epsilon, i, f] for r in recs for i, f in r.result.trajectory))
    out.finish({"geometry": g.describe(), "points": len(recs),
                "all_converged": all(r.result.converged for r in recs)})
    return recs


# ---------------------------------------------------------------------------
# quench
# ---------------------------------------------------------------------------
@dataclass
class TimeSeriesRecord:
    time: float
    eps_t: float
    entropy: float
    electric: float
    magnetic: float
    bhattacharyya: float
    mean_ratio: float
    archive_offset: int
    schmidt_rank: int


@dataclass
class QuenchResult:
    records: list
    spectra: list  # (t, EntanglementSpectrum)
    beta: float
    beta_capped: bool
    thermal_entropy: float
    thermal_electric: float
    thermal_magnetic: float
    initial_energy: float
    initial_index: int | None
    pooled_ratio_mean: float
    pooled_ratios: np.ndarray
    geometry: LatticeGeometry
    krylov: dict


def _a_operator_blocks(sysm: CutSystem):
    """Dense A-side blocks of the summed electric and magnetic terms and their counts."""
    el = [t for t in sysm.a_terms() if t.kind == "electric"]
    mg = [t for t in sysm.a_terms() if t.kind == "magnetic"]

    def blocks(terms):
        if not terms:
            return None
        acc = None
        for t in terms:
            b = sysm.a_block_matrices(t.op)
            acc = b if acc is None else [x + y for x, y in zip(acc, b)]
        return acc

    return blocks(el), len(el), blocks(mg), len(mg)


def _block_trace(rho_blocks, op_blocks) -> float:
    if op_blocks is None:
        return float("nan")
    return float(sum(np.real(np.sum(r.T * o)) for r, o in zip(rho_blocks, op_blocks)))


def initial_state(config: RunConfig, geometry: LatticeGeometry, final: CutSystem) -> tuple[np.ndarray, int | None, dict]:
    """Electric product configuration or seeded mid-spectrum eigenstate."""
    q = config["quench"]
    eps_i, _ = config.quench_epsilons()
    seed = int(q.get("seed", config.seed))
    info = {"mode": q["mode"], "seed": seed}
    if q["mode"] == "electric_product":
        rng = np.random.default_rng(seed)
        k = int(rng.integers(final.space.dim))
        psi = np.zeros(final.space.dim, complex)
        psi[k] = 1.0
        info["basis_index"] = k
        return psi, None, info
    limit = math.isinf(eps_i)
    start = _system(config, geometry, 1.0 if limit else eps_i, electric_limit=limit)
    dim = start.space.dim
    if dim > 4 * DENSE_LIMIT:
        raise BudgetExceeded(f"random eigenstate needs dense diagonalization of dimension {dim}")
    preflight(dim, config["budget_gb"], dense_full=dim)
    e, st, k = eigenstate_near(start.op, {"seed": seed}, fraction=float(q["eigen_fraction"]))
    info.update({"eigen_index": k, "eigen_energy": e, "eigen_fraction": q["eigen_fraction"]})
    return st.amplitudes.astype(complex), k, info


def run_quench(config: RunConfig, out_dir=None) -> QuenchResult:
    g = config.geometry()
    eps_i, eps_f = config.quench_epsilons()
    times, eps_times = config.time_grid()
    a = config["analysis"]
    final = _system(config, g, eps_f, electric_limit=False)
    dense_a = max(b.shape[0] for b in final.space.blocks)
    preflight(final.space.dim, config["budget_gb"], a["krylov_dim"], dense_a)
    psi0, k0, init_info = initial_state(config, g, final)
    e0 = final.op.expectation(psi0)

    # thermal reference on A from the A-side Hamiltonian
    h_blocks = final.a_block_matrices(final.h_a())
    eig = [np.linalg.eigh(b) for b in h_blocks]
    energies = np.concatenate([w for w, _ in eig])
    el_blocks, n_el, mg_blocks, n_mg = _a_operator_blocks(final)
    cutoff = float(a["cutoff"])

    spectra = []
    raw = []

    def on_step(t, st: StateVector):
        es = spectrum_of_state(st, final.labels, cutoff)
        rho = reduce_to_A(st, labels=final.labels)
        el = -eps_f * _block_trace(rho.blocks, el_blocks) / max(n_el, 1)
        mg = -_block_trace(rho.blocks, mg_blocks) / max(n_mg, 1)
        spectra.append((t, es))
        raw.append((t, es, el, mg))
        return False

    evolve(final.op, StateVector(psi0, final.space), times, krylov_dim=a["krylov_dim"], tol=a["krylov_tol"],
           callback=on_step)
    stats = evolve.last_stats
    krylov = {"steps": stats.steps, "rejected": stats.rejected, "norm_drift": stats.max_norm_drift,
              "energy_drift": stats.energy_drift}

    # inverse temperature
    model = ThermalModel(np.sort(energies))
    if a["beta_mode"] == "entropy":
        late = [von_neumann_entropy(es) for t, es in spectra[-max(1, len(spectra) // 4):]]
        target = {"entropy": float(np.mean(late))}
    else:
        n_terms_a = sum(1 for _ in final.h_a())
        n_terms = sum(1 for _ in final.hamiltonian)
        target = {"energy": e0 * n_terms_a / n_terms}
    try:
        bm = match_beta(model, target)
        beta, capped = bm.beta, bm.capped
    except ValueError as exc:
        log.warning("beta matching failed: %s", exc)
        beta, capped = float("nan"), False
    if math.isfinite(beta):
        shift = energies.min()
        z = sum(np.exp(-beta * (x - shift)).sum() for x, _ in eig)
        th_blocks = [(v * (np.exp(-beta * (x - shift)) / z)) @ v.conj().T for x, v in eig]
        p_th = np.concatenate([np.exp(-beta * (x - shift)) / z for x, _ in eig])
        s_th = von_neumann_entropy(p_th)
        el_th = -eps_f * _block_trace(th_blocks, el_blocks) / max(n_el, 1)
        mg_th = -_block_trace(th_blocks, mg_blocks) / max(n_mg, 1)
    else:
        p_th, s_th, el_th, mg_th = None, float("nan"), float("nan"), float("nan")

    records, offset, pooled = [], 0, []
    for (t, es, el, mg), et in zip(raw, eps_times):
        p = es.probabilities()
        p = p / p.sum()
        bd = bhattacharyya(p, p_th) if p_th is not None else float("nan")
        rs = gap_ratio_stats(es, int(a["ratio_bins"]))
        if et >= 1.0:
            pooled.append(rs.ratios)
        mr = rs.mean if len(rs.ratios) else float("nan")
        records.append(TimeSeriesRecord(t, et, von_neumann_entropy(es), el, mg, bd, mr, offset, es.schmidt_rank))
        offset += es.schmidt_rank
    pooled_r = np.concatenate(pooled) if pooled else np.zeros(0)
    pooled_mean = float(pooled_r.mean()) if len(pooled_r) else float("nan")

    out = RunOutput(out_dir, config, "quench")
    out.csv("timeseries.csv", ["time", "eps_t", "entropy", "entropy_bits", "electric", "magnetic", "bhattacharyya",
                               "mean_ratio", "schmidt_rank", "archive_offset"],
            ([r.time, r.eps_t, r.entropy, r.entropy / math.log(2), r.electric, r.magnetic, r.bhattacharyya,
              r.mean_ratio, r.schmidt_rank, r.archive_offset] for r in records))
    out.csv("spectra.csv", ["time", "eps_t", "n", "xi", "sector"],
            ([t, et, n, x, _sector_str(s)] for (t, es), et in zip(spectra, eps_times)
             for n, (x, s) in enumerate(es.levels)))
    bins = int(a["ratio_bins"])
    dens, edges = np.histogram(pooled_r, bins=bins, range=(0, 1), density=True) if len(pooled_r) else (np.zeros(bins), np.linspace(0, 1, bins + 1))
    mids = 0.5 * (edges[1:] + edges[:-1])
    out.csv("ratio_histogram.csv", ["r", "density", "poisson", "goe", "gue"],
            ([m, d, *(float(rmt_reference(e, "r", m)) for e in ("Poisson", "GOE", "GUE"))] for m, d in zip(mids, dens)))
    out.finish({"geometry": g.describe(), "epsilon_initial": "infinity" if math.isinf(eps_i) else eps_i,
                "epsilon_final": eps_f, "initial": init_info, "initial_energy": e0, "beta": beta,
                "beta_capped": capped, "beta_target": target, "thermal_entropy": s_th,
                "thermal_electric": el_th, "thermal_magnetic": mg_th, "pooled_mean_ratio": pooled_mean,
                "reference_mean_ratio": MEAN_RATIO, "krylov": krylov, "dim": final.space.dim})
    return QuenchResult(records, spectra, beta, capped, s_th, el_th, mg_th, e0, k0, pooled_mean, pooled_r, g, krylov)


# ---------------------------------------------------------------------------
# scaling re-analysis
# ---------------------------------------------------------------------------
def read_archive(path: str | Path) -> list[tuple[float, np.ndarray]]:
    """``(eps_t, P sorted descending)`` per time from a quench spectra archive."""
    path = Path(path)
    if path.is_dir():
        path = path / "spectra.csv"
    if not path.exists():
        raise ConfigError(f"no spectra archive at {path}")
    data: dict[float, list] = {}
    with path.open() as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows)
        if "eps_t" not in header or "xi" not in header:
            raise ConfigError(f"{path} is not a quench spectra archive")
        it, ix = header.index("eps_t"), header.index("xi")
        for r in rows:
            data.setdefault(float(r[it]), []).append(float(r[ix]))
    return [(t, np.sort(np.exp(-np.asarray(x)))[::-1]) for t, x in sorted(data.items())]


def _match_time(avail: Sequence[float], t: float) -> float:
    best = min(avail, key=lambda x: abs(x - t))
    if abs(best - t) > 1e-6 * max(1.0, abs(t)):
        raise ConfigError(f"archive has no spectrum at eps*t = {t} (closest {best})")
    return best


def _grid(r) -> np.ndarray:
    lo, hi, step = r
    return np.round(np.arange(lo, hi + step * 1e-6, step), 10)


def run_scaling_fit(config: RunConfig, out_dir=None, spectra=None):
    s = config["analysis.scaling"]
    if spectra is None:
        if not s.get("archive"):
            raise ConfigError("analysis.scaling.archive is required for scaling-fit")
        spectra = read_archive(s["archive"])
    avail = [t for t, _ in spectra]
    t_ref = _match_time(avail, float(s["t_ref"]))
    tests = [_match_time(avail, float(t)) for t in s["t_tests"]]
    grid = ScalingGrid(_grid(s["alpha"]), _grid(s["beta"]), _grid(s["eps_t0"]))
    res = scaling_fit(spectra, t_ref, tests, tuple(s["window"]), 1.0, grid)
    out = RunOutput(out_dir, config, "scaling-fit")
    out.csv("scaling_fit.csv", ["parameter", "value", "error", "flagged", "grid_minimum"],
            [["alpha", res.alpha.value, res.alpha.error, res.alpha.flagged, res.best[0]],
             ["beta", res.beta.value, res.beta.error, res.beta.flagged, res.best[1]],
             ["eps_t0", res.t0.value, res.t0.error, res.t0.flagged, res.best[2]],
             ["chi2_min", res.chi2_min, None, None, None]])
    for name, ax in (("alpha", grid.alpha), ("beta", grid.beta), ("eps_t0", grid.eps_t0)):
        out.csv(f"marginal_{name}.csv", [name, "likelihood"], zip(ax, res.marginals[name]))
    out.finish({"alpha": asdict(res.alpha), "beta": asdict(res.beta), "eps_t0": asdict(res.t0),
                "chi2_min": res.chi2_min, "flags": res.flags})
    return res
