"""Experiment orchestration: simulate a configured scenario, run observers, export results."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .earth import DEG_PER_HOUR, MICRO_G
from .ekf import ekf_run, write_history_csv
from .errors import AlignmentError
from .observers import (
    AttitudeSolution,
    ObserverReport,
    initial_attitude_lsq,
    io_ncr_omega,
    io_nfvr_omega,
    multi_axis_solve,
    multiposition_solve,
    pair_residual,
    relative_static_residuals,
    replay_residual,
    segment_bias_candidates,
)
from .scenario import ImuRecord, ImuStream, SegmentKind, Truth, simulate, write_imu_csv
from .so3 import dcm_to_euler, rotation_angle, skew

SCHEMA_VERSION = 1
OUTPUT_ENV = "INSALIGN_OUTPUT_DIR"
UNIQUE_TOL = 1e-6  # relative to g or Omega


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else None
    return x


def dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, shortest round-trip floats, NaN as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _euler_deg(c) -> dict:
    roll, yaw, pitch = dcm_to_euler(np.asarray(c))
    return {"roll": float(np.degrees(roll)), "yaw": float(np.degrees(yaw)), "pitch": float(np.degrees(pitch))}


@dataclass
class RunSummary:
    """Everything a run reports; `sections` holds one entry per observer."""

    name: str
    seed: int
    truth: dict
    sections: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "truth": self.truth,
            "observers": self.sections,
            "residuals": self.residuals,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def output_directory(cfg: ExperimentConfig, override: Optional[os.PathLike] = None) -> Path:
    """Output folder for a config; `override`, then the environment variable, then the config."""
    root = override or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    return Path(root) / cfg.name


def simulate_config(cfg: ExperimentConfig, derivatives: Optional[str] = None):
    """Truth and IMU stream for a config, noise included."""
    n = cfg.noise
    return simulate(
        cfg.scenario,
        derivatives=cfg.derivatives if derivatives is None else derivatives,
        stencil_halfwidth=cfg.stencil_halfwidth,
        sigma_g=n.gyro_deg_h_rthz * DEG_PER_HOUR,
        sigma_a=n.accel_ug_rthz * MICRO_G,
        seed=n.seed,
    )


def _first_static_record(cfg: ExperimentConfig, stream: ImuStream, last: bool = False) -> Optional[ImuRecord]:
    runs = cfg.static_runs()
    if not runs:
        return None
    t0, t1 = runs[-1] if last else runs[0]
    i = int(np.searchsorted(stream.t, t1 - 0.5 * stream.dt)) - 1 if last else int(np.searchsorted(stream.t, t0))
    return stream.record(min(max(i, 0), len(stream) - 1))


def _static_residuals(rec: Optional[ImuRecord], bg, ba, earth) -> Optional[dict]:
    if rec is None:
        return None
    r9, r10, r11 = relative_static_residuals(rec, bg, ba, earth)
    return {"gyro_norm": r9, "accel_norm": r10, "dot_product": r11, "t": rec.t}


def _truth_dict(cfg: ExperimentConfig, truth: Truth) -> dict:
    s = cfg.scenario
    bg, ba = np.asarray(s.true_bg), np.asarray(s.true_ba)
    return {
        "bg": bg, "bg_deg_h": bg / DEG_PER_HOUR, "ba": ba, "ba_ug": ba / MICRO_G,
        "C_bn0": truth.C_bn[0], "euler0_deg": _euler_deg(truth.C_bn[0]),
        "C_bn_final": truth.C_bn[-1], "euler_final_deg": _euler_deg(truth.C_bn[-1]),
        "earth": {"lat": s.earth.lat, "h": s.earth.h, "omega": s.earth.omega, "g": s.earth.g},
        "separations": {
            "gyro_2_omega_sin_lat_deg_h": 2.0 * s.earth.omega * np.sin(s.earth.lat) / DEG_PER_HOUR,
            "gyro_2_omega_cos_lat_deg_h": 2.0 * s.earth.omega * np.cos(s.earth.lat) / DEG_PER_HOUR,
            "accel_2g": 2.0 * s.earth.g,
        },
    }


def _candidate_uniqueness(cands, earth) -> dict:
    da = np.abs(cands.ba_plus - cands.ba_minus) / earth.g
    dg = np.abs(cands.bg_plus - cands.bg_minus) / earth.omega
    return {"ba": (da < UNIQUE_TOL).tolist(), "bg": (dg < UNIQUE_TOL).tolist()}


def identifiable_components(axes, tol: float = 1e-9) -> list:
    """Bias components pinned down by rotations about `axes`.

    Each rotation constrains the bias across its axis only; a component is
    identifiable when the common null space of the stacked cross-product
    rows has no part along it.
    """
    a = np.vstack([skew(np.asarray(u) / np.linalg.norm(u)) for u in axes])
    _, s, vt = np.linalg.svd(a)
    null = vt[np.sum(s > tol * s[0]):]
    return [bool(np.all(np.abs(null[:, i]) < tol)) for i in range(3)] if len(null) else [True] * 3


def _solution_errors(sols, cfg, truth: Truth) -> list:
    bg_t, ba_t = np.asarray(cfg.scenario.true_bg), np.asarray(cfg.scenario.true_ba)
    e = cfg.earth
    out = []
    for s in sols:
        d = {"ba": float(np.linalg.norm(s.ba - ba_t)), "bg_rel_omega": float(np.linalg.norm(s.bg - bg_t) / e.omega)}
        if s.C_bn0 is not None:
            d["attitude_rad"] = rotation_angle(s.C_bn0, truth.C_bn[0])
        out.append(d)
    return out


def _attitudes(cfg, stream, pairs, diagnostics) -> list:
    sols = []
    for k, (ba, bg) in enumerate(pairs):
        c0 = initial_attitude_lsq(stream, bg, ba, cfg.earth)
        sols.append(AttitudeSolution(ba=ba, bg=bg, C_bn0=c0))
        diagnostics[f"replay_{k}"] = replay_residual(stream, c0, bg, ba, cfg.earth)
    return sols


def _single_axis_section(cfg, stream, truth, kind: SegmentKind, rate_fn) -> dict:
    e = cfg.earth
    out = []
    for i, seg_def in enumerate(cfg.scenario.segments):
        if seg_def.kind is not kind:
            continue
        seg = stream.segment_samples(i)
        omega = rate_fn(seg)
        rows = omega.omega if hasattr(omega, "omega") else omega
        cands = segment_bias_candidates(rows, seg, e)
        diag = {}
        sols = _attitudes(cfg, stream, cands.feasible_pairs, diag)
        rec = _first_static_record(cfg, stream)
        mid = seg.take(seg.derivative_mask)
        m = len(mid) // 2
        w_mid = rows if np.ndim(rows) == 1 else rows[m]
        for k, (ba, bg) in enumerate(cands.feasible_pairs):
            diag[f"pair_latitude_{k}"] = pair_residual(ba, bg, w_mid, mid.record(m), e) / (e.g * e.omega)
            if rec is not None:
                r = relative_static_residuals(rec, bg, ba, e)
                diag.update({f"gyro_norm_{k}": r[0], f"accel_norm_{k}": r[1], f"dot_product_{k}": r[2]})
        report = ObserverReport(omega_nb_hat=rows, candidates=cands, attitude_solutions=sols, diagnostics=diag)
        w_true = truth.omega_nb_b[stream.segment == i][seg.derivative_mask]
        entry = {
            "segment": i, "t_start": seg_def.t_start, "t_end": seg_def.t_end,
            "report": report.to_dict(),
            "unique": _candidate_uniqueness(cands, e),
            "omega_error": float(np.max(np.linalg.norm(np.atleast_2d(rows) - w_true, axis=1))),
            "solution_errors": _solution_errors(sols, cfg, truth),
            "separation_a": cands.separation_a,
            "separation_g_deg_h": cands.separation_g / DEG_PER_HOUR,
        }
        if hasattr(omega, "axis"):
            entry["axis"] = omega.axis
        out.append(entry)
    return {"segments": out}


def _multi_axis_section(cfg, stream, truth) -> dict:
    segs, axes = [], []
    for i, seg_def in enumerate(cfg.scenario.segments):
        if not seg_def.rotating:
            continue
        seg = stream.segment_samples(i)
        if seg_def.kind is SegmentKind.CONST_ROTATION:
            w = io_ncr_omega(seg)
        else:
            w = io_nfvr_omega(seg).omega
        segs.append((w, seg))
        axes.append(w if np.ndim(w) == 1 else np.mean(w, axis=0))
    res = multi_axis_solve(segs, stream, cfg.earth)
    sol = AttitudeSolution(ba=res.ba, bg=res.bg, C_bn0=res.C_bn0)
    diag = {"replay_0": replay_residual(stream, res.C_bn0, res.bg, res.ba, cfg.earth)}
    r = _static_residuals(_first_static_record(cfg, stream), res.bg, res.ba, cfg.earth)
    if r is not None:
        diag.update({"gyro_norm_0": r["gyro_norm"], "accel_norm_0": r["accel_norm"], "dot_product_0": r["dot_product"]})
    ident = identifiable_components(axes)
    report = ObserverReport(omega_nb_hat=np.array(axes), attitude_solutions=[sol], diagnostics=diag)
    return {
        "report": report.to_dict(),
        "unique": {"ba": ident, "bg": ident},
        "solution_errors": _solution_errors([sol], cfg, truth),
    }


def _multiposition_section(cfg, stream, truth) -> dict:
    postures = []
    for t0, t1 in cfg.static_runs():
        w = stream.window(t0, t1)
        postures.append((w.gyro.mean(axis=0), w.accel.mean(axis=0)))
    res = multiposition_solve(postures, cfg.earth)
    sol = AttitudeSolution(ba=res.ba, bg=res.bg, C_bn0=res.C_bn0)
    t_first = cfg.static_runs()[0][0]
    c_true = truth.C_bn[int(np.searchsorted(truth.t, t_first))]
    errors = _solution_errors([AttitudeSolution(res.ba, res.bg, None)], cfg, truth)[0]
    errors["attitude_rad"] = rotation_angle(res.C_bn0, c_true)
    report = ObserverReport(omega_nb_hat=np.zeros(3), attitude_solutions=[sol],
                            diagnostics={"n_postures": len(postures)})
    return {"report": report.to_dict(), "unique": {"ba": [True] * 3, "bg": [True] * 3}, "solution_errors": [errors]}


def ekf_terminal(cfg: ExperimentConfig, truth: Truth, stream: ImuStream, result, i: int = 0) -> dict:
    """Terminal EKF state of batch member `i` with errors against truth."""
    e = cfg.earth
    st = result.final
    bg_t, ba_t = np.asarray(cfg.scenario.true_bg), np.asarray(cfg.scenario.true_ba)
    c, bg, ba = st.C_bn[i], st.bg_hat[i], st.ba_hat[i]
    dbg, dba = bg - bg_t, ba - ba_t
    return {
        "C_bn": c, "euler_deg": _euler_deg(c),
        "bg": bg, "bg_deg_h": bg / DEG_PER_HOUR, "ba": ba, "ba_ug": ba / MICRO_G,
        "v_n": st.v_n[i],
        "sigma": np.sqrt(np.clip(np.diagonal(result.P[i]), 0.0, None)),
        "attitude_error_deg": float(np.degrees(rotation_angle(c, truth.C_bn[-1]))),
        "bg_error_deg_h": dbg / DEG_PER_HOUR, "ba_error": dba,
        "bg_error_rel_2omega_sin_lat": float(np.linalg.norm(dbg) / (2 * e.omega * np.sin(e.lat))),
        "ba_error_rel_2g": float(np.linalg.norm(dba) / (2 * e.g)),
        "max_innovation": float(result.max_innovation[i]),
        "initial_euler_deg": _euler_deg(result.initial_C_bn[i]),
        "manifold_residuals": _static_residuals(_first_static_record(cfg, stream, last=True), bg, ba, e),
    }


def _ekf_section(cfg, stream, truth, out_dir: Optional[Path], files: list) -> dict:
    res = ekf_run(stream, cfg.ekf, cfg.earth, seeds=[cfg.seed])
    if out_dir is not None and "csv" in cfg.formats:
        p = out_dir / "ekf_history.csv"
        write_history_csv(res.history, p)
        files.append(p.name)
    return {"start_time": res.start_time, "terminal": ekf_terminal(cfg, truth, stream, res)}


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[os.PathLike] = None, write: bool = True) -> RunSummary:
    """Simulate the scenario and run every requested observer.

    Files go to :func:`output_directory` unless `write` is false. Degenerate
    geometry surfaces as the module's exception.
    """
    truth, stream = simulate_config(cfg)
    d = output_directory(cfg, out_dir) if write else None
    if d is not None:
        d.mkdir(parents=True, exist_ok=True)
    summary = RunSummary(name=cfg.name, seed=cfg.seed, truth=_truth_dict(cfg, truth))
    files = summary.files
    runners = {
        "ideal_ncr": lambda: _single_axis_section(cfg, stream, truth, SegmentKind.CONST_ROTATION, io_ncr_omega),
        "ideal_nfvr": lambda: _single_axis_section(cfg, stream, truth, SegmentKind.VARYING_RATE, io_nfvr_omega),
        "multi_axis": lambda: _multi_axis_section(cfg, stream, truth),
        "multiposition": lambda: _multiposition_section(cfg, stream, truth),
        "ekf": lambda: _ekf_section(cfg, stream, truth, d, files),
    }
    for name in cfg.observers:
        summary.sections[name] = runners[name]()
    summary.residuals = _residual_table(summary)
    if d is not None and "json" in cfg.formats:
        (d / "summary.json").write_text(summary.to_json())
        files.append("summary.json")
    return summary


def _residual_table(summary: RunSummary) -> dict:
    """Static-constraint residuals of every bias estimate, keyed by observer."""
    out = {}
    for name, sec in summary.sections.items():
        if name == "ekf":
            out[name] = sec["terminal"]["manifold_residuals"]
            continue
        reports = [s["report"] for s in sec.get("segments", [])] or [sec["report"]]
        rows = []
        for rep in reports:
            dg = rep["diagnostics"]
            k = 0
            while f"gyro_norm_{k}" in dg:
                rows.append({c: dg[f"{c}_{k}"] for c in ("gyro_norm", "accel_norm", "dot_product")})
                k += 1
        out[name] = rows
    return out


# Monte Carlo

MC_COLUMNS = (["seed", "ok"] + ["roll_deg", "yaw_deg", "pitch_deg"]
              + ["bgx_deg_h", "bgy_deg_h", "bgz_deg_h", "bax", "bay", "baz"] + ["gyro_norm", "accel_norm", "dot_product"])


def _mc_batch(args):
    stream, settings, earth, seeds = args
    try:
        res = ekf_run(stream, settings, earth, seeds=seeds, record_history=False)
    except AlignmentError as exc:
        return seeds, None, f"{type(exc).__name__}: {exc}"
    return seeds, (res.final.C_bn, res.final.bg_hat, res.final.ba_hat), None


def monte_carlo(cfg: ExperimentConfig, out_dir: Optional[os.PathLike] = None, write: bool = True,
                runs: Optional[int] = None, workers: int = 1) -> dict:
    """Seeded EKF repetitions (seed ``base_seed + i``) with manifold statistics.

    Runs are grouped into batches that may go to separate processes; results
    are assembled in seed order, so output does not depend on `workers`.
    A batch that raises is recorded as failed and the study continues.
    """
    mc = cfg.monte_carlo
    if mc is None:
        raise ValueError("config has no monte_carlo block")
    n = mc.runs if runs is None else runs
    truth, stream = simulate_config(cfg, derivatives="none")
    seeds = [mc.base_seed + i for i in range(n)]
    batches = [(stream, cfg.ekf, cfg.earth, seeds[i:i + mc.batch_size]) for i in range(0, n, mc.batch_size)]
    if workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_mc_batch, batches))
    else:
        results = [_mc_batch(b) for b in batches]

    rec = _first_static_record(cfg, stream, last=True)
    e = cfg.earth
    rows, failures = [], []
    for batch_seeds, out, err in results:
        if out is None:
            failures.extend({"seed": s, "error": err} for s in batch_seeds)
            rows.extend([s, False] + [float("nan")] * (len(MC_COLUMNS) - 2) for s in batch_seeds)
            continue
        c, bg, ba = out
        for j, s in enumerate(batch_seeds):
            ok = bool(np.all(np.isfinite(c[j])) and np.all(np.isfinite(bg[j])) and np.all(np.isfinite(ba[j])))
            eul = _euler_deg(c[j]) if ok else {"roll": np.nan, "yaw": np.nan, "pitch": np.nan}
            res = relative_static_residuals(rec, bg[j], ba[j], e) if (ok and rec is not None) else (np.nan,) * 3
            if not ok:
                failures.append({"seed": s, "error": "non-finite estimate"})
            rows.append([s, ok, eul["roll"], eul["yaw"], eul["pitch"], *(bg[j] / DEG_PER_HOUR), *ba[j], *res])
    table = np.array([r[2:] for r in rows], dtype=float)
    ok = np.array([r[1] for r in rows], dtype=bool)
    stats = {}
    for k, col in enumerate(("gyro_norm", "accel_norm", "dot_product")):
        v = np.abs(table[ok, 8 + k])
        stats[col] = ({"p50": np.percentile(v, 50), "p95": np.percentile(v, 95), "max": v.max()}
                      if v.size else {"p50": None, "p95": None, "max": None})
    good = table[ok]
    agg = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "runs": n,
        "base_seed": mc.base_seed,
        "n_ok": int(ok.sum()),
        "failures": failures,
        "residual_stats": stats,
        "bg_deg_h_mean": good[:, 3:6].mean(axis=0) if len(good) else None,
        "bg_deg_h_std": good[:, 3:6].std(axis=0) if len(good) else None,
        "ba_mean": good[:, 6:9].mean(axis=0) if len(good) else None,
        "ba_std": good[:, 6:9].std(axis=0) if len(good) else None,
        "truth": _truth_dict(cfg, truth),
    }
    if write:
        d = output_directory(cfg, out_dir)
        d.mkdir(parents=True, exist_ok=True)
        if "csv" in cfg.formats:
            with open(d / "montecarlo_runs.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(MC_COLUMNS)
                for r in rows:
                    w.writerow([r[0], int(r[1])] + [repr(float(x)) for x in r[2:]])
        if "json" in cfg.formats:
            (d / "montecarlo_summary.json").write_text(dumps(agg))
    agg["rows"] = rows
    return agg


def dump_imu(cfg: ExperimentConfig, path) -> Path:
    """Write the configured IMU stream, derivatives included when enabled, as CSV."""
    _, stream = simulate_config(cfg)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    write_imu_csv(stream, p)
    return p
