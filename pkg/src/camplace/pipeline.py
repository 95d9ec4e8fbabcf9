"""Staged pipeline: scene -> grid -> targets -> candidates -> visibility -> solutions.

Every stage writes its artifact into the output directory together with the
provenance digests of its inputs, and reuses an existing artifact when those
digests match.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from camplace import scenes
from camplace.camera import CameraIntrinsics, CandidateSet, generate_candidates
from camplace.errors import ConfigError, ParseError, ProvenanceError
from camplace.geometry import (
    DEFAULT_GAMMA_MAX, DEFAULT_MAX_VOXELS, DEFAULT_VOXEL_SIZE, CoverageTarget, VoxelGrid,
    build_free_space_targets, label_shelf_targets, load_grid, load_point_cloud,
    rasterize_scene, save_grid, scene_shelf_boxes, voxelize,
)
from camplace.objective import coverage_counts, coverage_gap, deficit_cost, nontriangulatable_fraction
from camplace.solvers import METHODS, INFEASIBLE, SolverConfig, SolverReport, build_mip, export_lp, solve
from camplace.visibility import RaycastConfig, VisibilityMatrix, build_matrix, prune_blocked

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "scene": None,
    "voxel_size": DEFAULT_VOXEL_SIZE,
    "max_voxels": DEFAULT_MAX_VOXELS,
    "targets": {
        "free_space": {"heights": [0.5, 1.5], "gamma": 3},
        "shelves": None,
        "max_incidence_deg": 60.0,
        "gamma_max": DEFAULT_GAMMA_MAX,
    },
    "camera": CameraIntrinsics().to_json(),
    "candidates": {
        "spacing": 1.0,
        "yaw_step_deg": 30.0,
        "pitch_values_deg": [30.0, 45.0, 60.0],
        "mount_height": None,
        "lattice_origin": None,
    },
    "raycast": {"pixel_stride": None},
    "solver": {
        "methods": ["proposed-mip", "proposed-greedy", "greedy-binary", "zhao-mip"],
        "budgets": [20],
        "time_budget": 6000.0,
        "node_limit": None,
        "seed": 0,
    },
    "threads": 1,
    "out": "camplace-out",
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Read a JSON or TOML config and layer it over the defaults."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text()
        try:
            if path.suffix.lower() == ".toml":
                try:
                    import tomllib
                except ModuleNotFoundError:  # Python < 3.11
                    import tomli as tomllib
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        cfg = _merge(cfg, data)
        base_dir = path.parent
    if overrides:
        cfg = _merge(cfg, overrides)
    cfg["_base_dir"] = str(base_dir)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    size = cfg.get("voxel_size")
    if not isinstance(size, (int, float)) or not size > 0:
        raise ConfigError(f"voxel_size must be positive, got {size}")
    scene = cfg.get("scene")
    if not isinstance(scene, dict) or not any(k in scene for k in ("synthetic", "point_cloud", "grid")):
        raise ConfigError("scene must name 'synthetic', 'point_cloud' or 'grid'")
    for key in ("synthetic", "point_cloud", "grid"):
        ref = scene.get(key)
        if isinstance(ref, str) and ref not in _BUILTIN_SCENES:
            p = _resolve(cfg, ref)
            if not p.exists():
                raise ConfigError(f"scene {key} path {p} does not exist")
    t = cfg["targets"]
    if not t.get("free_space") and not t.get("shelves"):
        raise ConfigError("at least one target spec (free_space or shelves) is required")
    CameraIntrinsics(**cfg["camera"])
    s = cfg["solver"]
    for m in s["methods"]:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    for b in s["budgets"]:
        if int(b) != b or b < 1:
            raise ConfigError(f"budgets must be positive integers, got {b}")
    if not s["time_budget"] > 0:
        raise ConfigError("time_budget must be positive")
    RaycastConfig(cfg["raycast"].get("pixel_stride"), t.get("max_incidence_deg"))


_BUILTIN_SCENES = {"store": scenes.store_scene, "shoebox": scenes.shoebox_scene}


def _resolve(cfg, ref) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else Path(cfg.get("_base_dir", ".")) / p


def _sha(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode() if isinstance(p, str) else p)
        h.update(b"\x00")
    return h.hexdigest()


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None


@dataclass
class Stack:
    """Artifacts of one pipeline run, with their provenance digests."""

    cfg: dict
    out: Path
    scene: dict | None
    grid: VoxelGrid
    targets: CoverageTarget
    candidates: CandidateSet
    V: VisibilityMatrix
    chain: dict


class Pipeline:
    def __init__(self, cfg: dict, out=None):
        self.cfg = cfg
        self.out = Path(out or cfg.get("out") or "camplace-out")
        self.out.mkdir(parents=True, exist_ok=True)
        self.chain: dict[str, str] = {}
        self._scene = None

    # -- stage: ingest --------------------------------------------------
    def scene(self) -> dict | None:
        if self._scene is None:
            spec = self.cfg["scene"]
            ref = spec.get("synthetic")
            if ref is None:
                return None
            if isinstance(ref, dict):
                self._scene = ref
            elif ref in _BUILTIN_SCENES:
                self._scene = _BUILTIN_SCENES[ref]()
            else:
                self._scene = _read_json(_resolve(self.cfg, ref))
        return self._scene

    def _scene_digest(self) -> str:
        spec = self.cfg["scene"]
        if "synthetic" in spec:
            body = _canon(self.scene())
        elif "point_cloud" in spec:
            body = hashlib.sha256(_resolve(self.cfg, spec["point_cloud"]).read_bytes()).hexdigest()
            body += _canon({k: spec.get(k) for k in ("format", "min_points")})
        else:
            body = hashlib.sha256(_resolve(self.cfg, spec["grid"]).read_bytes()).hexdigest()
        return _sha("scene", body, repr(float(self.cfg["voxel_size"])))

    def ingest(self) -> VoxelGrid:
        scene_digest = self._scene_digest()
        self.chain["scene"] = scene_digest
        gpath, spath = self.out / "grid.vgrid", self.out / "grid.json"
        if gpath.exists() and spath.exists():
            summary = _read_json(spath)
            if summary.get("provenance", {}).get("scene") == scene_digest:
                grid = load_grid(gpath)
                if grid.digest() == summary.get("digest"):
                    log.info("ingest: reusing %s", gpath)
                    self.chain["grid"] = grid.digest()
                    return grid
        spec = self.cfg["scene"]
        size = float(self.cfg["voxel_size"])
        cap = int(self.cfg.get("max_voxels", DEFAULT_MAX_VOXELS))
        if "synthetic" in spec:
            grid = rasterize_scene(self.scene(), size, cap)
        elif "point_cloud" in spec:
            cloud = load_point_cloud(_resolve(self.cfg, spec["point_cloud"]), spec.get("format"))
            grid = voxelize(cloud, size, int(spec.get("min_points", 1)), cap)
        else:
            grid = load_grid(_resolve(self.cfg, spec["grid"]))
        save_grid(grid, gpath)
        self.chain["grid"] = grid.digest()
        write_json(spath, {
            "dims": list(grid.dims), "voxel_size": grid.voxel_size,
            "origin": [float(v) for v in grid.origin],
            "occupied_count": grid.occupied_count, "digest": grid.digest(),
            "provenance": dict(self.chain),
        })
        log.info("ingest: grid %s, %d occupied", "x".join(map(str, grid.dims)), grid.occupied_count)
        return grid

    # -- stage: targets --------------------------------------------------
    def targets(self, grid: VoxelGrid) -> CoverageTarget:
        t = self.cfg["targets"]
        gmax = int(t.get("gamma_max", DEFAULT_GAMMA_MAX))
        parts = []
        fs = t.get("free_space")
        if fs:
            parts.append(build_free_space_targets(grid, fs["heights"], int(fs["gamma"]), gmax))
        sh = t.get("shelves")
        if sh:
            if sh.get("boxes") is not None:
                boxes = [(b["min"], b["max"]) for b in sh["boxes"]]
            elif self.scene() is not None:
                boxes = scene_shelf_boxes(self.scene())
            else:
                raise ConfigError("shelf targets need 'boxes' when the scene is not synthetic")
            parts.append(label_shelf_targets(grid, boxes, int(sh["gamma"]), gmax))
        targets = CoverageTarget.merge(parts)
        self.chain["targets"] = targets.digest()
        write_json(self.out / "targets.json", {**targets.to_json(), "provenance": dict(self.chain)})
        return targets

    # -- stage: candidates -----------------------------------------------
    def candidates(self, grid: VoxelGrid) -> CandidateSet:
        c = self.cfg["candidates"]
        intr = CameraIntrinsics(**self.cfg["camera"])
        origin = c.get("lattice_origin")
        if origin is None and self.scene() is not None:
            origin = self.scene().get("lattice_origin")
        cands = generate_candidates(
            grid, float(c["spacing"]), c.get("mount_height"), float(c["yaw_step_deg"]),
            c["pitch_values_deg"], intr, origin,
        )
        self.chain["candidates"] = cands.digest()
        write_json(self.out / "candidates.json", {**cands.to_json(), "provenance": dict(self.chain)})
        log.info("candidates: %d poses at %d locations", cands.n_g, cands.n_l)
        return cands

    # -- stage: visibility -----------------------------------------------
    def raycast_config(self) -> RaycastConfig:
        return RaycastConfig(self.cfg["raycast"].get("pixel_stride"),
                             self.cfg["targets"].get("max_incidence_deg"))

    def visibility(self, grid, targets, cands):
        from camplace.visibility import provenance_of
        rc = self.raycast_config()
        raw_prov = provenance_of(grid, targets, cands, rc)
        vpath, ppath, meta = self.out / "visibility.cpvm", self.out / "candidates_pruned.json", \
            self.out / "visibility.json"
        if vpath.exists() and ppath.exists() and meta.exists():
            m = _read_json(meta)
            if m.get("raw_provenance") == raw_prov:
                V = VisibilityMatrix.load(vpath)
                pruned = CandidateSet.from_json(_read_json(ppath))
                if V.provenance == m.get("provenance") and pruned.n_g == V.n_g:
                    log.info("visibility: reusing %s", vpath)
                    self.chain["visibility"] = V.provenance
                    return pruned, V
        t0 = time.perf_counter()
        V = build_matrix(grid, targets, cands, rc, threads=int(self.cfg.get("threads", 1)))
        pruned, Vp = prune_blocked(cands, V)
        self._timing("visibility", time.perf_counter() - t0, n_g=cands.n_g)
        self.chain["visibility"] = Vp.provenance
        Vp.save(vpath)
        write_json(ppath, {**pruned.to_json(), "provenance": dict(self.chain)})
        resolved = rc.resolve(cands.intrinsics, grid.voxel_size)
        write_json(meta, {
            "n_g": Vp.n_g, "n_p": Vp.n_p, "n_g_before_pruning": V.n_g,
            "pixel_stride": resolved.pixel_stride, "max_range": resolved.max_range,
            "max_incidence_deg": resolved.max_incidence_deg,
            "raw_provenance": raw_prov, "provenance": Vp.provenance, "chain": dict(self.chain),
        })
        log.info("visibility: %d of %d candidates kept, %d targets", Vp.n_g, V.n_g, Vp.n_p)
        return pruned, Vp

    def build(self) -> Stack:
        grid = self.ingest()
        targets = self.targets(grid)
        cands = self.candidates(grid)
        pruned, V = self.visibility(grid, targets, cands)
        return Stack(self.cfg, self.out, self.scene(), grid, targets, pruned, V, dict(self.chain))

    def _timing(self, stage, seconds, **extra):
        with open(self.out / "timing.jsonl", "a") as fh:
            fh.write(json.dumps({"stage": stage, "elapsed_s": round(seconds, 6), **extra},
                                sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# metrics and solutions


def compute_metrics(stack: Stack, chosen, counts_path: str | None = None) -> dict:
    """Metrics recomputed from the view matrix, pooled and per target region."""
    rows, gamma = stack.V.rows, stack.targets.gamma
    out = {
        "deficit_cost": deficit_cost(rows, chosen, gamma),
        "coverage_gap": coverage_gap(rows, chosen, gamma) if np.any(gamma) else None,
        "nontriangulatable_fraction": nontriangulatable_fraction(rows, chosen) if rows.shape[1] else None,
        "per_voxel_counts_path": counts_path,
        "regions": {},
    }
    for label in sorted(set(str(s) for s in stack.targets.region_label)):
        m = stack.targets.mask(label)
        sub, g = rows[:, m], gamma[m]
        out["regions"][label] = {
            "n_targets": int(m.sum()),
            "deficit_cost": deficit_cost(sub, chosen, g),
            "coverage_gap": coverage_gap(sub, chosen, g) if np.any(g) else None,
            "nontriangulatable_fraction": nontriangulatable_fraction(sub, chosen),
        }
    return out


def solution_json(stack: Stack, report: SolverReport, budget: int, metrics: dict) -> dict:
    idx = report.selection.indices
    return {
        "method": report.method,
        "budget": int(budget),
        "selected": [{"index": i, **stack.candidates.pose_json(i)} for i in idx],
        "objective": int(report.objective),
        "objective_sense": report.sense,
        "best_bound": None if report.best_bound is None else int(report.best_bound),
        "status": report.status,
        "nodes_explored": int(report.nodes_explored),
        "metrics": metrics,
        "provenance": dict(stack.chain),
    }


def write_counts_csv(stack: Stack, chosen, path) -> None:
    counts = coverage_counts(stack.V.rows, chosen)
    centers = stack.grid.center_of(stack.targets.voxel_indices)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["voxel_index", "x", "y", "z", "count", "gamma", "region"])
        for j in range(stack.targets.n_p):
            x, y, z = (float(v) for v in centers[j])
            w.writerow([int(stack.targets.voxel_indices[j]), f"{x:.6f}", f"{y:.6f}", f"{z:.6f}",
                        int(counts[j]), int(stack.targets.gamma[j]), stack.targets.region_label[j]])


SWEEP_FIELDS = ["method", "budget", "status", "objective", "best_bound", "deficit_cost",
                "coverage_gap", "nontriangulatable_fraction", "n_selected", "nodes_explored"]


def run_solve(stack: Stack, methods=None, budgets=None, time_budget=None, node_limit=None,
              seed=None) -> list[dict]:
    """Solve every (method, budget) pair; write solutions, metrics and the sweep CSV."""
    s = stack.cfg["solver"]
    methods = methods or s["methods"]
    budgets = budgets or s["budgets"]
    time_budget = float(time_budget if time_budget is not None else s["time_budget"])
    node_limit = node_limit if node_limit is not None else s.get("node_limit")
    seed = int(seed if seed is not None else s.get("seed", 0))
    gmax = int(stack.cfg["targets"].get("gamma_max", DEFAULT_GAMMA_MAX))
    sol_dir = stack.out / "solutions"
    sol_dir.mkdir(exist_ok=True)
    n_l = stack.candidates.n_l
    rows = []
    for method in methods:
        for budget in budgets:
            if budget > n_l:
                log.warning("budget %d exceeds %d location groups; capping at %d", budget, n_l, n_l)
            cfg = SolverConfig(budget=int(budget), time_budget=time_budget, gamma_max=gmax,
                               seed=seed, method=method, node_limit=node_limit)
            t0 = time.perf_counter()
            report = solve(stack.V, stack.targets, cfg, stack.candidates.location_group)
            elapsed = time.perf_counter() - t0
            name = f"{method}_ns{budget}"
            counts_path = f"{name}_counts.csv"
            write_counts_csv(stack, report.selection.chosen, sol_dir / counts_path)
            metrics = compute_metrics(stack, report.selection.chosen, counts_path)
            write_json(sol_dir / f"{name}.json", solution_json(stack, report, budget, metrics))
            write_json(sol_dir / f"{name}_metrics.json", {**metrics, "provenance": dict(stack.chain)})
            with open(stack.out / "timing.jsonl", "a") as fh:
                fh.write(json.dumps({"stage": "solve", "method": method, "budget": int(budget),
                                     "elapsed_s": round(elapsed, 6), "status": report.status},
                                    sort_keys=True) + "\n")
            if report.status != "optimal":
                log.info("%s: status %s after %d nodes", name, report.status, report.nodes_explored)
            rows.append({
                "method": method, "budget": int(budget), "status": report.status,
                "objective": report.objective, "best_bound": report.best_bound,
                "deficit_cost": metrics["deficit_cost"], "coverage_gap": metrics["coverage_gap"],
                "nontriangulatable_fraction": metrics["nontriangulatable_fraction"],
                "n_selected": len(report.selection.indices), "nodes_explored": report.nodes_explored,
            })
    with open(stack.out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]))
                        for k in SWEEP_FIELDS})
    return rows


def any_infeasible(rows) -> bool:
    return any(r["status"] == INFEASIBLE for r in rows)


def run_evaluate(stack: Stack, solution_path, out_prefix=None) -> dict:
    """Recompute metrics for a stored solution against the current stack."""
    sol = _read_json(solution_path)
    expected = stack.chain.get("visibility")
    got = sol.get("provenance", {}).get("visibility")
    if got != expected:
        raise ProvenanceError(
            f"solution was computed on visibility matrix {str(got)[:12]}..., "
            f"current matrix is {str(expected)[:12]}...; rebuild or re-solve"
        )
    chosen = np.zeros(stack.V.n_g, dtype=bool)
    for s in sol["selected"]:
        i = int(s["index"])
        if not 0 <= i < stack.V.n_g:
            raise ParseError(f"selected index {i} out of range", path=solution_path)
        chosen[i] = True
    prefix = Path(out_prefix) if out_prefix else Path(solution_path).with_suffix("")
    counts_path = prefix.parent / (prefix.name + "_eval_counts.csv")
    write_counts_csv(stack, chosen, counts_path)
    metrics = compute_metrics(stack, chosen, counts_path.name)
    metrics["reported_objective"] = sol.get("objective")
    metrics["reported_deficit_cost"] = sol.get("metrics", {}).get("deficit_cost")
    metrics["provenance"] = dict(stack.chain)
    write_json(prefix.parent / (prefix.name + "_eval.json"), metrics)
    return metrics


def run_export_lp(stack: Stack, budget: int, path) -> Path:
    gmax = int(stack.cfg["targets"].get("gamma_max", DEFAULT_GAMMA_MAX))
    cfg = SolverConfig(budget=int(budget), gamma_max=gmax)
    model = build_mip(stack.V, stack.targets, cfg, stack.candidates.location_group)
    return export_lp(model, path)
