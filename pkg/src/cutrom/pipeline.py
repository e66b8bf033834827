"""Offline/online orchestration, artifact bundle and CSV reports.

The offline run persists everything a later online run needs: the mesh is
replayed from the resolved config (and checked against a fingerprint), the
bases, interpolation data and reduced terms are stored in the matrix
container format.  Online runs solve full and reduced models on a fresh
test sample and emit deterministic error reports; timings go to their own
file so that error CSVs are byte-identical across runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .assembly import AssemblyContext, assemble_operators, \
    box_mass_matrix, get_case
from .deim import COMPONENTS, DeimModel, PartialAssembler, deim_basis, \
    model_from_snapshots, spectral_norm, truncate_model
from .errors import ConfigError, NumericalError
from .kkt import assemble_kkt, solve_kkt
from .levelset import LevelSetSquare, classify_elements, cut_candidates
from .mesh import BackgroundMesh, build_background_mesh, build_face_table
from .pod import AggregatedBasis, PodBasis, SnapshotSet, aggregate_basis, \
    pod_basis, sample_parameters
from .rom import RomModel, precompute_reduced_terms, relative_error, rom_solve
from .storage import RunConfig, config_echo, load_index_list, load_matrix, \
    parse_config, save_index_list, save_matrix, write_csv

CENTER = (1.0, 1.0)
MODES_SWEEP = (1, 2, 3, 5, 9, 15, 25)
DEIM_SWEEP = (1, 2, 5, 10, 15, 20, 25, 30, 35, 40)
TIMING_REPEATS = 11
STAGE_ORDER = ("snapshots", "pod", "deim", "rom")


def median_time(fn, repeats: int = TIMING_REPEATS) -> float:
    """Median wall-clock of repeated calls (robust against scheduler noise)."""
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


class _OutputLock:
    """Exclusive ownership of the output directory while writing."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run: {self.path}")
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def mesh_fingerprint(mesh: BackgroundMesh) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(mesh.vertices).tobytes())
    digest.update(np.ascontiguousarray(mesh.elements).tobytes())
    return digest.hexdigest()


def build_problem(cfg: RunConfig):
    """Mesh, adjacency, case and assembly context of a configuration."""
    mesh = build_background_mesh((cfg.box_min_x, cfg.box_min_y),
                                 (cfg.box_max_x, cfg.box_max_y),
                                 cfg.h_target)
    nx, ny = mesh.n_cells
    layer = max((cfg.box_max_x - cfg.box_min_x) / nx,
                (cfg.box_max_y - cfg.box_min_y) / ny)
    reach = cfg.mu_max + layer
    if not (cfg.box_min_x < CENTER[0] - reach
            and cfg.box_max_x > CENTER[0] + reach
            and cfg.box_min_y < CENTER[1] - reach
            and cfg.box_max_y > CENTER[1] + reach):
        raise ConfigError(
            "mu_max square plus one mesh layer does not fit in the box")
    face_table = build_face_table(mesh)
    case = get_case(cfg.case, alpha=cfg.alpha, gamma_D=cfg.gamma_d,
                    gamma_1=cfg.gamma_1)
    ctx = AssemblyContext(mesh, face_table, case,
                          mu_range=(cfg.mu_min, cfg.mu_max), center=CENTER)
    W = box_mass_matrix(mesh)
    return mesh, face_table, case, ctx, W


@dataclass
class OfflineBundle:
    cfg: RunConfig
    mesh: BackgroundMesh
    ctx: AssemblyContext
    W: sp.csr_matrix
    params: np.ndarray
    snapshots: SnapshotSet
    pod: dict[str, PodBasis]
    basis: AggregatedBasis
    deim_models: dict[str, DeimModel]
    rom: RomModel

    @property
    def face_table(self):
        return self.ctx.face_table


def training_sweep(params, ctx: AssemblyContext, W):
    """One assembly+solve pass that feeds both snapshot families."""
    from .deim import OperatorSnapshots

    params = np.asarray(params, dtype=float)
    n = ctx.mesh.dof_count
    S = {"y": np.zeros((n, params.size)), "u": np.zeros((n, params.size)),
         "p": np.zeros((n, params.size))}
    vals = {"A": np.zeros((ctx.pattern_A.nnz, params.size)),
            "M": np.zeros((ctx.pattern_M.nnz, params.size)),
            "b": np.zeros((n, params.size)),
            "c": np.zeros((n, params.size))}
    t_asm = np.zeros(params.size)
    t_sol = np.zeros(params.size)
    for k, mu in enumerate(params):
        t0 = time.perf_counter()
        ops = assemble_operators(ctx, float(mu), CENTER)
        t_asm[k] = time.perf_counter() - t0
        vals["A"][:, k] = ops.a_values
        vals["M"][:, k] = ops.m_values
        vals["b"][:, k] = ops.b
        vals["c"][:, k] = ops.c
        try:
            sol = solve_kkt(assemble_kkt(ops, ctx.case.alpha))
        except NumericalError as exc:
            raise NumericalError(f"offline solve failed at mu={mu}") from exc
        S["y"][:, k] = sol.y
        S["u"][:, k] = sol.u
        S["p"][:, k] = sol.p
        t_sol[k] = sol.solve_time
    snaps = SnapshotSet(params, S["y"], S["u"], S["p"], W, t_asm, t_sol)
    pats = {"A": ctx.pattern_A, "M": ctx.pattern_M, "b": None, "c": None}
    opsnaps = {comp: OperatorSnapshots(comp, params, vals[comp], pats[comp], n)
               for comp in COMPONENTS}
    return snaps, opsnaps


def _stages_of(cfg: RunConfig) -> set[str]:
    if cfg.stages == "all":
        return set(STAGE_ORDER)
    return {s.strip() for s in cfg.stages.split(",") if s.strip()}


def run_offline(cfg: RunConfig, out_dir=None) -> OfflineBundle:
    """Execute the selected offline stages and persist the bundle."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = _stages_of(cfg)
    mesh, face_table, case, ctx, W = build_problem(cfg)
    candidates = cut_candidates(mesh, cfg.mu_min, cfg.mu_max, CENTER)

    with _OutputLock(out):
        (out / "config.resolved").write_text(config_echo(cfg),
                                             encoding="utf-8")
        (out / "mesh_fingerprint.txt").write_text(
            f"{mesh.n_cells[0]} {mesh.n_cells[1]} {mesh.n_elements} "
            f"{mesh.dof_count}\n{mesh_fingerprint(mesh)}\n", encoding="utf-8")

        timings: list[tuple[str, float]] = []
        opsnaps = None
        if "snapshots" in stages:
            t0 = time.perf_counter()
            params = sample_parameters(cfg.mu_min, cfg.mu_max, cfg.m_train,
                                       cfg.seed)
            snaps, opsnaps = training_sweep(params, ctx, W)
            timings.append(("snapshots", time.perf_counter() - t0))
            save_matrix(out / "params_train.romb", params)
            save_matrix(out / "snap_y.romb", snaps.S_y)
            save_matrix(out / "snap_u.romb", snaps.S_u)
            save_matrix(out / "snap_p.romb", snaps.S_p)
        else:
            if not (out / "params_train.romb").is_file():
                raise ConfigError(
                    "selected stages require persisted 'snapshots' artifacts")
            params = load_matrix(out / "params_train.romb").ravel()
            snaps = SnapshotSet(params,
                                load_matrix(out / "snap_y.romb"),
                                load_matrix(out / "snap_u.romb"),
                                load_matrix(out / "snap_p.romb"), W)

        pod = basis = None
        if "pod" in stages:
            t0 = time.perf_counter()
            pod = {var: pod_basis(getattr(snaps, f"S_{var}"), W, cfg.eps_pod,
                                  min_stored=cfg.pod_store)
                   for var in ("y", "u", "p")}
            basis = aggregate_basis(pod["y"].vectors[:, :pod["y"].retained],
                                    pod["u"].vectors[:, :pod["u"].retained],
                                    pod["p"].vectors[:, :pod["p"].retained],
                                    W)
            timings.append(("pod", time.perf_counter() - t0))
            for var in ("y", "u", "p"):
                save_matrix(out / f"pod_basis_{var}.romb", pod[var].vectors)
                save_matrix(out / f"pod_eigs_{var}.romb",
                            pod[var].eigenvalues)
            save_index_list(out / "pod_retained.txt",
                            [pod[v].retained for v in ("y", "u", "p")])
            save_matrix(out / "basis_vyp.romb", basis.V_yp)
            save_matrix(out / "basis_vu.romb", basis.V_u)
        elif (out / "pod_retained.txt").is_file():
            pod = _load_pod(out, cfg)
            basis = AggregatedBasis(load_matrix(out / "basis_vyp.romb"),
                                    load_matrix(out / "basis_vu.romb"))
        elif stages & {"rom"}:
            raise ConfigError("stage 'rom' requires 'pod' artifacts")

        deim_models = None
        if "deim" in stages:
            t0 = time.perf_counter()
            if opsnaps is None:
                from .deim import collect_operator_snapshots
                opsnaps = collect_operator_snapshots(params, ctx, CENTER)
            deim_models = {}
            for comp in COMPONENTS:
                dbasis = deim_basis(opsnaps[comp], cfg.eps_deim)
                deim_models[comp] = model_from_snapshots(
                    dbasis, dbasis.m, opsnaps[comp], mesh, face_table,
                    candidates)
            timings.append(("deim", time.perf_counter() - t0))
            for comp, model in deim_models.items():
                save_matrix(out / f"deim_{comp}_U.romb", model.U)
                save_matrix(out / f"deim_{comp}_proj.romb", model.projector)
                save_matrix(out / f"deim_{comp}_eigs.romb", model.eigenvalues)
                save_index_list(out / f"deim_{comp}_indices.txt",
                                model.indices)
                save_index_list(out / f"deim_{comp}_elements.txt",
                                model.reduced_elements)
                save_index_list(out / f"deim_{comp}_facets.txt",
                                model.reduced_facets)
        elif (out / "deim_A_U.romb").is_file():
            deim_models = _load_deim(out, ctx)
        elif stages & {"rom"}:
            raise ConfigError("stage 'rom' requires 'deim' artifacts")

        rom = None
        if "rom" in stages:
            t0 = time.perf_counter()
            rom = precompute_reduced_terms(basis, deim_models, ctx,
                                           cfg.alpha, CENTER)
            timings.append(("rom", time.perf_counter() - t0))
            save_matrix(out / "rom_a_terms.romb",
                        rom.A_terms.reshape(-1, basis.n_yp))
            save_matrix(out / "rom_myp_terms.romb",
                        rom.M_yp_terms.reshape(-1, basis.n_yp))
            save_matrix(out / "rom_mu_terms.romb",
                        rom.M_u_terms.reshape(-1, max(basis.n_u, 1)))
            save_matrix(out / "rom_muyp_terms.romb",
                        rom.M_uyp_terms.reshape(-1, basis.n_yp))
            save_matrix(out / "rom_b_terms.romb", rom.b_terms)
            save_matrix(out / "rom_c_terms.romb", rom.c_terms)
        elif basis is not None and deim_models is not None \
                and (out / "rom_a_terms.romb").is_file():
            rom = _load_rom(out, basis, deim_models, ctx, cfg)

        manifest = {
            "format": 1,
            "config": {k: (v if not isinstance(v, float) else repr(v))
                       for k, v in cfg.as_dict().items()},
            "mesh": {"cells": list(mesh.n_cells),
                     "elements": mesh.n_elements,
                     "dofs": mesh.dof_count,
                     "fingerprint": mesh_fingerprint(mesh)},
        }
        if pod is not None:
            manifest["pod"] = {
                "retained": {v: pod[v].retained for v in ("y", "u", "p")},
                "stored": {v: pod[v].stored for v in ("y", "u", "p")}}
        if deim_models is not None:
            manifest["deim"] = {
                comp: {"m": int(deim_models[comp].m),
                       "entries": int(deim_models[comp].U.shape[0]),
                       "reduced_elements":
                           int(deim_models[comp].reduced_elements.size),
                       "reduced_facets":
                           int(deim_models[comp].reduced_facets.size)}
                for comp in COMPONENTS}
        if rom is not None:
            manifest["rom"] = {"n_yp": basis.n_yp, "n_u": basis.n_u,
                               "reduced_dim": basis.reduced_dim,
                               "q_matrix_terms": rom.q_matrix_terms,
                               "q_vector_terms": rom.q_vector_terms}
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")

        _write_offline_summary(out, pod, deim_models, basis)
        write_csv(out / "offline_timings.csv", ["stage", "seconds"], timings)

    return OfflineBundle(cfg, mesh, ctx, W, params, snaps, pod, basis,
                         deim_models, rom)


def _write_offline_summary(out: Path, pod, deim_models, basis) -> None:
    rows = []
    if pod is not None:
        for var in ("y", "u", "p"):
            rows.append(("pod_retained", var, 0, pod[var].retained))
        for var in ("y", "u", "p"):
            for i, v in enumerate(pod[var].eigenvalues):
                rows.append(("pod_eigenvalue", var, i, v))
    if deim_models is not None:
        for comp, model in deim_models.items():
            rows.append(("deim_dim", comp, 0, model.m))
            rows.append(("reduced_mesh_elements", comp, 0,
                         model.reduced_elements.size))
            rows.append(("reduced_mesh_facets", comp, 0,
                         model.reduced_facets.size))
            for i, v in enumerate(model.eigenvalues):
                rows.append(("deim_eigenvalue", comp, i, v))
    if basis is not None:
        rows.append(("reduced_dim", "rom", 0, basis.reduced_dim))
    write_csv(out / "offline_summary.csv",
              ["record", "component", "index", "value"], rows)


def _load_pod(out: Path, cfg: RunConfig) -> dict[str, PodBasis]:
    retained = load_index_list(out / "pod_retained.txt")
    pod = {}
    for k, var in enumerate(("y", "u", "p")):
        pod[var] = PodBasis(load_matrix(out / f"pod_basis_{var}.romb"),
                            load_matrix(out / f"pod_eigs_{var}.romb").ravel(),
                            int(retained[k]), cfg.eps_pod)
    return pod


def _load_deim(out: Path, ctx: AssemblyContext) -> dict[str, DeimModel]:
    from .deim import _pairs_of_indices

    models = {}
    pats = {"A": ctx.pattern_A, "M": ctx.pattern_M, "b": None, "c": None}
    for comp in COMPONENTS:
        U = load_matrix(out / f"deim_{comp}_U.romb")
        indices = load_index_list(out / f"deim_{comp}_indices.txt")
        models[comp] = DeimModel(
            comp, ctx.mesh.dof_count, pats[comp], U, indices,
            _pairs_of_indices(indices, pats[comp]),
            load_matrix(out / f"deim_{comp}_proj.romb"),
            load_index_list(out / f"deim_{comp}_elements.txt"),
            load_index_list(out / f"deim_{comp}_facets.txt"),
            load_matrix(out / f"deim_{comp}_eigs.romb").ravel())
    return models


def _load_rom(out: Path, basis: AggregatedBasis, deim_models, ctx,
              cfg: RunConfig) -> RomModel:
    nyp, nu = basis.n_yp, basis.n_u
    a = load_matrix(out / "rom_a_terms.romb").reshape(-1, nyp, nyp)
    myp = load_matrix(out / "rom_myp_terms.romb").reshape(-1, nyp, nyp)
    mu_t = load_matrix(out / "rom_mu_terms.romb").reshape(-1, nu, max(nu, 1))
    mu_t = mu_t[:, :, :nu]
    muyp = load_matrix(out / "rom_muyp_terms.romb").reshape(-1, nu, nyp)
    b = load_matrix(out / "rom_b_terms.romb")
    c = load_matrix(out / "rom_c_terms.romb")
    assemblers = {comp: PartialAssembler(model, ctx, CENTER)
                  for comp, model in deim_models.items()}
    return RomModel(basis, cfg.alpha, a, myp, mu_t, muyp, b, c,
                    dict(deim_models), assemblers)


def load_bundle(out_dir, cfg: RunConfig | None = None) -> OfflineBundle:
    """Rebuild a persisted bundle; the mesh is replayed from the config."""
    out = Path(out_dir)
    if not (out / "manifest.json").is_file():
        raise ConfigError(f"no offline bundle in {out}")
    stored_cfg = parse_config(out / "config.resolved")
    if cfg is not None and _geometry_keys(cfg) != _geometry_keys(stored_cfg):
        raise ConfigError("config geometry differs from the stored bundle")
    cfg = stored_cfg
    mesh, face_table, case, ctx, W = build_problem(cfg)
    recorded = (out / "mesh_fingerprint.txt").read_text().split()[-1]
    if recorded != mesh_fingerprint(mesh):
        raise ConfigError("mesh fingerprint mismatch; bundle is stale")
    try:
        params = load_matrix(out / "params_train.romb").ravel()
        snaps = SnapshotSet(params, load_matrix(out / "snap_y.romb"),
                            load_matrix(out / "snap_u.romb"),
                            load_matrix(out / "snap_p.romb"), W)
        pod = _load_pod(out, cfg)
        basis = AggregatedBasis(load_matrix(out / "basis_vyp.romb"),
                                load_matrix(out / "basis_vu.romb"))
        deim_models = _load_deim(out, ctx)
        rom = _load_rom(out, basis, deim_models, ctx, cfg)
    except FileNotFoundError as exc:
        raise ConfigError(f"bundle in {out} is incomplete: {exc}") from exc
    return OfflineBundle(cfg, mesh, ctx, W, params, snaps, pod, basis,
                         deim_models, rom)


def _geometry_keys(cfg: RunConfig):
    return (cfg.box_min_x, cfg.box_min_y, cfg.box_max_x, cfg.box_max_y,
            cfg.h_target)


def sample_test_parameters(cfg: RunConfig) -> np.ndarray:
    """Fresh test sample from a stream disjoint from the training stream."""
    rng = np.random.default_rng([cfg.seed, 1])
    return np.sort(rng.uniform(cfg.mu_min, cfg.mu_max, cfg.m_test))


def _component_error(model: DeimModel, assembler: PartialAssembler,
                     mu: float, exact, exact_norm: float) -> float:
    recon = assembler.reconstruct(mu)
    if model.pattern is None:
        return float(np.linalg.norm(recon - exact) / exact_norm)
    return spectral_norm(recon - exact) / exact_norm


def _exact_component(ops, comp: str):
    return {"A": ops.A, "M": ops.M, "b": ops.b, "c": ops.c}[comp]


def run_online(cfg: RunConfig, out_dir=None, modes: int | None = None,
               deim_dims: dict[str, int] | None = None) -> dict:
    """Full-vs-ROM assessment on a fresh test sample; writes the reports."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    bundle = load_bundle(out, cfg)
    ctx = bundle.ctx
    mesh = bundle.mesh
    candidates = cut_candidates(mesh, cfg.mu_min, cfg.mu_max, CENTER)

    eval_models = bundle.deim_models
    if deim_dims:
        eval_models = {
            comp: (truncate_model(model, deim_dims[comp], mesh,
                                  bundle.face_table, candidates)
                   if comp in deim_dims else model)
            for comp, model in bundle.deim_models.items()}
    eval_basis = bundle.basis
    if modes is not None:
        eval_basis = _truncated_basis(bundle, modes)
    if modes is not None or deim_dims:
        rom = precompute_reduced_terms(eval_basis, eval_models, ctx,
                                       cfg.alpha, CENTER)
    else:
        rom = bundle.rom

    mus = sample_test_parameters(cfg)
    full_solutions = []
    all_ops = []
    error_rows = []
    for mu in mus:
        ops = assemble_operators(ctx, float(mu), CENTER)
        full = solve_kkt(assemble_kkt(ops, cfg.alpha))
        sol = rom_solve(rom, float(mu))
        errs, _ = relative_error(full, sol, ops.M)
        comp_errs = {}
        for comp, model in rom.deim.items():
            exact = _exact_component(ops, comp)
            norm = spectral_norm(exact) if model.pattern is not None \
                else float(np.linalg.norm(exact))
            comp_errs[comp] = _component_error(model, rom.assemblers[comp],
                                               float(mu), exact, norm)
        error_rows.append((mu, errs[0], errs[1], errs[2], comp_errs["A"],
                           comp_errs["M"], comp_errs["b"], comp_errs["c"]))
        full_solutions.append(full)
        all_ops.append(ops)

    with _OutputLock(out):
        write_csv(out / "online_errors.csv",
                  ["mu", "err_y", "err_u", "err_p", "deim_err_A",
                   "deim_err_M", "deim_err_b", "deim_err_c"], error_rows)

        deim_rows = _deim_sweep(bundle, all_ops, mus, candidates)
        write_csv(out / "deim_errors.csv",
                  ["component", "m", "mean_rel_error"], deim_rows)

        sweep_rows = _modes_sweep(bundle, full_solutions, all_ops, mus)
        write_csv(out / "modes_sweep.csv",
                  ["modes_per_variable", "reduced_dim", "mean_err_y",
                   "mean_err_u", "mean_err_p"], sweep_rows)

        timing_rows = _timing_report(bundle, rom, mus[0])
        write_csv(out / "timings.csv", ["name", "value"], timing_rows)

    return {"test_params": mus, "errors": error_rows, "deim": deim_rows,
            "modes": sweep_rows, "timings": dict(timing_rows)}


def _truncated_basis(bundle: OfflineBundle, k: int) -> AggregatedBasis:
    return aggregate_basis(bundle.pod["y"].truncated(k),
                           bundle.pod["u"].truncated(k),
                           bundle.pod["p"].truncated(k), bundle.W)


def _deim_sweep(bundle: OfflineBundle, all_ops, mus, candidates):
    """Mean reconstruction error per component over a grid of dimensions."""
    rows = []
    exact_norms = {}
    for comp in COMPONENTS:
        model = bundle.deim_models[comp]
        exact = [_exact_component(ops, comp) for ops in all_ops]
        if model.pattern is None:
            exact_norms[comp] = [float(np.linalg.norm(e)) for e in exact]
        else:
            exact_norms[comp] = [spectral_norm(e) for e in exact]
        for m in DEIM_SWEEP:
            if m > model.m:
                continue
            sub = truncate_model(model, m, bundle.mesh, bundle.face_table,
                                 candidates)
            asm = PartialAssembler(sub, bundle.ctx, CENTER)
            errs = [_component_error(sub, asm, float(mu), e, nz)
                    for mu, e, nz in zip(mus, exact, exact_norms[comp])]
            rows.append((comp, m, float(np.mean(errs))))
    return rows


def _modes_sweep(bundle: OfflineBundle, full_solutions, all_ops, mus):
    """Error decay versus per-variable POD truncation, DEIM dims fixed."""
    rows = []
    for k in MODES_SWEEP:
        # variables with fewer stored modes than k use all they have
        basis_k = _truncated_basis(bundle, k)
        rom_k = precompute_reduced_terms(basis_k, bundle.deim_models,
                                         bundle.ctx, bundle.cfg.alpha, CENTER)
        errs = np.zeros((len(mus), 3))
        for i, mu in enumerate(mus):
            sol = rom_solve(rom_k, float(mu))
            errs[i], _ = relative_error(full_solutions[i], sol, all_ops[i].M)
        mean = errs.mean(axis=0)
        rows.append((k, basis_k.reduced_dim, mean[0], mean[1], mean[2]))
    return rows


def _timing_report(bundle: OfflineBundle, rom: RomModel, mu0: float):
    """Median-of-repeats timings of every online phase at one parameter."""
    ctx = bundle.ctx
    cfg = bundle.cfg
    mu0 = float(mu0)

    ops0 = assemble_operators(ctx, mu0, CENTER)
    t_full_asm = median_time(lambda: assemble_operators(ctx, mu0, CENTER))
    t_full_solve = median_time(
        lambda: solve_kkt(assemble_kkt(ops0, cfg.alpha)))

    sol = rom_solve(rom, mu0)
    phases = {k: [] for k in sol.timings}
    for _ in range(TIMING_REPEATS):
        phases_k = rom_solve(rom, mu0).timings
        for k, v in phases_k.items():
            phases[k].append(v)
    rom_t = {k: float(np.median(v)) for k, v in phases.items()}

    rows = [
        ("dofs", bundle.mesh.dof_count),
        ("reduced_dim", rom.reduced_dim),
        ("full_assembly", t_full_asm),
        ("full_solve", t_full_solve),
        ("rom_theta", rom_t["theta"]),
        ("rom_form", rom_t["form"]),
        ("rom_solve", rom_t["solve"]),
        ("rom_lift", rom_t["lift"]),
        ("rom_total_excl_lift", rom_t["total_excl_lift"]),
        ("speedup_solver", t_full_solve / (rom_t["form"] + rom_t["solve"])),
        ("speedup_excl_lift", t_full_solve / rom_t["total_excl_lift"]),
        ("speedup_with_assembly",
         (t_full_asm + t_full_solve) / rom_t["total_excl_lift"]),
    ]
    for comp, model in rom.deim.items():
        asm = rom.assemblers[comp]
        t_comp_full = median_time(
            lambda: ctx.assemble_component(
                classify_elements(bundle.mesh, bundle.face_table,
                                  LevelSetSquare(mu0, CENTER)), comp))
        t_comp_rom = median_time(lambda: asm.reconstruct(mu0))
        rows.append((f"deim_m_{comp}", model.m))
        rows.append((f"full_component_{comp}", t_comp_full))
        rows.append((f"deim_reconstruct_{comp}", t_comp_rom))
        rows.append((f"deim_speedup_{comp}", t_comp_full / t_comp_rom))
    return rows


def run_verify(cfg: RunConfig, out_dir=None):
    """Invariant suite over a persisted bundle; returns (name, ok, detail)."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    bundle = load_bundle(out, cfg)
    checks = []

    nx, ny = bundle.mesh.n_cells
    cell = max((cfg.box_max_x - cfg.box_min_x) / nx,
               (cfg.box_max_y - cfg.box_min_y) / ny)
    sample = np.linspace(cfg.mu_min, cfg.mu_max, 5)
    area_errs, per_errs = [], []
    for mu in sample:
        geom = classify_elements(bundle.mesh, bundle.face_table,
                                 LevelSetSquare(float(mu), CENTER))
        area_errs.append(abs(geom.interior_weight_sum - 4 * mu * mu)
                         / (4 * mu * mu))
        per_errs.append(abs(geom.boundary_weight_sum - 8 * mu) / (8 * mu))
        ok = np.all(geom.active.iq_weights >= 0.0) \
            and set(geom.cut_elements) <= set(geom.active_elements)
        checks.append((f"geometry_structure_mu_{mu:.3f}", bool(ok), ""))
    if cell <= 0.1:
        # accuracy figures hold at the benchmark resolution and finer
        checks.append(("geometry_area_2pc", max(area_errs) <= 0.02,
                       f"max rel err {max(area_errs):.3e}"))
        checks.append(("geometry_perimeter_mean_2pc",
                       float(np.mean(per_errs)) <= 0.02,
                       f"mean rel err {np.mean(per_errs):.3e}"))

    W = bundle.W
    for var in ("y", "u", "p"):
        V = bundle.pod[var].vectors
        gram = V.T @ (W @ V)
        dev = float(np.max(np.abs(gram - np.eye(V.shape[1]))))
        checks.append((f"pod_orthonormal_{var}", dev <= 1e-10,
                       f"max deviation {dev:.3e}"))
    lam_ok = all(np.all(np.diff(bundle.pod[v].eigenvalues) <= 1e-30)
                 for v in ("y", "u", "p"))
    checks.append(("pod_eigenvalues_sorted", lam_ok, ""))

    Vb = bundle.basis.block_matrix()
    W3 = sp.block_diag([W, W, W], format="csr")
    gram = (Vb.T @ (W3 @ Vb)).toarray()
    dev = float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
    checks.append(("aggregated_orthonormal", dev <= 1e-10,
                   f"max deviation {dev:.3e}"))

    for comp, model in bundle.deim_models.items():
        ident = model.projector[model.indices]
        dev = float(np.max(np.abs(ident - np.eye(model.m))))
        checks.append((f"deim_projector_identity_{comp}", dev <= 1e-12,
                       f"max deviation {dev:.3e}"))
        distinct = np.unique(model.indices).size == model.m
        checks.append((f"deim_indices_distinct_{comp}", distinct, ""))
    return checks
