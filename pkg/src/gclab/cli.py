"""Command-line front end: ``gclab curve-info|mesh|continue|blowup|sigma|selftest``."""

from __future__ import annotations

import os

_threads = os.environ.get("GCLAB_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import hashlib
import logging
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .fuchsian import IdentificationMismatch, SurfaceMesh, bolza_group, build_mesh

log = logging.getLogger("gclab")

EXIT_FAILURE, EXIT_CONFIG, EXIT_IDENT = 1, 2, 3
WORKING_GAP = 1.0  # kernel gap used when building the basis for experiments
BOLZA = "0,-1,0,0,0,1"


class ConfigError(ValueError):
    def __init__(self, key, message, line=None):
        where = f" (line {line})" if line else ""
        super().__init__(f"field '{key}'{where}: {message}")
        self.key = key


class MeshFileCorrupt(ValueError):
    pass


# --- number formatting -----------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (complex, np.complexfloating)):
        return f"{x.real:.17g}{x.imag:+.17g}i"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def parse_complex(text: str) -> complex:
    """'re+imi' literals such as '1', '-2.5i', '1e-3-4i'."""
    s = text.strip()
    if not s or "j" in s or " " in s:
        raise ValueError(f"not a complex literal: {text!r}")
    try:
        return complex(s.replace("i", "j"))
    except ValueError:
        raise ValueError(f"not a complex literal: {text!r}") from None


def _complex_list(text):
    vals = [parse_complex(v) for v in text.split(",")]
    if not vals:
        raise ValueError("empty list")
    return tuple(vals)


def _real_list(text):
    return tuple(float(v) for v in text.split(","))


# --- configuration ------------------------------------------------------------------------------

# key -> (parser, default); None defaults mean "absent unless given"
SCHEMA = {
    "curve.coeffs": (_complex_list, _complex_list(BOLZA)),
    "mesh.refinement": (int, 3),
    "mesh.file": (str, None),
    "beta.coefficients": (_complex_list, None),
    "beta.kodaira_at": (str, None),
    "beta.random": (int, None),
    "schedule.t0": (float, 1.0),
    "schedule.ratio": (float, 0.5),
    "schedule.steps": (int, 14),
    "solver.newton_tol": (float, 1e-10),
    "solver.max_newton": (int, 50),
    "solver.max_alternations": (int, 200),
    "solver.damping": (float, 0.5),
    "solver.armijo": (float, 1e-4),
    "solver.linear_tol": (float, 1e-12),
    "sigma.covector": (_complex_list, None),
    "sigma.grid": (int, 40),
    "sigma.max_evals": (int, 400_000),
    "sigma.threshold": (float, 1e-4),
    "blowup.radii": (_real_list, (0.8, 0.6, 0.4)),
    "output_dir": (str, "gclab_out"),
    "seed": (int, 0),
}
BETA_KEYS = ("beta.coefficients", "beta.kodaira_at", "beta.random")
KODAIRA_NAMES = ("center", "corner", "side0", "side1", "side2", "side3")


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def beta_key(self):
        given = [k for k in BETA_KEYS if self.values.get(k) is not None]
        return given[0] if given else None

    def canonical(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if v is None:
                continue
            text = ",".join(fmt(x) for x in v) if isinstance(v, tuple) else fmt(v) if not isinstance(v, str) else v
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def solver(self):
        from .donaldson import SolverConfig

        kw = {f.name: self.values[f"solver.{f.name}"] for f in fields(SolverConfig)}
        try:
            return SolverConfig(**kw)
        except ValueError as exc:
            raise ConfigError("solver", str(exc)) from None

    def schedule(self):
        from .donaldson import default_schedule

        return default_schedule(self["schedule.steps"], self["schedule.t0"], self["schedule.ratio"])


def parse_config(text: str) -> ExperimentConfig:
    values = {k: d for k, (_, d) in SCHEMA.items()}
    seen = set()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected 'key = value'", n)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown field", n)
        if key in seen:
            raise ConfigError(key, "given twice", n)
        seen.add(key)
        try:
            values[key] = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(key, str(exc), n) from None
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if sum(cfg.values.get(k) is not None for k in BETA_KEYS) > 1:
        raise ConfigError("beta", "give exactly one of coefficients, kodaira_at, random")
    if not 0 <= cfg["mesh.refinement"] <= 8:
        raise ConfigError("mesh.refinement", "must lie in 0..8")
    if not (cfg["schedule.t0"] > 0 and 0 < cfg["schedule.ratio"] < 1 and cfg["schedule.steps"] >= 0):
        raise ConfigError("schedule", "need t0 > 0, 0 < ratio < 1, steps >= 0 (strictly decreasing)")
    radii = cfg["blowup.radii"]
    if any(b >= a for a, b in zip(radii, radii[1:])) or min(radii) <= 0:
        raise ConfigError("blowup.radii", "must be positive and decreasing")
    k = cfg.get("beta.kodaira_at")
    if k is not None and k not in KODAIRA_NAMES:
        try:
            z = parse_complex(k)
        except ValueError:
            raise ConfigError("beta.kodaira_at", f"expected one of {', '.join(KODAIRA_NAMES)} or a disk point") from None
        if abs(z) >= 1:
            raise ConfigError("beta.kodaira_at", "point outside the unit disk")
    cfg.solver()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    return parse_config(text)


def curve_from(cfg: ExperimentConfig):
    from .hyperelliptic import HyperellipticError, curve_new

    try:
        return curve_new(np.array(cfg["curve.coeffs"], dtype=complex))
    except (HyperellipticError, ValueError) as exc:
        raise ConfigError("curve.coeffs", str(exc)) from None


# --- output helpers ---------------------------------------------------------------------------


class RunDir:
    """Output directory with an append-only manifest."""

    def __init__(self, path, cfg: ExperimentConfig, command: str):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.cfg, self.command, self.files = cfg, command, []

    def write(self, name: str, text: str) -> Path:
        p = self.path / name
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)
        return p

    def close(self):
        stamp = os.environ.get("SOURCE_DATE_EPOCH")
        stamp = int(stamp) if stamp and stamp.isdigit() else int(time.time())
        lines = [f"run command={self.command} config_hash={self.cfg.hash()} version={__version__} timestamp={stamp}"]
        for name in self.files:
            digest = hashlib.sha256((self.path / name).read_bytes()).hexdigest()
            lines.append(f"file {name} sha256={digest}")
        with open(self.path / "manifest.txt", "a", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def mesh_snapshot(mesh: SurfaceMesh) -> str:
    out = [f"# gclab mesh refinement={mesh.refinement_level}", f"VERTICES {mesh.n_vertices}"]
    out += [f"{i} {fmt(z.real)} {fmt(z.imag)}" for i, z in enumerate(mesh.vertices)]
    out.append(f"TRIANGLES {mesh.n_triangles}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    ident = mesh.edge_identifications
    out.append(f"IDENT {len(ident)}")
    out += [f"{v} {r} {k}" for v, r, k in ident]
    return "\n".join(out) + "\n"


def load_snapshot(path) -> SurfaceMesh:
    """Parse a snapshot and check it against a fresh build of the same refinement."""
    sections, cur = {}, None
    try:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line or line.startswith("#"):
                continue
            head = line.split()
            if head[0] in ("VERTICES", "TRIANGLES", "IDENT"):
                cur = sections.setdefault(head[0], [])
                continue
            cur.append(head)
        verts = np.array([float(r) + 1j * float(i) for _, r, i in sections["VERTICES"]])
        tris = np.array([[int(x) for x in row] for row in sections["TRIANGLES"]], dtype=np.int64)
        ident = [tuple(int(x) for x in row) for row in sections["IDENT"]]
    except (OSError, KeyError, ValueError, TypeError, AttributeError) as exc:
        raise MeshFileCorrupt(f"unreadable mesh file: {exc}") from None
    level = int(round(np.log(max(len(tris), 1) / 8) / np.log(4)))
    if not 0 <= level <= 8 or len(tris) != 8 * 4**level:
        raise MeshFileCorrupt(f"{len(tris)} triangles is not a refinement of the octagon fan")
    mesh = build_mesh(bolza_group(), level)
    for v, r, k in ident:
        if not (0 <= v < len(verts) and 0 <= r < len(verts) and 0 <= k < len(mesh.transforms)):
            raise IdentificationMismatch(f"identification ({v}, {r}, {k}) out of range")
        if abs(mesh.transforms[k](verts[v]) - verts[r]) > 1e-9:
            raise IdentificationMismatch(f"transform {k} does not map vertex {v} onto vertex {r}")
    if ident != mesh.edge_identifications:
        raise IdentificationMismatch("identification table differs from the octagon pairing")
    if verts.shape != mesh.vertices.shape or np.abs(verts - mesh.vertices).max() > 1e-12:
        raise MeshFileCorrupt("vertex coordinates differ from the construction")
    if not np.array_equal(tris, mesh.triangles):
        raise MeshFileCorrupt("triangle table differs from the construction")
    return mesh


def field_dump(name: str, values, weight) -> str:
    out = [f"# field {name} weight {weight[0]} {weight[1]} dofs {len(values)}"]
    vals = np.asarray(values, dtype=complex)
    out += [f"{i} {fmt(v.real)} {fmt(v.imag)}" for i, v in enumerate(vals)]
    return "\n".join(out) + "\n"


def read_field(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    return np.array([float(r) + 1j * float(i) for _, r, i in rows])


def trace_line(rec) -> str:
    parts = [f"{k}={fmt(getattr(rec, k))}" for k in rec.FIELDS]
    return " ".join(parts) + f" status={rec.status}"


def read_trace(path):
    from .donaldson import ContinuationTrace, TraceRecord

    tr = ContinuationTrace()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        kv = dict(p.split("=", 1) for p in line.split())
        status = kv.pop("status", "ok")
        tr.records.append(TraceRecord(**{k: float(v) for k, v in kv.items()}, status=status))
    return tr


# --- experiment pieces --------------------------------------------------------------------------


def _mesh_for(cfg: ExperimentConfig, run: RunDir | None = None) -> SurfaceMesh:
    path = cfg.get("mesh.file")
    if path is None and run is not None and (run.path / "mesh.txt").exists():
        path = run.path / "mesh.txt"
    if path is not None:
        mesh = load_snapshot(path)
        if mesh.refinement_level != cfg["mesh.refinement"]:
            raise ConfigError("mesh.refinement", f"mesh file has refinement {mesh.refinement_level}")
        return mesh
    mesh = build_mesh(bolza_group(), cfg["mesh.refinement"])
    if run is not None:
        run.write("mesh.txt", mesh_snapshot(mesh))
    return mesh


def _basis(mesh):
    from .dolbeault import harmonic_beltrami_basis, holomorphic_basis

    c2 = holomorphic_basis(mesh, (-2, 0), min_gap=WORKING_GAP)
    return c2, harmonic_beltrami_basis(c2)


def kodaira_point(mesh: SurfaceMesh, name: str) -> complex:
    from .blowup import weierstrass_mesh_points

    pts = weierstrass_mesh_points(mesh.group)
    return pts[name] if name in pts else parse_complex(name)


def beta_for(cfg: ExperimentConfig, mesh: SurfaceMesh, bb):
    """Unit-norm harmonic beta_0 per the config, or zero."""
    from .dolbeault import beltrami_norm, beta_from_covector, qd_point_conditions

    key = cfg.beta_key
    if key is None:
        raise ConfigError("beta", "this command needs one of coefficients, kodaira_at, random")
    dim = bb.c2.dim
    if key == "beta.coefficients":
        c = np.array(cfg[key], dtype=complex)
        if len(c) != dim:
            raise ConfigError(key, f"expected {dim} coefficients")
        field = bb.combine(c).field
    elif key == "beta.random":
        rng = np.random.default_rng(cfg[key])
        field = bb.combine(rng.normal(size=dim) + 1j * rng.normal(size=dim)).field
    else:
        z = kodaira_point(mesh, cfg[key])
        field = beta_from_covector(qd_point_conditions(bb.c2, z, 0)[0], bb).field
    nrm = beltrami_norm(mesh, field)
    return field / nrm if nrm > 0 else np.zeros_like(field)


# --- commands --------------------------------------------------------------------------------------


def cmd_curve_info(cfg, run: RunDir):
    from .hyperelliptic import weierstrass_points

    curve = curve_from(cfg)
    g = curve.genus
    names = [f"x^{j} dx^2/y^2" for j in range(curve.n_q)] + [f"x^{j} dx^2/y" for j in range(curve.dim_c2 - curve.n_q)]
    wp = weierstrass_points(curve)
    lines = [
        f"genus {g}, dim C2 = {curve.dim_c2}, {len(wp)} Weierstrass points",
        "branch points: " + " ".join(fmt(complex(b)) for b in curve.roots),
        "canonical basis: " + ", ".join(names),
        "weierstrass: " + ", ".join(repr(p) for p in wp),
    ]
    text = "\n".join(lines) + "\n"
    run.write("curve_info.txt", text)
    print(text, end="")


def cmd_mesh(cfg, run: RunDir):
    mesh = build_mesh(bolza_group(), cfg["mesh.refinement"])
    run.write("mesh.txt", mesh_snapshot(mesh))
    area = float(mesh.hyperbolic_areas.sum())
    print(f"triangles: {mesh.n_triangles}")
    print(f"dofs: {mesh.n_dofs}")
    print(f"euler characteristic: {mesh.euler_characteristic()}")
    print(f"area: {fmt(area)} (4 pi relative error {abs(area / (4 * np.pi) - 1):.3e})")


def cmd_continue(cfg, run: RunDir) -> int:
    from .blowup import xi_field, ZeroAlpha
    from .donaldson import NoConvergence, continuation

    mesh = _mesh_for(cfg, run)
    _, bb = _basis(mesh)
    beta0 = beta_for(cfg, mesh, bb)
    status = 0
    try:
        trace = continuation(beta0, cfg.schedule(), mesh, cfg.solver())
    except NoConvergence as exc:
        trace, status = exc.trace, EXIT_FAILURE
        log.error("continuation stopped: %s", exc)
    header = f"# gclab trace config_hash={cfg.hash()}\n"
    run.write("trace.txt", header + "".join(trace_line(r) + "\n" for r in trace.records))
    n = len(trace.states)
    for idx in range(max(0, n - 3), n):
        st = trace.states[idx]
        run.write(f"u_{idx:03d}.txt", field_dump("u", st.u, (0, 0)))
        run.write(f"eta_{idx:03d}.txt", field_dump("eta", st.eta, (1, 0)))
        try:
            run.write(f"xi_{idx:03d}.txt", field_dump("xi", xi_field(st, mesh).xi, (0, 0)))
        except ZeroAlpha:
            pass
    for r in trace.records:
        print(trace_line(r))
    return status


def _load_trace(cfg, run: RunDir, mesh, beta0):
    from .donaldson import state_from

    path = run.path / "trace.txt"
    if not path.exists():
        log.info("no trace in %s; running the continuation first", run.path)
        if cmd_continue(cfg, run) != 0:
            return None
    trace = read_trace(path)
    idx = len(trace.records) - 1
    if trace.records[idx].status != "ok":
        return None
    u = read_field(run.path / f"u_{idx:03d}.txt").real
    eta = read_field(run.path / f"eta_{idx:03d}.txt")
    trace.states = [state_from(u, eta, beta0, trace.records[idx].t, mesh)]
    return trace


def blowup_report_text(rep) -> str:
    out = ["# gclab blowup report", "PEAKS"]
    for k, pk in enumerate(rep.peaks):
        out.append(f"{k} {fmt(pk.point.real)} {fmt(pk.point.imag)} max_xi={fmt(pk.max_xi)} "
                   f"nearest={pk.nearest_weierstrass} distance={fmt(pk.weierstrass_distance)}")
    out.append("MASSES")
    for k, pk in enumerate(rep.peaks):
        est = pk.mass
        for r, m, o in zip(est.radii, est.masses, est.outer):
            out.append(f"{k} r={fmt(r)} mass={fmt(m)} mass_2r={fmt(o)}")
        out.append(f"{k} mhat={fmt(est.mhat)} deviation={fmt(est.deviation)} status={est.status}")
    out.append(f"total_mass={fmt(rep.total_mass)} rho_bound={fmt(rep.rho_bound)} within_bound={str(rep.total_within_bound).lower()}")
    out.append("PATTERNS")
    out += [f"k={p.k} m={p.m} N={p.N}" for p in rep.pattern_candidates]
    out.append("ORTHOGONALITY")
    for a in rep.orthogonality:
        out.append(f"orders={a.orders} degree={a.degree} dim={a.dim} residual={fmt(a.residual)}")
    out.append(f"floor={fmt(rep.floor)}")
    out.append("VERDICT")
    out.append(rep.verdict)
    c = rep.concentration
    out.append(f"concentration={c.kind} slope={fmt(c.slope)} ({c.diagnostic})")
    out.append(f"growth_last5={fmt(rep.growth)} rho_final={fmt(rep.rho_final)}")
    return "\n".join(out) + "\n"


def cmd_blowup(cfg, run: RunDir) -> int:
    from .blowup import analyze
    from .dolbeault import HarmonicBeltrami

    mesh = _mesh_for(cfg, run)
    _, bb = _basis(mesh)
    beta0 = beta_for(cfg, mesh, bb)
    trace = _load_trace(cfg, run, mesh, beta0)
    if trace is None:
        log.error("no completed trace to analyse")
        return EXIT_FAILURE
    rep = analyze(trace, mesh, bb, HarmonicBeltrami(beta0, None), radii=cfg["blowup.radii"])
    text = blowup_report_text(rep)
    run.write("blowup_report.txt", text)
    t, mx = trace.column("t"), trace.column("max_xi")
    run.write("plot_max_xi.dat", "".join(f"{fmt(np.log(a))} {fmt(b)}\n" for a, b in zip(t, mx)))
    for k, pk in enumerate(rep.peaks):
        run.write(f"plot_mass_{k}.dat", "".join(f"{fmt(r)} {fmt(m)}\n" for r, m in zip(pk.mass.radii, pk.mass.masses)))
    run.write("plot_orthogonality.dat", "".join(
        f"{i} {' '.join(str(n) for n in a.orders)} {fmt(a.residual)}\n" for i, a in enumerate(rep.orthogonality)))
    print(text, end="")
    return 0


def cmd_sigma(cfg, run: RunDir) -> int:
    from .sigma import (
        SearchBudgetExceeded,
        SearchOptions,
        enumerate_patterns,
        genus2_conic_residual,
        sigma_membership_residual,
        weierstrass_classification,
    )

    curve = curve_from(cfg)
    w = cfg.get("sigma.covector")
    if w is None:
        raise ConfigError("sigma.covector", "required for this command")
    w = np.array(w, dtype=complex)
    if len(w) != curve.dim_c2:
        raise ConfigError("sigma.covector", f"expected {curve.dim_c2} entries")
    if not np.any(w):
        raise ConfigError("sigma.covector", "zero covector")
    opts = SearchOptions(grid=cfg["sigma.grid"], max_evals=cfg["sigma.max_evals"],
                         threshold=cfg["sigma.threshold"], seed=cfg["seed"])
    patterns = enumerate_patterns(curve.genus)
    out = [f"# gclab sigma report genus={curve.genus}", f"patterns {len(patterns)}"]
    members, partial = [], False
    for p in patterns:
        try:
            rep = sigma_membership_residual(curve, w, p, opts)
        except SearchBudgetExceeded as exc:
            rep, partial = exc.report, True
            log.warning("search budget exhausted for %s; partial report", p)
        out.append(f"k={p.k} m={p.m} N={p.N} residual={fmt(rep.residual)} divisor={rep.best_divisor!r}")
        if rep.residual <= opts.threshold:
            members.append(p)
    if curve.genus == 2:
        out.append(f"conic_residual={fmt(genus2_conic_residual(w))}")
        out.append(f"classification={weierstrass_classification(curve, w).kind}")
    out.append("verdict: " + ("in Sigma (patterns " + ", ".join(f"{p.N}" for p in members) + ")"
                              if members else "generic (outside Sigma)"))
    if partial:
        out.append("warning: partial report, search budget exhausted")
    text = "\n".join(out) + "\n"
    run.write("sigma_report.txt", text)
    print(text, end="")
    return 0


def cmd_selftest(cfg, run: RunDir) -> int:
    from .selftest import run_all

    ok, text, secs = run_all(cfg)
    run.write("selftest.txt", text)
    print(text, end="")
    print(f"wall clock {secs:.0f} s")
    return 0 if ok else EXIT_FAILURE


COMMANDS = {
    "curve-info": cmd_curve_info,
    "mesh": cmd_mesh,
    "continue": cmd_continue,
    "blowup": cmd_blowup,
    "sigma": cmd_sigma,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gclab", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print("config error: GCLAB_THREADS must be a positive integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.seed is not None:
            cfg.values["seed"] = args.seed
        run = RunDir(args.out or cfg["output_dir"], cfg, args.command)
        status = COMMANDS[args.command](cfg, run) or 0
        run.close()
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationMismatch as exc:
        print(f"identification mismatch: {exc}", file=sys.stderr)
        return EXIT_IDENT
    except MeshFileCorrupt as exc:
        print(f"mesh file: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
