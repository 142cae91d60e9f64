"""JSON problem configuration.

A config is one JSON object::

    {
      "name": "gheat_convex",
      "dimensions": {"n": 1, "d": 1, "m": 1},
      "generator": {"atoms": [{"sigma": [[0.25]], "penalty": 0.0}, ...], "sigma_min": 0.25},
      "coefficients": {"b": [...], "h": [[[...]]], "sigma": [[...]], "f": "0",
                       "g": [[...]], "Phi": "x1^2"},
      "lipschitz_L": 1.0,
      "controls": {"lower": [-1], "upper": [1], "points": [5]},
      "grid": {"lower": [-4], "upper": [4], "points": [161], "t0": 0, "T": 1, "steps": 200},
      "solver": {"picard_iters": 1, "quadrature": {"rule": "local"},
                 "rng_seed": 0, "hjb_substeps": "auto"},
      "checks": {...},
      "output": {"dir": "out"}
    }

Omitted coefficients are zero.  Every rejected invariant carries its own
diagnostic code (see :data:`DIAGNOSTICS`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError, ParseError
from .generators import Generator, PSD_TOL, SYMMETRY_TOL
from .hjb import CFL_LIMIT, HamiltonianContext, auto_substeps, cfl_number, min_stencil_weight
from .lattice import (
    LocalLattice,
    Quadrature,
    SpaceGrid,
    TimeGrid,
    aligned_lattice_scale,
    gauss_quadrature,
    lattice_quadrature,
)
from .problem import ControlProblem, check_coefficients_finite, control_grid_from_box

DIAGNOSTICS = {
    "CFG001": "config is not valid JSON",
    "CFG002": "config root is not an object or has unknown sections",
    "CFG003": "required section missing",
    "CFG010": "dimensions n, d, m must be positive integers",
    "CFG020": "generator atom has the wrong shape",
    "CFG021": "generator atom is not symmetric",
    "CFG022": "generator atom violates the ellipticity floor",
    "CFG023": "generator penalty is negative or non-finite",
    "CFG024": "no generator atom has zero penalty",
    "CFG025": "sigma_min must be positive",
    "CFG026": "generator has no atoms",
    "CFG030": "coefficient has the wrong shape",
    "CFG031": "coefficient expression has a syntax error",
    "CFG032": "coefficient references an undeclared variable or function",
    "CFG033": "coefficient expression has a function arity error",
    "CFG034": "coefficient expression exceeds the size limit",
    "CFG040": "control box is malformed",
    "CFG041": "explicit control point lies outside the control box",
    "CFG050": "space grid is malformed",
    "CFG051": "time grid is malformed",
    "CFG060": "solver option is invalid",
    "CFG061": "quadrature specification is invalid",
    "CFG070": "lipschitz_L must be positive",
    "CFG080": "checks section is invalid",
    "CFG101": "explicit finite-difference scheme violates the CFL bound",
    "CFG102": "finite-difference stencil has a negative weight",
    "CFG201": "time step violates the contraction condition delta * L < 1",
    "CFG301": "h is not symmetric in its matrix indices",
    "CFG302": "g is not symmetric in its matrix indices",
    "CFG303": "a coefficient exceeds the declared Lipschitz constant",
    "CFG304": "a coefficient is not finite on the grid",
    "CFG305": "the terminal payoff is not finite on the grid",
}

_SECTIONS = {"name", "description", "dimensions", "generator", "coefficients", "lipschitz_L",
             "controls", "grid", "solver", "checks", "output"}

DEFAULT_CHECKS = {
    "structure_trials": 200,
    "comparison_trials": 100,
    "gprime_trials": 100,
    "monotone_nodes": 50,
    "dpp_levels": [0],
    "dpp_windows": [1, 2, 4],
    "dpp_ratio_steps": [64, 128],
    "dpp_ratio_window": 4,
    "dpp_ratio_max": 0.7,
    "freezing": {"phi": None, "t": 0.0, "x": None, "deltas": [0.1, 0.05, 0.025],
                 "min_order": 1.4},
    "cross_solver_tol": 5e-2,
    "regularity_tol": 0.10,
    "sweep_levels": 2,
}


def _fail(code, message):
    raise ConfigurationError(f"{message} ({DIAGNOSTICS[code]})", code=code)


@dataclass
class ProblemConfig:
    name: str
    prob: ControlProblem
    gen: Generator
    tgrid: TimeGrid
    sgrid: SpaceGrid
    quad: Quadrature | LocalLattice
    quad_spec: dict
    picard_iters: int = 1
    rng_seed: int = 0
    hjb_substeps: int = 1
    checks: dict = field(default_factory=dict)
    output_dir: str = "out"
    raw: dict = field(default_factory=dict)

    @property
    def context(self) -> HamiltonianContext:
        return HamiltonianContext(self.prob, self.gen)

    @property
    def box(self):
        return (np.asarray(self.sgrid.lower, dtype=float), np.asarray(self.sgrid.upper, dtype=float))

    def quadrature_for(self, tgrid: TimeGrid, sgrid: SpaceGrid):
        """Quadrature rebuilt for other grids (the aligned lattice scale depends on them)."""
        return build_quadrature(self.quad_spec, self.prob, self.gen, tgrid, sgrid)

    def refined(self, level: int):
        """``(tgrid, sgrid)`` at ``(delta / 2^level, h / sqrt(2)^level)``.

        The spatial point count is rounded to the nearest integer spacing.
        """
        tg = TimeGrid(self.tgrid.t0, self.tgrid.T, self.tgrid.steps * 2 ** level)
        pts = tuple(int(round((p - 1) * math.sqrt(2.0) ** level)) + 1 for p in self.sgrid.points)
        return tg, SpaceGrid(self.sgrid.lower, self.sgrid.upper, pts)


def diffusion_amplitude(prob: ControlProblem, gen: Generator, sgrid: SpaceGrid, t: float = 0.0) -> float:
    """Largest per-axis standard deviation rate ``sqrt(max diag(sigma S sigma^T))``."""
    X = sgrid.coords
    amp = 0.0
    for u in prob.control_grid:
        sig = prob.diffusion(t, X, u)
        for S in gen.sigmas:
            cov = np.einsum("Nnd,de,Nme->Nnm", sig, S, sig)
            diag = np.diagonal(cov, axis1=1, axis2=2)
            amp = max(amp, float(np.sqrt(np.max(diag))))
    return amp


def build_quadrature(rule_opts: dict, prob, gen, tgrid, sgrid):
    """``local`` (default): :class:`LocalLattice` on the grid spacing;
    ``lattice``: one fixed three-point scale (``"auto"`` aligns the widest
    atom at ``t0``); ``gauss``: Gauss-Hermite with ``points`` per axis."""
    rule = rule_opts.get("rule", "local")
    if rule == "local":
        return LocalLattice(prob.d, tuple(sgrid.h))
    if rule == "gauss":
        return gauss_quadrature(prob.d, int(rule_opts.get("points", 3)))
    scale = rule_opts.get("scale", "auto")
    if scale == "auto":
        amp = diffusion_amplitude(prob, gen, sgrid, tgrid.t0)
        if amp == 0.0:
            return lattice_quadrature(prob.d, 1.0)
        scale = aligned_lattice_scale(tgrid.delta, float(np.min(sgrid.h)), amp)
    return lattice_quadrature(prob.d, float(scale))


# ------------------------------------------------------------------ parsing


def _int(value, code, what, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value) \
            or int(value) < minimum:
        _fail(code, f"{what} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _num(value, code, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(code, f"{what} must be a finite number, got {value!r}")
    return float(value)


def _vec(value, length, code, what):
    if not isinstance(value, list) or len(value) != length:
        _fail(code, f"{what} must be a list of {length} numbers")
    return [_num(v, code, what) for v in value]


def _parse_generator(block, d):
    if not isinstance(block, dict):
        _fail("CFG003", "generator section must be an object")
    atoms = block.get("atoms")
    if not isinstance(atoms, list) or not atoms:
        _fail("CFG026", "generator.atoms must be a nonempty list")
    sigma_min = block.get("sigma_min")
    if isinstance(sigma_min, bool) or not isinstance(sigma_min, (int, float)) \
            or not (math.isfinite(sigma_min) and sigma_min > 0):
        _fail("CFG025", f"sigma_min = {sigma_min!r}")
    pairs = []
    for k, atom in enumerate(atoms):
        if not isinstance(atom, dict) or "sigma" not in atom:
            _fail("CFG020", f"atom {k} needs a 'sigma' matrix")
        try:
            S = np.asarray(atom["sigma"], dtype=float)
        except (TypeError, ValueError):
            _fail("CFG020", f"atom {k} sigma is not a numeric matrix")
        if S.shape != (d, d) or not np.all(np.isfinite(S)):
            _fail("CFG020", f"atom {k} sigma must be a finite {d}x{d} matrix")
        if np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
            _fail("CFG021", f"atom {k}")
        lam = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
        if lam < sigma_min - PSD_TOL:
            _fail("CFG022", f"atom {k}: smallest eigenvalue {lam:.6g} < sigma_min {sigma_min:.6g}")
        c = atom.get("penalty", 0.0)
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c) or c < 0:
            _fail("CFG023", f"atom {k} penalty = {c!r}")
        pairs.append((S, float(c)))
    if min(c for _, c in pairs) != 0.0:
        _fail("CFG024", "penalties " + ", ".join(f"{c:g}" for _, c in pairs))
    return Generator(pairs, float(sigma_min))


def _shape_check(value, shape, what):
    """``value`` must be nested lists of strings/numbers with the given shape."""
    if not shape:
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            _fail("CFG030", f"{what} entries must be strings or numbers")
        return
    if not isinstance(value, list) or len(value) != shape[0]:
        _fail("CFG030", f"{what} must have shape {shape}")
    for v in value:
        _shape_check(v, shape[1:], what)


def _parse_problem(cfg, n, d, m, gen):
    coeffs = cfg.get("coefficients")
    if not isinstance(coeffs, dict):
        _fail("CFG003", "coefficients section must be an object")
    unknown = set(coeffs) - {"b", "h", "sigma", "f", "g", "Phi"}
    if unknown:
        _fail("CFG030", f"unknown coefficient(s) {sorted(unknown)}")
    shapes = {"b": (n,), "h": (d, d, n), "sigma": (n, d), "f": (), "g": (d, d), "Phi": ()}
    for key, shape in shapes.items():
        if key in coeffs:
            _shape_check(coeffs[key], shape, key)
    L = cfg.get("lipschitz_L")
    if isinstance(L, bool) or not isinstance(L, (int, float)) or not (math.isfinite(L) and L > 0):
        _fail("CFG070", f"lipschitz_L = {L!r}")

    controls = cfg.get("controls")
    if not isinstance(controls, dict):
        _fail("CFG003", "controls section must be an object")
    lower = _vec(controls.get("lower"), m, "CFG040", "controls.lower")
    upper = _vec(controls.get("upper"), m, "CFG040", "controls.upper")
    if any(a > b for a, b in zip(lower, upper)):
        _fail("CFG040", "controls.lower must not exceed controls.upper")
    if "grid" in controls:
        pts = controls["grid"]
        if not isinstance(pts, list) or not pts:
            _fail("CFG040", "controls.grid must be a nonempty list of points")
        grid = np.array([_vec(p, m, "CFG040", "controls.grid point") for p in pts])
        if np.any(grid < np.array(lower) - 1e-12) or np.any(grid > np.array(upper) + 1e-12):
            _fail("CFG041", "controls.grid")
    else:
        points = controls.get("points")
        if not isinstance(points, list) or len(points) != m:
            _fail("CFG040", f"controls.points must list {m} counts")
        points = [_int(p, "CFG040", "controls.points") for p in points]
        grid = control_grid_from_box(lower, upper, points)

    try:
        return ControlProblem.from_strings(
            n, d, m,
            b=coeffs.get("b"), h=coeffs.get("h"), sigma=coeffs.get("sigma"),
            f=coeffs.get("f", "0"), g=coeffs.get("g"), Phi=coeffs.get("Phi", "0"),
            control_grid=grid, lipschitz_L=float(L),
            control_lower=lower, control_upper=upper, name=str(cfg.get("name", "")),
        )
    except ParseError as exc:
        code = {"name": "CFG032", "arity": "CFG033", "size": "CFG034"}.get(exc.kind, "CFG031")
        _fail(code, str(exc))
    except InvalidInputError as exc:
        _fail("CFG030", str(exc))


def _parse_grids(cfg, n):
    grid = cfg.get("grid")
    if not isinstance(grid, dict):
        _fail("CFG003", "grid section must be an object")
    lower = _vec(grid.get("lower"), n, "CFG050", "grid.lower")
    upper = _vec(grid.get("upper"), n, "CFG050", "grid.upper")
    points = grid.get("points")
    if not isinstance(points, list) or len(points) != n:
        _fail("CFG050", f"grid.points must list {n} counts")
    points = [_int(p, "CFG050", "grid.points", minimum=3) for p in points]
    if any(a >= b for a, b in zip(lower, upper)):
        _fail("CFG050", "grid.lower must be below grid.upper")
    t0 = _num(grid.get("t0", 0.0), "CFG051", "grid.t0")
    T = _num(grid.get("T"), "CFG051", "grid.T")
    steps = _int(grid.get("steps"), "CFG051", "grid.steps")
    if not (0 <= t0 < T):
        _fail("CFG051", f"need 0 <= t0 < T, got t0={t0}, T={T}")
    return TimeGrid(t0, T, steps), SpaceGrid(tuple(lower), tuple(upper), tuple(points))


def _parse_solver(cfg):
    solver = cfg.get("solver", {})
    if not isinstance(solver, dict):
        _fail("CFG060", "solver section must be an object")
    picard = _int(solver.get("picard_iters", 1), "CFG060", "solver.picard_iters", minimum=0)
    seed = _int(solver.get("rng_seed", 0), "CFG060", "solver.rng_seed", minimum=0)
    sub = solver.get("hjb_substeps", "auto")
    if sub != "auto":
        sub = _int(sub, "CFG060", "solver.hjb_substeps")
    quad = solver.get("quadrature", {"rule": "local"})
    if not isinstance(quad, dict) or quad.get("rule", "local") not in ("local", "lattice", "gauss"):
        _fail("CFG061", "quadrature must be {'rule': 'local'|'lattice'|'gauss', ...}")
    if quad.get("rule", "local") == "local":
        pass
    elif quad.get("rule") == "gauss":
        _int(quad.get("points", 3), "CFG061", "quadrature.points", minimum=2)
    else:
        scale = quad.get("scale", "auto")
        if scale != "auto":
            s = _num(scale, "CFG061", "quadrature.scale")
            if s < 1.0:
                _fail("CFG061", f"lattice scale must be >= 1, got {s}")
    return picard, seed, sub, quad


def _parse_checks(cfg):
    checks = json.loads(json.dumps(DEFAULT_CHECKS))
    block = cfg.get("checks", {})
    if not isinstance(block, dict):
        _fail("CFG080", "checks must be an object")
    unknown = set(block) - set(DEFAULT_CHECKS)
    if unknown:
        _fail("CFG080", f"unknown check option(s) {sorted(unknown)}")
    for key, value in block.items():
        if key == "freezing":
            if not isinstance(value, dict) or set(value) - set(DEFAULT_CHECKS["freezing"]):
                _fail("CFG080", "checks.freezing has unknown fields")
            checks["freezing"].update(value)
        else:
            checks[key] = value
    for key in ("structure_trials", "comparison_trials", "gprime_trials", "monotone_nodes",
                "dpp_ratio_window"):
        _int(checks[key], "CFG080", f"checks.{key}")
    _int(checks["sweep_levels"], "CFG080", "checks.sweep_levels")
    return checks


def parse_config(cfg: dict) -> ProblemConfig:
    """Validate a decoded JSON document and build the solver objects."""
    if not isinstance(cfg, dict):
        _fail("CFG002", "config root must be a JSON object")
    unknown = set(cfg) - _SECTIONS
    if unknown:
        _fail("CFG002", f"unknown section(s) {sorted(unknown)}")
    for key in ("dimensions", "generator", "coefficients", "lipschitz_L", "controls", "grid"):
        if key not in cfg:
            _fail("CFG003", f"missing '{key}'")
    dims = cfg["dimensions"]
    if not isinstance(dims, dict):
        _fail("CFG010", "dimensions must be an object")
    n, d, m = (_int(dims.get(k), "CFG010", f"dimensions.{k}") for k in ("n", "d", "m"))
    gen = _parse_generator(cfg["generator"], d)
    prob = _parse_problem(cfg, n, d, m, gen)
    tgrid, sgrid = _parse_grids(cfg, n)
    picard, seed, sub, quad_spec = _parse_solver(cfg)
    checks = _parse_checks(cfg)
    output = cfg.get("output", {})
    out_dir = output.get("dir", "out") if isinstance(output, dict) else "out"

    box = (np.array(sgrid.lower), np.array(sgrid.upper))
    check_coefficients_finite(prob, sgrid.coords, tgrid.t0)
    prob.check_symmetry(box)
    prob.check_lipschitz(box)
    if tgrid.delta * prob.lipschitz_L >= 1.0:
        _fail("CFG201", f"delta * L = {tgrid.delta * prob.lipschitz_L:.6g} >= 1")

    ctx = HamiltonianContext(prob, gen)
    times = tuple(np.linspace(tgrid.t0, tgrid.T, 5)) if prob.time_dependent else (tgrid.t0,)
    if sub == "auto":
        sub = auto_substeps(ctx, tgrid, sgrid)
    fine = tgrid.delta / sub
    cfl = cfl_number(ctx, fine, sgrid, times)
    if cfl > CFL_LIMIT:
        _fail("CFG101", f"CFL number {cfl:.6g} > {CFL_LIMIT} with {sub} sub-step(s) of "
                        f"{fine:.6g}; at least {auto_substeps(ctx, tgrid, sgrid)} needed")
    w = min_stencil_weight(ctx, fine, sgrid, times)
    if w < -1e-12:
        _fail("CFG102", f"smallest stencil weight {w:.6g}")

    try:
        quad = build_quadrature(quad_spec, prob, gen, tgrid, sgrid)
    except InvalidInputError as exc:
        _fail("CFG061", str(exc))
    return ProblemConfig(
        name=str(cfg.get("name", "problem")), prob=prob, gen=gen, tgrid=tgrid, sgrid=sgrid,
        quad=quad, quad_spec=quad_spec, picard_iters=picard, rng_seed=seed, hjb_substeps=sub,
        checks=checks, output_dir=str(out_dir), raw=cfg,
    )


def load_config(path) -> ProblemConfig:
    """Read and validate a JSON config.  ``OSError`` propagates for I/O failures."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail("CFG001", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    return parse_config(cfg)


def shipped_configs() -> dict:
    """Names and paths of the configs bundled with the package."""
    root = Path(__file__).with_name("configs")
    return {p.stem: p for p in sorted(root.glob("*.json"))}
