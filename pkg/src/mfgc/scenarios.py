"""Scenario configuration, the two reference problems, symmetry-breaking perturbations and the one-shot oracle.

Scenario files are flat ``key = value`` text with dotted keys
(``model.lambda = 0.9``).  Vectors are comma lists; lists of records are
``;``-separated comma lists.  Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import build_boundary
from .drift import DriftParams, Kernel
from .grid import SpaceTimeGrid
from .numham import HamiltonianParams
from .problem import Problem


@dataclass
class FieldSpec:
    """Piecewise description of a grid function.

    ``const``: ``value`` everywhere.  ``rects``: ``value`` as background with
    each rectangle ``(x1_lo, x1_hi, x2_lo, x2_hi, v)`` (closed, later ones win)
    set to ``v``.  ``ramp_x1``: from ``ramp = (xa, xb, va, vb)``, ``va`` for
    ``x1 <= xa``, ``vb`` for ``x1 >= xb``, linear in between.  A positive
    ``mass`` rescales the result so that ``sum * h1 * h2 = mass``.
    """

    kind: str = "const"
    value: float = 0.0
    rects: list = field(default_factory=list)
    ramp: tuple = ()
    mass: float = 0.0

    def evaluate(self, grid: SpaceTimeGrid, tol: float = 1e-9) -> np.ndarray:
        x1 = grid.coords[..., 0]
        x2 = grid.coords[..., 1]
        if self.kind == "const":
            out = np.full(grid.shape, float(self.value))
        elif self.kind == "rects":
            out = np.full(grid.shape, float(self.value))
            for a1, b1, a2, b2, v in self.rects:
                inside = (x1 >= a1 - tol) & (x1 <= b1 + tol) & (x2 >= a2 - tol) & (x2 <= b2 + tol)
                out[inside] = v
        elif self.kind == "ramp_x1":
            xa, xb, va, vb = self.ramp
            out = np.interp(x1, [xa, xb], [va, vb])
        else:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.mass > 0:
            total = out.sum() * grid.h1 * grid.h2
            if total <= 0:
                raise ValueError("cannot normalize a field with nonpositive mass")
            out = out * (self.mass / total)
        return out


@dataclass
class DomainSpec:
    x_lo: tuple = (-0.5, -0.5)
    x_hi: tuple = (0.5, 0.5)
    T: float = 1.0


@dataclass
class GridSpec:
    nx1: int = 26
    nx2: int = 26
    nt: int = 26


@dataclass
class ModelSpec:
    nu: float = 1e-3
    lam: float = 0.9
    theta: float = 1.0
    c: float = 1e-3
    a_mode: str = "unit"
    a_tilde: float = 1.0
    eps: float = 0.0


@dataclass
class KernelSpec:
    variant: str = "radial"
    rho: float = 0.2
    omega0: float = 0.0


@dataclass
class DriftSpec:
    L: int = 1
    sweep: str = "gauss_seidel"
    z_floor: float = 1e-12


@dataclass
class BoundarySegments:
    """Records ``edge, lo, hi, kind, u[, inflow]``; edges not listed are walls."""

    segments: list = field(default_factory=list)


@dataclass
class PerturbationSpec:
    kind: str = "none"
    amplitude: float = 0.01
    pi: float = 0.0
    stages: int = 4


@dataclass
class ContinuationSpec:
    parameter: str = ""
    values: list = field(default_factory=list)


@dataclass
class SolverSpec:
    tol_outer: float = 1e-8
    tol_inner: float = 1e-7
    max_newton: int = 30
    max_bicgstab: int = 400
    hjb_tol: float = 1e-10
    warmup: int = 4


@dataclass
class OutputSpec:
    snapshots: list = field(default_factory=list)


# file key -> attribute name where they differ
_ALIASES = {"lambda": "lam"}
_SECTIONS = ("domain", "grid", "model", "kernel", "drift", "f0", "m0", "phi", "bc", "perturbation",
             "continuation", "solver", "output")


@dataclass
class ScenarioConfig:
    name: str = "custom"
    domain: DomainSpec = field(default_factory=DomainSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    drift: DriftSpec = field(default_factory=DriftSpec)
    f0: FieldSpec = field(default_factory=FieldSpec)
    m0: FieldSpec = field(default_factory=lambda: FieldSpec("const", 1.0))
    phi: FieldSpec = field(default_factory=FieldSpec)
    bc: BoundarySegments = field(default_factory=BoundarySegments)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    continuation: ContinuationSpec = field(default_factory=ContinuationSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    # ---- validation and construction -------------------------------------------------

    def validate(self) -> "ScenarioConfig":
        self.space_time_grid()
        self.hamiltonian()
        k = self.kernel_obj()
        DriftParams(self.drift.L, self.drift.sweep, self.drift.z_floor)
        size = min(self.domain.x_hi[0] - self.domain.x_lo[0], self.domain.x_hi[1] - self.domain.x_lo[1])
        if k.rho >= 2 * max(self.domain.x_hi[0] - self.domain.x_lo[0], self.domain.x_hi[1] - self.domain.x_lo[1]):
            raise ValueError("kernel radius exceeds the domain")
        del size
        if self.model.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.model.a_mode not in ("unit", "normalized"):
            raise ValueError(f"unknown a_mode {self.model.a_mode!r}")
        if self.perturbation.kind not in PERTURBATION_KINDS + ("none",):
            raise ValueError(f"unknown perturbation kind {self.perturbation.kind!r}")
        for seg in self.bc.segments:
            if len(seg) < 5 or seg[0] not in ("left", "right", "bottom", "top") or \
                    seg[3] not in ("entrance", "exit", "wall"):
                raise ValueError(f"bad boundary segment {seg!r}")
        return self

    def space_time_grid(self) -> SpaceTimeGrid:
        d, g = self.domain, self.grid
        return SpaceTimeGrid(g.nx1, g.nx2, g.nt, tuple(d.x_lo), tuple(d.x_hi), d.T)

    def hamiltonian(self) -> HamiltonianParams:
        m = self.model
        if m.a_mode == "normalized":
            return HamiltonianParams.normalized(m.lam, m.theta, m.a_tilde, m.eps)
        return HamiltonianParams(m.lam, m.theta, m.a_tilde, m.eps)

    def kernel_obj(self) -> Kernel:
        k = self.kernel
        return Kernel(k.variant, k.rho, k.omega0 if k.variant == "cone" else None)

    def initial_density(self, grid: SpaceTimeGrid | None = None) -> np.ndarray:
        grid = grid or self.space_time_grid()
        m0 = self.m0.evaluate(grid)
        p = self.perturbation
        if p.kind != "none" and p.pi > 0:
            m0 = perturbed_density(grid, m0, p.kind, p.amplitude * p.pi)
        return m0

    def boundary_segments(self):
        out = []
        for seg in self.bc.segments:
            rec = dict(edge=seg[0], lo=float(seg[1]), hi=float(seg[2]), kind=seg[3], u=float(seg[4]))
            if len(seg) > 5:
                rec["inflow"] = float(seg[5])
            out.append(rec)
        return out

    def build(self) -> Problem:
        self.validate()
        g = self.space_time_grid()
        return Problem(
            grid=g, nu=self.model.nu, ham=self.hamiltonian(), c=self.model.c,
            f0=self.f0.evaluate(g), m0=self.initial_density(g), phi=self.phi.evaluate(g),
            kernel=self.kernel_obj(),
            drift=DriftParams(self.drift.L, self.drift.sweep, self.drift.z_floor),
            bc=build_boundary(g, self.boundary_segments()),
        )

    # ---- overrides and serialization --------------------------------------------------

    def with_overrides(self, overrides: dict) -> "ScenarioConfig":
        """Copy with dotted-key string overrides applied, e.g. ``{"model.nu": "0.1"}``."""
        new = dataclasses.replace(self, **{s: dataclasses.replace(getattr(self, s)) for s in _SECTIONS})
        for key, raw in overrides.items():
            _assign(new, key, raw)
        return new.validate()

    def to_text(self) -> str:
        lines = [f"name = {self.name}"]
        for sec in _SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                fname = next((k for k, v in _ALIASES.items() if v == f.name), f.name)
                lines.append(f"{sec}.{fname} = {_fmt(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        cfg = cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            _assign(cfg, key, raw)
        return cfg.validate()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            return "; ".join(", ".join(_fmt(x) for x in rec) for rec in v)
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scalar(tok: str):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def _parse_like(default, raw: str):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, str):
        return raw
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.split(",")) if raw else ()
    if isinstance(default, list):
        if not raw:
            return []
        if ";" in raw:
            return [tuple(_scalar(x) for x in rec.split(",")) for rec in raw.split(";") if rec.strip()]
        items = [_scalar(x) for x in raw.split(",")]
        return items
    raise TypeError(f"cannot parse into {type(default).__name__}")


_RECORD_FIELDS = {("f0", "rects"), ("m0", "rects"), ("phi", "rects"), ("bc", "segments")}


def _assign(cfg: ScenarioConfig, key: str, raw: str):
    if key == "name":
        cfg.name = raw
        return
    if "." not in key:
        raise KeyError(f"unknown key {key!r}")
    sec, name = key.split(".", 1)
    if sec not in _SECTIONS:
        raise KeyError(f"unknown section {sec!r}")
    obj = getattr(cfg, sec)
    attr = _ALIASES.get(name, name)
    if attr not in {f.name for f in dataclasses.fields(obj)}:
        raise KeyError(f"unknown key {key!r}")
    val = _parse_like(getattr(obj, attr), raw)
    if (sec, attr) in _RECORD_FIELDS and val and not isinstance(val[0], tuple):
        val = [tuple(val)]
    setattr(obj, attr, val)


# ---- reference scenarios -----------------------------------------------------------------

def example1(**overrides) -> ScenarioConfig:
    """Two groups in opposite corners crossing to targets in the two other corners.

    Defaults: nu = 1e-3, lambda = 0.9, theta = 1, c = 1e-3, rho = 0.2 on
    (-0.5, 0.5)^2 with T = 1.  ``m0`` is 10 on the bottom-left and top-right
    0.2 x 0.2 squares over a 1e-4 background, normalized to unit mass;
    ``phi`` is 0 on the top-left and bottom-right squares and 1 elsewhere;
    ``f0 = 0.1 * phi``.  Keyword overrides use dotted keys with ``__`` for
    the dot, e.g. ``model__nu=0.5``.
    """
    lo, hi = -0.5, 0.5
    w = 0.2
    cfg = ScenarioConfig(
        name="example1",
        domain=DomainSpec((lo, lo), (hi, hi), 1.0),
        grid=GridSpec(26, 26, 26),
        model=ModelSpec(nu=1e-3, lam=0.9, theta=1.0, c=1e-3),
        kernel=KernelSpec("radial", 0.2),
        drift=DriftSpec(),
        m0=FieldSpec("rects", 1e-4, [(lo, lo + w, lo, lo + w, 10.0), (hi - w, hi, hi - w, hi, 10.0)], mass=1.0),
        phi=FieldSpec("rects", 1.0, [(lo, lo + w, hi - w, hi, 0.0), (hi - w, hi, lo, lo + w, 0.0)]),
        f0=FieldSpec("rects", 0.1, [(lo, lo + w, hi - w, hi, 0.0), (hi - w, hi, lo, lo + w, 0.0)]),
        output=OutputSpec([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]),
    )
    return cfg.with_overrides(_kw(overrides))


def example2(variant: str = "queue", **overrides) -> ScenarioConfig:
    """Crowd crossing a hall from an entrance (left) to an exit (right).

    ``variant = "constant"`` uses ``f0 = 1``; ``"queue"`` the ramp 4 -> 1 across
    ``x1 in [-0.1, 0.1]``.  Both use nu = 1e-3, a_tilde = 2, lambda = theta =
    0.95, rho = 0.25, omega0 = pi/3 on a 101 x 21 grid with 101 time steps.
    """
    if variant == "constant":
        f0 = FieldSpec("const", 1.0)
    elif variant == "queue":
        f0 = FieldSpec("ramp_x1", ramp=(-0.1, 0.1, 4.0, 1.0))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    cfg = ScenarioConfig(
        name=f"example2-{variant}",
        domain=DomainSpec((-1.0, -0.1), (1.0, 0.1), 8.0),
        grid=GridSpec(101, 21, 101),
        model=ModelSpec(nu=1e-3, lam=0.95, theta=0.95, c=0.0, a_mode="normalized", a_tilde=2.0),
        kernel=KernelSpec("cone", 0.25, math.pi / 3),
        drift=DriftSpec(),
        m0=FieldSpec("const", 1e-4),
        phi=FieldSpec("const", 0.0),
        f0=f0,
        bc=BoundarySegments([("left", -0.05, 0.05, "entrance", 6.0, 2.0), ("right", -0.05, 0.05, "exit", -4.0)]),
        output=OutputSpec([0.0, 0.4, 0.8, 2.0, 4.0, 7.0]),
    )
    return cfg.with_overrides(_kw(overrides))


def _kw(overrides: dict) -> dict:
    return {k.replace("__", "."): str(v) for k, v in overrides.items()}


# ---- perturbations -----------------------------------------------------------------------

PERTURBATION_KINDS = ("bottom-top", "reflected", "one-diagonal")


def _swap_diag(r):
    a1, b1, a2, b2 = r
    return (a2, b2, a1, b1)


def _swap_anti(r):
    a1, b1, a2, b2 = r
    return (-b2, -a2, -b1, -a1)


def perturbation_rects(grid: SpaceTimeGrid, kind: str):
    """Rectangles carrying the extra mass, as ``(x1_lo, x1_hi, x2_lo, x2_hi)`` in domain coordinates.

    The bottom bump sits on the right half of the bottom edge and the top bump
    is its point reflection through the centre.
    """
    (x1l, x2l), (x1h, x2h) = (grid.x_lo, grid.x_hi)
    c1, c2 = 0.5 * (x1l + x1h), 0.5 * (x2l + x2h)
    L1, L2 = x1h - x1l, x2h - x2l
    bottom = (c1, c1 + 0.3 * L1, x2l, x2l + 0.1 * L2)
    top = (2 * c1 - bottom[1], 2 * c1 - bottom[0], 2 * c2 - bottom[3], 2 * c2 - bottom[2])
    if kind == "bottom-top":
        return [bottom, top]
    if kind == "reflected":
        return [_swap_diag(bottom), _swap_diag(top)]
    if kind == "one-diagonal":
        return [top, _swap_anti(top)]
    raise ValueError(f"unknown perturbation kind {kind!r}")


def perturbation_bump(grid: SpaceTimeGrid, kind: str, tol: float = 1e-9) -> np.ndarray:
    """Indicator of the perturbation rectangles scaled to unit mass."""
    x1 = grid.coords[..., 0]
    x2 = grid.coords[..., 1]
    bump = np.zeros(grid.shape)
    for a1, b1, a2, b2 in perturbation_rects(grid, kind):
        bump[(x1 >= a1 - tol) & (x1 <= b1 + tol) & (x2 >= a2 - tol) & (x2 <= b2 + tol)] = 1.0
    return bump / (bump.sum() * grid.h1 * grid.h2)


def perturbed_density(grid: SpaceTimeGrid, m0: np.ndarray, kind: str, weight: float) -> np.ndarray:
    """``m0 + weight * mass(m0) * bump`` rescaled to the mass of ``m0``."""
    mass = m0.sum()
    out = m0 + weight * mass * grid.h1 * grid.h2 * perturbation_bump(grid, kind)
    return out * (mass / out.sum())


def perturbation_family(grid: SpaceTimeGrid, m0: np.ndarray, kind: str, amplitude: float = 0.01,
                        n_stages: int = 4) -> list:
    """Densities for ``pi_n = 1 - n / n_stages``, ``n = 0 .. n_stages``; the last one is ``m0``."""
    if amplitude <= 0:
        raise ValueError("amplitude must be positive")
    if n_stages < 1:
        raise ValueError("need at least one stage")
    pis = 1.0 - np.arange(n_stages + 1) / n_stages
    return [perturbed_density(grid, m0, kind, amplitude * p) if p > 0 else m0.copy() for p in pis]


# ---- one-shot one-dimensional game --------------------------------------------------------

@dataclass(frozen=True)
class OneShotResult:
    alpha_star: float
    V_star: float
    J_mfg: float
    alpha_mftc: float
    J_mftc: float


def oneshot_best_response(V: float, F: float, a: float, lam: float, theta: float) -> float:
    """Optimal constant speed given the average speed ``V``."""
    return math.sqrt((2 * F + a * theta * lam**2 * V**2) / a)


def oneshot_oracle(F: float, a_tilde: float, lam: float, theta: float, ell: float = 2.0) -> OneShotResult:
    """Closed-form equilibrium and cooperative optimum of the static crossing game with ``a = a_tilde / (1 - lam^2 theta)``."""
    if lam == 1 and theta == 1:
        raise ValueError("no mean field equilibrium when lambda = theta = 1")
    if not (F > 0 and a_tilde > 0 and abs(lam) < 1 and 0 < theta <= 1 and ell > 0):
        raise ValueError("need F > 0, a_tilde > 0, |lambda| < 1, 0 < theta <= 1, ell > 0")
    a = a_tilde / (1 - lam**2 * theta)
    alpha = math.sqrt(2 * F / (a * (1 - theta * lam**2)))
    J_mfg = ell * (1 - lam * theta) / (1 - lam**2 * theta) * math.sqrt(2 * F * a_tilde)
    alpha2 = math.sqrt(2 * F / (a * (1 - 2 * theta * lam + theta * lam**2)))
    J_mftc = ell * math.sqrt(2 * F * a * (1 - lam * theta * (2 - lam)))
    return OneShotResult(alpha, alpha, J_mfg, alpha2, J_mftc)
