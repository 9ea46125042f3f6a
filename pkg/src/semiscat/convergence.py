"""k-ladder experiments comparing quantum cross sections with classical targets."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ._quadrature import composite_gauss
from .classical import pushforward_integral, sigma_cl
from .errors import ConfigError
from .potential import Potential, PotentialError, impact_quadrature
from .quantum import (PhaseShiftTable, amplitude_mu, phase_shifts, sigma_angular,
                      total_xsec_optical)
from .rays import IntegratorOptions, nontrapping_scan

TEST_FUNCTIONS = ("const1", "cos_theta", "one_minus_cos", "bump")
BUMP_CENTER = math.radians(50.0)
BUMP_HALF_WIDTH = math.radians(20.0)


def smooth_bump(theta, center: float = BUMP_CENTER, half_width: float = BUMP_HALF_WIDTH):
    u = (np.asarray(theta, dtype=float) - center) / half_width
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


def test_function(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """phi as a function of the polar angle theta."""
    table = {
        "const1": lambda t: np.ones_like(np.asarray(t, dtype=float)),
        "cos_theta": lambda t: np.cos(t),
        "one_minus_cos": lambda t: 1.0 - np.cos(t),
        "bump": smooth_bump,
    }
    if name not in table:
        raise ConfigError(f"unknown test function {name!r}; choose from {', '.join(TEST_FUNCTIONS)}")
    return table[name]


def smooth_cap(theta, delta: float, width: float):
    """C-infinity step: 1 for theta < delta - width/2, 0 beyond delta + width/2."""
    u = (np.asarray(theta, dtype=float) - delta) / width + 0.5
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u < 1.0, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
        b = np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
    return a / (a + b)


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class Grids:
    points_per_panel: int = 20      # Gauss points on every theta panel
    fine_factor: float = 10.0       # fine panels have width <= pi / (fine_factor k)
    fine_extent: float = 40.0       # fine panels cover theta < fine_extent / k
    y_radial: int = 160
    y_azimuth: int = 48
    seed_grid: int = 80

    def refined(self) -> "Grids":
        return replace(self, points_per_panel=2 * self.points_per_panel)


@dataclass(frozen=True)
class RunConfig:
    potential: Potential
    k_ladder: tuple
    delta_list: tuple = (0.2, 0.3)
    test_functions: tuple = TEST_FUNCTIONS
    grids: Grids = Grids()
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "out"
    a3_amplitude: float = 1.2
    a3_angles_deg: tuple = (40.0, 60.0, 90.0)
    a3_k: tuple = (100.0, 200.0)
    integrator: IntegratorOptions = IntegratorOptions()

    @classmethod
    def reference(cls, **over) -> "RunConfig":
        base = dict(potential=Potential.radial_bump(1.0, plane_offset=2.0),
                    k_ladder=(25.0, 50.0, 100.0, 200.0))
        base.update(over)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"potential", "k_ladder", "delta_list", "test_functions", "grids",
                 "tolerances", "output_dir", "a3", "integrator"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            pot = Potential.from_dict(d.get("potential", {"dimension": 3, "parts": [
                {"center": [0, 0, 0], "radius": 1.0, "amplitude": 1.0}], "plane_offset": 2.0}))
        except PotentialError as exc:
            raise ConfigError(f"potential: {exc}") from None
        ladder = tuple(float(v) for v in d.get("k_ladder", (25, 50, 100, 200)))
        if not ladder:
            raise ConfigError("k_ladder must be non-empty")
        if any(k <= 0 for k in ladder):
            raise ConfigError("k_ladder entries must be positive")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("k_ladder must be strictly increasing")
        deltas = tuple(float(v) for v in d.get("delta_list", (0.2, 0.3)))
        for v in deltas:
            if not 0.0 < v <= math.pi / 4:
                raise ConfigError(f"delta_list entries must lie in (0, pi/4]; got {v}")
        tfs = tuple(d.get("test_functions", TEST_FUNCTIONS))
        for name in tfs:
            test_function(name)
        g = d.get("grids", {})
        try:
            grids = Grids(**g)
        except TypeError as exc:
            raise ConfigError(f"grids: {exc}") from None
        if grids.points_per_panel < 2 or grids.y_radial < 4 or grids.y_azimuth < 4 \
                or grids.seed_grid < 4:
            raise ConfigError("grids: quadrature orders must be at least 2 (4 for y grids)")
        if grids.fine_factor < 10.0:
            raise ConfigError("grids.fine_factor must be >= 10 so the forward peak is resolved")
        tol = dict(d.get("tolerances", {}))
        a3 = d.get("a3", {})
        integ = d.get("integrator", {})
        try:
            opts = IntegratorOptions(**integ)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"integrator: {exc}") from None
        return cls(potential=pot, k_ladder=ladder, delta_list=deltas, test_functions=tfs,
                   grids=grids, tolerances=tol, output_dir=str(d.get("output_dir", "out")),
                   a3_amplitude=float(a3.get("amplitude", 1.2)),
                   a3_angles_deg=tuple(float(v) for v in a3.get("angles_deg", (40, 60, 90))),
                   a3_k=tuple(float(v) for v in a3.get("k", (100, 200))),
                   integrator=opts)

    def to_dict(self) -> dict:
        return {
            "potential": self.potential.to_dict(),
            "k_ladder": list(self.k_ladder),
            "delta_list": list(self.delta_list),
            "test_functions": list(self.test_functions),
            "grids": self.grids.__dict__.copy(),
            "tolerances": dict(self.tolerances),
            "output_dir": self.output_dir,
            "a3": {"amplitude": self.a3_amplitude, "angles_deg": list(self.a3_angles_deg),
                   "k": list(self.a3_k)},
            "integrator": asdict(self.integrator),
        }


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_dict(data)


# -- angular quadrature --------------------------------------------------------------

def theta_rule(k: float, grids: Grids, breaks: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule in theta on [0, pi], weights include 2 pi sin(theta)."""
    fine_end = min(math.pi, grids.fine_extent / k)
    n_fine = max(1, math.ceil(fine_end / (math.pi / (grids.fine_factor * k))))
    n_coarse = max(1, math.ceil((math.pi - fine_end) / (math.pi / k))) if fine_end < math.pi else 0
    edges = list(np.linspace(0.0, fine_end, n_fine + 1))
    if n_coarse:
        edges += list(np.linspace(fine_end, math.pi, n_coarse + 1)[1:])
    edges = np.array(edges)
    for b in breaks:
        if 0.0 < b < math.pi and np.min(np.abs(edges - b)) > 1e-12:
            edges = np.sort(np.append(edges, b))
    t, w = composite_gauss(edges, grids.points_per_panel)
    return t, 2.0 * math.pi * np.sin(t) * w


def angular_integral(table: PhaseShiftTable, phi: Optional[Callable], grids: Grids,
                     lo: float = 0.0, hi: float = math.pi) -> float:
    """2 pi int_lo^hi |f(theta)|^2 phi(theta) sin(theta) dtheta."""
    t, w = theta_rule(table.k, grids, breaks=(lo, hi))
    sel = (t >= lo) & (t <= hi)
    t, w = t[sel], w[sel]
    f2 = np.abs(amplitude_mu(table, np.cos(t))) ** 2
    if phi is not None:
        f2 = f2 * phi(t)
    return float(np.dot(w, f2))


# -- the experiment context ----------------------------------------------------------

class Experiment:
    """Shared state for one configuration: phase-shift tables and classical targets."""

    def __init__(self, config: RunConfig, certify: bool = True,
                 tables: Optional[dict] = None):
        self.config = config
        self.pot = config.potential
        self._tables: dict[float, PhaseShiftTable] = dict(tables or {})
        self._pushforward: dict = {}
        self.nontrapping = None
        if certify and not self.pot.is_free:
            rep = nontrapping_scan(self.pot, opts=config.integrator)
            self.nontrapping = rep
            if not rep.ok:
                raise rep.trapped[0]

    @property
    def sigma_cl(self) -> float:
        return sigma_cl(self.pot)

    def table(self, k: float) -> PhaseShiftTable:
        if k not in self._tables:
            self._tables[k] = phase_shifts(self.pot, k)
        return self._tables[k]

    @property
    def y_rule(self):
        if "rule" not in self._pushforward:
            g = self.config.grids
            self._pushforward["rule"] = impact_quadrature(self.pot.impact_set(), g.y_radial,
                                                          g.y_azimuth)
        return self._pushforward["rule"]

    def classical_integral(self, key, phi_theta: Callable) -> float:
        """int |f_cl|^2 phi d mu = int over the impact region of phi(J(y)) dy."""
        if key not in self._pushforward:
            if self.pot.is_free:
                self._pushforward[key] = 0.0
            else:
                self._pushforward[key] = pushforward_integral(
                    self.pot, lambda J: phi_theta(np.arccos(np.clip(J[:, -1], -1.0, 1.0))),
                    y_grid=self.y_rule, opts=self.config.integrator)
        return self._pushforward[key]

    @property
    def cap_width(self) -> float:
        """Mollification width of the cap indicator: one fine theta panel at the top k."""
        return math.pi / (self.config.grids.fine_factor * max(self.config.k_ladder))

    def cap_integral(self, delta: float) -> float:
        w = self.cap_width
        return self.classical_integral(("cap", delta), lambda t: smooth_cap(t, delta, w))


def _errors_decreasing(errs: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(errs, errs[1:]))


# -- runs ---------------------------------------------------------------------------

def run_lemma1(exp: Experiment) -> dict:
    scl = exp.sigma_cl
    rows = []
    for k in exp.config.k_ladder:
        T = exp.table(k)
        so = total_xsec_optical(T)
        sa = angular_integral(T, None, exp.config.grids)
        ratio = so / (2 * scl) if scl > 0 else None
        rows.append({"k": k, "l_max": T.l_max, "sigma_optical": so, "sigma_angular": sa,
                     "sigma_angular_exact_rule": sigma_angular(T),
                     "identity_rel_err": abs(so - sa) / so if so > 0 else abs(so - sa),
                     "ratio": ratio, "error": abs(ratio - 1) if ratio is not None else None})
    errs = [r["error"] for r in rows]
    degenerate = scl == 0
    return {"sigma_cl": scl, "rows": rows, "degenerate": degenerate,
            "errors_decreasing": None if degenerate else _errors_decreasing(errs)}


def run_lemma2(exp: Experiment) -> dict:
    scl = exp.sigma_cl
    rows = []
    targets = {d: scl + exp.cap_integral(d) for d in exp.config.delta_list}
    for k in exp.config.k_ladder:
        T = exp.table(k)
        for d in exp.config.delta_list:
            M = angular_integral(T, None, exp.config.grids, 0.0, d)
            rows.append({"k": k, "delta": d, "M": M, "C": targets[d] - scl, "target": targets[d],
                         "rel_err": abs(M - targets[d]) / scl if scl > 0 else abs(M - targets[d])})
    trends = {}
    for d in exp.config.delta_list:
        errs = [r["rel_err"] for r in rows if r["delta"] == d]
        trends[d] = _errors_decreasing(errs) if scl > 0 else None
    return {"sigma_cl": scl, "cap_width": exp.cap_width, "rows": rows, "trend_decreasing": trends}


def run_weak_test(exp: Experiment) -> dict:
    scl = exp.sigma_cl
    rows = []
    for name in exp.config.test_functions:
        phi = test_function(name)
        push = exp.classical_integral(name, phi)
        rhs = push + scl * float(phi(np.array(0.0)))
        for k in exp.config.k_ladder:
            lhs = angular_integral(exp.table(k), phi, exp.config.grids)
            rows.append({"function": name, "k": k, "lhs": lhs, "pushforward": push, "rhs": rhs,
                         "rel_err": abs(lhs - rhs) / abs(rhs) if rhs != 0 else abs(lhs)})
    return {"sigma_cl": scl, "rows": rows}


def run_transport(exp: Experiment) -> dict:
    phi = test_function("one_minus_cos")
    T_cl = exp.classical_integral("one_minus_cos", phi)
    rows = []
    for k in exp.config.k_ladder:
        T = exp.table(k)
        tr = angular_integral(T, phi, exp.config.grids)
        rows.append({"k": k, "sigma_tr": tr, "T_cl": T_cl, "sigma": total_xsec_optical(T),
                     "ratio": tr / T_cl if T_cl > 0 else None})
    return {"T_cl": T_cl, "rows": rows}


def grid_refinement_check(exp: Experiment) -> dict:
    """Change of every angular integral at the top k when the theta rule is doubled."""
    k = max(exp.config.k_ladder)
    T = exp.table(k)
    g, g2 = exp.config.grids, exp.config.grids.refined()
    out = {}
    for name in exp.config.test_functions:
        phi = test_function(name)
        out[name] = abs(angular_integral(T, phi, g) - angular_integral(T, phi, g2))
    for d in exp.config.delta_list:
        out[f"M({d})"] = abs(angular_integral(T, None, g, 0, d) - angular_integral(T, None, g2, 0, d))
    return out


# -- report -------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


@dataclass
class ConvergenceReport:
    lemma1: dict
    lemma2: dict
    weak: dict
    transport: dict
    refinement: dict
    branches: dict = field(default_factory=dict)  # label -> list of Branch

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        p = out / "sigma_vs_k.csv"
        _write_csv(p, ["k", "l_max", "sigma_optical", "sigma_angular", "identity_rel_err",
                       "ratio", "error"], self.lemma1["rows"])
        paths.append(p)
        p = out / "forward_mass.csv"
        _write_csv(p, ["k", "delta", "M", "C", "target", "rel_err"], self.lemma2["rows"])
        paths.append(p)
        p = out / "weak_test.csv"
        _write_csv(p, ["function", "k", "lhs", "pushforward", "rhs", "rel_err"], self.weak["rows"])
        paths.append(p)
        p = out / "transport.csv"
        _write_csv(p, ["k", "sigma_tr", "T_cl", "sigma", "ratio"], self.transport["rows"])
        paths.append(p)
        from .classical import branches_to_csv
        for label, brs in sorted(self.branches.items()):
            p = out / f"branches_{label}.csv"
            branches_to_csv(brs, p)
            paths.append(p)
        p = out / "summary.txt"
        p.write_text(self.summary())
        paths.append(p)
        return paths

    def summary(self) -> str:
        L = []
        l1 = self.lemma1
        L.append(f"sigma_cl = {l1['sigma_cl']!r}")
        if l1["degenerate"]:
            L.append("total cross section: degenerate (sigma_cl = 0), ratio undefined")
        else:
            L.append("total cross section sigma(k) / (2 sigma_cl):")
            for r in l1["rows"]:
                L.append(f"  k={r['k']:g}  ratio={r['ratio']:.6f}  |ratio-1|={r['error']:.6f}")
            L.append(f"  errors strictly decreasing: {l1['errors_decreasing']}")
        L.append(f"max |sigma_optical - sigma_angular| / sigma: "
                 f"{max(r['identity_rel_err'] for r in l1['rows']):.3e}")
        L.append("forward-cone mass M(delta,k) vs sigma_cl + C(delta) (finite-k table, no extrapolation):")
        for r in self.lemma2["rows"]:
            L.append(f"  k={r['k']:g}  delta={r['delta']:g}  M={r['M']:.6f}  target={r['target']:.6f}"
                     f"  rel_err={r['rel_err']:.4f}")
        L.append("weak test  int |f|^2 phi  vs  pushforward(phi) + sigma_cl phi(theta0):")
        for r in self.weak["rows"]:
            L.append(f"  {r['function']:<14s} k={r['k']:g}  lhs={r['lhs']:.6f}  rhs={r['rhs']:.6f}"
                     f"  rel_err={r['rel_err']:.4f}")
        L.append(f"transport: T_cl = {self.transport['T_cl']!r}")
        for r in self.transport["rows"]:
            ratio = "" if r["ratio"] is None else f"{r['ratio']:.6f}"
            L.append(f"  k={r['k']:g}  sigma_tr={r['sigma_tr']:.6f}  ratio={ratio}")
        L.append("theta-rule doubling at the top k, absolute change:")
        for kname, v in self.refinement.items():
            L.append(f"  {kname}: {v:.3e}")
        return "\n".join(L) + "\n"


def build_report(exp: Experiment, branch_directions: Sequence[tuple[str, np.ndarray]] = ()) -> ConvergenceReport:
    from .classical import find_branches
    branches = {}
    for label, omega in branch_directions:
        branches[label] = find_branches(exp.pot, omega, seed_grid=exp.config.grids.seed_grid,
                                        opts=exp.config.integrator)
    return ConvergenceReport(run_lemma1(exp), run_lemma2(exp), run_weak_test(exp),
                             run_transport(exp), grid_refinement_check(exp), branches)
