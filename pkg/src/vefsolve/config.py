"""Run configuration: sectioned ``key = value`` files parsed into dataclasses."""
import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .driver import NORMS, OuterConfig
from .linalg import AMG_METHODS
from .vef import KINDS, PRECONDITIONERS, SolverConfig

EXPERIMENTS = ("mms", "difflim", "pipe", "mockdata", "solve")
PROBLEMS = ("mms", "difflim", "pipe", "mock")
QUADRATURES = {"s2": 2, "s4": 4, "s6": 6, "s8": 8, "s12": 12}


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    experiment: str = "solve"
    problem: str = "pipe"  # used by the generic solve
    out: str = "results"


@dataclass
class DiscretizationSection:
    kind: str = "ip"
    kinds: tuple = ("ip", "br2", "mdldg", "cg")
    p: int = 2
    orders: tuple = (1, 2, 3)
    penalty_scale: float = 1.0


@dataclass
class AngularSection:
    quadrature: str = "s12"


@dataclass
class MeshSection:
    n: int = 8  # cells per side of the unit square
    sizes: tuple = (12, 18, 24, 30)  # MMS mesh sequence
    order: int = 3  # geometry degree for MMS meshes
    refine: int = 0
    refines: tuple = (0, 1, 2)


@dataclass
class OuterSection:
    tol: float = 1e-6
    max_outer: int = 200
    anderson: int = 2
    augmented: bool = False
    sweeps: int = 1
    norm: str = "l2-rel"
    fixup: bool = True


@dataclass
class InnerSection:
    method: str = "bicgstab"
    precond: str = "auto"
    rel_tol: float = 1e-8
    max_iter: int = 2000
    inner_k: int = 3
    amg: str = "air"
    modes: tuple = ("usc", "exact", "usc-sym", "usc-sym3")  # mock-data study


@dataclass
class ProblemSection:
    eps: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    sigma_t: float = 1.0  # MMS
    sigma_s: float = 0.5  # MMS
    q: float = 1e-1  # crooked pipe fixed source
    lineout_y: float = 0.5
    lineout_points: int = 101
    dump: bool = True


SECTIONS = {
    "run": RunSection,
    "discretization": DiscretizationSection,
    "angular": AngularSection,
    "mesh": MeshSection,
    "outer": OuterSection,
    "inner": InnerSection,
    "problem": ProblemSection,
}


@dataclass
class ProblemConfig:
    run: RunSection = field(default_factory=RunSection)
    discretization: DiscretizationSection = field(default_factory=DiscretizationSection)
    angular: AngularSection = field(default_factory=AngularSection)
    mesh: MeshSection = field(default_factory=MeshSection)
    outer: OuterSection = field(default_factory=OuterSection)
    inner: InnerSection = field(default_factory=InnerSection)
    problem: ProblemSection = field(default_factory=ProblemSection)

    # -- construction -------------------------------------------------------------------

    @classmethod
    def defaults(cls, experiment="solve"):
        """Defaults tuned to each experiment."""
        cfg = cls()
        cfg.run.experiment = experiment
        if experiment == "mms":
            cfg.discretization.p = 3
            cfg.angular.quadrature = "s4"
            cfg.run.problem = "mms"
        elif experiment == "difflim":
            cfg.discretization.p = 2
            cfg.angular.quadrature = "s4"
            cfg.outer.anderson = 0
            cfg.outer.fixup = False
            cfg.run.problem = "difflim"
        elif experiment == "mockdata":
            cfg.discretization.kind = "ip"
            cfg.discretization.p = 2
            cfg.mesh.refines = (1, 2, 3)
            cfg.run.problem = "mock"
        return cfg

    def section_items(self):
        for name in SECTIONS:
            yield name, getattr(self, name)

    # -- text round trip ----------------------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser()
        for name, sec in self.section_items():
            cp[name] = {f.name: _format(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def metadata(self):
        """Flat ``section.key -> text`` map for file headers."""
        return {f"{name}.{f.name}": _format(getattr(sec, f.name))
                for name, sec in self.section_items() for f in dataclasses.fields(sec)}

    def validate(self):
        d = self.discretization
        _check(self.run.experiment in EXPERIMENTS, f"unknown experiment {self.run.experiment!r}")
        _check(self.run.problem in PROBLEMS, f"unknown problem {self.run.problem!r}")
        for k in (d.kind,) + tuple(d.kinds):
            _check(k in KINDS, f"unknown discretization kind {k!r}")
        _check(d.p >= 1 and all(p >= 1 for p in d.orders), "polynomial order must be >= 1")
        _check(self.angular.quadrature in QUADRATURES,
               f"unknown quadrature {self.angular.quadrature!r}")
        _check(self.mesh.n >= 1 and self.mesh.order >= 1, "mesh sizes must be positive")
        _check(min(self.mesh.refines, default=0) >= 0 and self.mesh.refine >= 0,
               "refinement levels must be >= 0")
        _check(self.outer.norm in NORMS, f"unknown convergence norm {self.outer.norm!r}")
        _check(self.inner.amg in AMG_METHODS, f"unknown AMG method {self.inner.amg!r}")
        for m in (self.inner.precond,) + tuple(self.inner.modes):
            _check(m == "auto" or m in PRECONDITIONERS, f"unknown preconditioner {m!r}")
        _check(all(e > 0 for e in self.problem.eps), "eps values must be positive")
        self.outer_config()  # runs the driver-side checks too
        return self

    # -- views used by the experiments --------------------------------------------------

    def solver_config(self):
        i = self.inner
        return SolverConfig(method=i.method, precond=i.precond, rel_tol=i.rel_tol,
                            max_iter=i.max_iter, inner_k=i.inner_k, amg=i.amg)

    def outer_config(self, kind=None):
        o = self.outer
        try:
            return OuterConfig(tol=o.tol, max_outer=o.max_outer, anderson=o.anderson,
                               augmented=o.augmented, sweeps=o.sweeps,
                               kind=kind or self.discretization.kind, fixup=o.fixup, norm=o.norm,
                               inner=self.solver_config())
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def sn_order(self):
        return QUADRATURES[self.angular.quadrature]


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _format(v):
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text, typ, key):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None


def _parse_value(text, default, key):
    if isinstance(default, tuple):
        elem = type(default[0]) if default else str
        parts = [t for t in (s.strip() for s in text.split(",")) if t]
        return tuple(_parse_scalar(t, elem, key) for t in parts)
    return _parse_scalar(text, type(default), key)


def apply_ini(cfg, text):
    """Overlay ``key = value`` text onto a config; unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        sec = getattr(cfg, name)
        known = {f.name for f in dataclasses.fields(sec)}
        for key, text_value in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            setattr(sec, key, _parse_value(text_value, getattr(sec, key), f"{name}.{key}"))
    return cfg


def parse_config(text, experiment=None):
    """Parse config text on top of the defaults of its experiment."""
    probe = configparser.ConfigParser()
    try:
        probe.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    exp = experiment or probe.get("run", "experiment", fallback="solve").strip()
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    cfg = apply_ini(ProblemConfig.defaults(exp), text)
    cfg.run.experiment = exp
    return cfg.validate()


def load_config(path, experiment=None):
    with open(path) as fh:
        return parse_config(fh.read(), experiment)
