"""Experiment configuration files.

One INI file per experiment. Every key lives in the ``[experiment]``
section and is optional; missing keys take the defaults below. Sweeps add
two keys.

================  ===============================================  ===========
key               meaning                                          default
================  ===============================================  ===========
application       uniform, local_nested or local_nonnested         uniform
n                 coarse cells per side                            2
J                 finest level                                     3
grid              subdomain grid ``rows x cols``                   2x2
regions           ``x0,y0,x1,y1`` per level, ``;``-separated      corner boxes
overlap           overlap radius                                    h0
schedule          constant, decreasing, increasing,                constant
                  optimal_quadratic
m                 smoothing steps of the constant schedule         1
q                 factor of the optimal_quadratic schedule         1
theta             ``t11,t12,t22`` diffusion tensor                 1,0,1
rhs               manufactured, constant or ``file:PATH``          manufactured
rel_tol           outer solver tolerance                            1e-8
max_cycles        outer solver cycle limit                         100
seed              seed of every random probe                       0
dense_cap         largest dense oracle                             2500
probes            probes per lemma check                           100
k0_probes         probes per K0 estimate                           200
export_matrices   write A_J and M_J as MatrixMarket files          no
out               output directory                                 out
sweep_schedules   ``kind[:param]`` list, ``,``-separated           constant:1
sweep_J           levels of a sweep, ``,``-separated or ``a-b``    1-3
================  ===============================================  ===========
"""

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .multigrid import APPLICATIONS, HierarchyConfig, ScheduleSpec
from .space import CoefficientField

__all__ = ["ExperimentConfig", "load_config", "parse_config", "parse_schedule"]

KEYS = {
    "application", "n", "j", "grid", "regions", "overlap", "schedule", "m", "q", "theta",
    "rhs", "rel_tol", "max_cycles", "seed", "dense_cap", "probes", "k0_probes",
    "export_matrices", "out", "sweep_schedules", "sweep_j",
}


@dataclass(frozen=True)
class ExperimentConfig:
    hierarchy: HierarchyConfig = HierarchyConfig()
    rel_tol: float = 1e-8
    max_cycles: int = 100
    seed: int = 0
    dense_cap: int = 2500
    probes: int = 100
    k0_probes: int = 200
    export_matrices: bool = False
    out: Path = Path("out")
    rhs_label: str = "manufactured"
    sweep_schedules: tuple = (ScheduleSpec("constant", 1),)
    sweep_J: tuple = (1, 2, 3)
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def with_hierarchy(self, **kw):
        return replace(self, hierarchy=replace(self.hierarchy, **kw))


def _floats(text, count, what):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != count:
        raise ValueError(f"{what} needs {count} comma-separated numbers, got {text!r}")
    return [float(p) for p in parts]


def parse_schedule(text, m=1, q=1):
    """``constant:2`` or ``optimal_quadratic:1`` or a bare kind."""
    kind, _, param = text.strip().partition(":")
    if param:
        val = int(param)
        if kind == "constant":
            m = val
        elif kind == "optimal_quadratic":
            q = val
        else:
            raise ValueError(f"schedule {kind!r} takes no parameter")
    return ScheduleSpec(kind=kind, m=int(m), q=int(q))


def _levels(text):
    text = text.strip()
    if "-" in text and "," not in text:
        a, b = (int(x) for x in text.split("-"))
        return tuple(range(a, b + 1))
    return tuple(int(x) for x in text.split(",") if x.strip())


def parse_config(values, base_dir=Path(".")):
    """Validate a flat ``{key: text}`` mapping into an :class:`ExperimentConfig`."""
    raw = {k.lower(): str(v).strip() for k, v in values.items()}
    unknown = sorted(set(raw) - KEYS)
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    get = raw.get

    app = get("application", "uniform")
    if app not in APPLICATIONS:
        raise ValueError(f"application must be one of {APPLICATIONS}, got {app!r}")
    n = int(get("n", "2"))
    J = int(get("j", "3"))
    rows, _, cols = get("grid", "2x2").lower().partition("x")
    grid = (int(rows), int(cols or rows))
    regions = None
    if get("regions"):
        regions = tuple(tuple(_floats(b, 4, "region box")) for b in get("regions").split(";") if b.strip())
    overlap = float(get("overlap")) if get("overlap") else None
    schedule = parse_schedule(get("schedule", "constant"), get("m", "1"), get("q", "1"))
    t11, t12, t22 = _floats(get("theta", "1,0,1"), 3, "theta")
    theta = CoefficientField(((t11, t12), (t12, t22)))

    rhs_text = get("rhs", "manufactured")
    if rhs_text in ("manufactured", "constant"):
        rhs = rhs_text
    elif rhs_text.startswith("file:"):
        path = Path(rhs_text[5:])
        path = path if path.is_absolute() else base_dir / path
        rhs = np.loadtxt(path, dtype=float, ndmin=1)
    else:
        raise ValueError(f"rhs must be manufactured, constant or file:PATH, got {rhs_text!r}")

    hc = HierarchyConfig(application=app, n=n, J=J, grid=grid, regions=regions,
                         schedule=schedule, theta=theta, overlap=overlap, rhs=rhs)
    rel_tol = float(get("rel_tol", "1e-8"))
    if not 0 < rel_tol <= 1:
        raise ValueError("rel_tol must lie in (0, 1]")
    max_cycles = int(get("max_cycles", "100"))
    if max_cycles < 1:
        raise ValueError("max_cycles must be >= 1")
    dense_cap = int(get("dense_cap", "2500"))
    if dense_cap < 1:
        raise ValueError("dense_cap must be >= 1")
    sweeps = tuple(parse_schedule(s) for s in get("sweep_schedules", "constant:1").split(",") if s.strip())
    sweep_J = _levels(get("sweep_j", "1-3"))
    if not sweep_J or min(sweep_J) < 1:
        raise ValueError("sweep_J must list levels >= 1")
    return ExperimentConfig(
        hierarchy=hc, rel_tol=rel_tol, max_cycles=max_cycles, seed=int(get("seed", "0")),
        dense_cap=dense_cap, probes=int(get("probes", "100")),
        k0_probes=int(get("k0_probes", "200")),
        export_matrices=get("export_matrices", "no").lower() in ("1", "yes", "true", "on"),
        out=Path(get("out", "out")), rhs_label=rhs_text.split(":")[0],
        sweep_schedules=sweeps, sweep_J=sweep_J, source=dict(raw),
    )


def load_config(path=None, overrides=None):
    """Read an INI file (``[experiment]`` section) and apply ``key=value`` overrides."""
    values = {}
    base = Path(".")
    if path is not None:
        cp = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
        extra = [s for s in cp.sections() if s != "experiment"]
        if extra:
            raise ValueError(f"unknown configuration sections: {', '.join(extra)}")
        if cp.has_section("experiment"):
            values.update(cp["experiment"])
        base = Path(path).parent
    for item in overrides or ():
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"override must look like key=value, got {item!r}")
        values[key.strip()] = val
    return parse_config(values, base)
