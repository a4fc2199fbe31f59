"""Run configuration, binary checkpoints and CSV series output."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .basis import Grid, SpectralField, make_grid, random_field
from .constraint import project
from .dynamics import ForcingSpec, PRESETS, preset
from .integrator import LEDGER_COLUMNS, EnergyLedger, State
from .series import write_csv

__all__ = [
    "ConfigError",
    "CheckpointError",
    "GridConfig",
    "TimeConfig",
    "ForcingConfig",
    "SolverConfig",
    "OutputConfig",
    "InitialConfig",
    "CompareConfig",
    "RunConfig",
    "parse_config",
    "config_from_dict",
    "save_checkpoint",
    "load_checkpoint",
    "emit_series",
    "parse_resolution",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, msg: str, field: str = ""):
        super().__init__(f"{field}: {msg}" if field else msg)
        self.field = field


class CheckpointError(IOError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class GridConfig:
    M: int = 16
    N: int = 16
    K: int = 12
    h: float = 1.0
    Q: int | None = None  # defaults to 2K


@dataclass
class TimeConfig:
    dt: float = 1e-3
    T: float | None = None  # defaults to the forcing period, else 1
    periods: float | None = None  # simulate: run length in periods (default 1)
    t_end: float | None = None  # simulate: run length (overrides periods)


@dataclass
class ForcingConfig:
    """Either a preset name (optionally scaled) or an explicit mode list."""

    preset: str | None = "channel_harmonic"
    scale: float = 1.0
    spec: ForcingSpec | None = None

    def resolve(self) -> ForcingSpec:
        if self.spec is not None:
            return self.spec.scaled(self.scale) if self.scale != 1.0 else self.spec
        return preset(self.preset, self.scale)

    def to_json(self) -> dict:
        if self.spec is not None:
            d = self.spec.to_json()
            if self.scale != 1.0:
                d["scale"] = self.scale
            return d
        return {"preset": self.preset, "scale": self.scale}


@dataclass
class SolverConfig:
    mode: str = "simulate"
    method: str = "newton"
    tol: float = 1e-9
    maxit: int = 50
    krylov_dim: int = 20
    certify_samples: int = 0


@dataclass
class OutputConfig:
    dir: str = "out"
    sample_every: int = 1
    snapshots: bool = False
    cfl_warn: bool = True


@dataclass
class InitialConfig:
    """Initial data: zero, a seeded random constrained field, or a checkpoint."""

    kind: str = "zero"
    scale: float = 1.0
    decay: float = 1.0
    path: str | None = None


@dataclass
class CompareConfig:
    ladder: list = field(default_factory=lambda: [[6, 6, 6], [8, 8, 8], [12, 12, 12]])
    fine: list | None = None  # defaults to the grid section


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    seed: int = 0

    # -- derived ------------------------------------------------------------

    def make_grid(self) -> Grid:
        g = self.grid
        return make_grid(g.M, g.N, g.K, g.h, g.Q)

    def forcing_spec(self) -> ForcingSpec:
        return self.forcing.resolve()

    @property
    def period(self) -> float:
        if self.time.T is not None:
            return self.time.T
        fs = self.forcing_spec()
        return fs.T if fs.T is not None else 1.0

    @property
    def run_length(self) -> float:
        if self.time.t_end is not None:
            return self.time.t_end
        return (self.time.periods if self.time.periods is not None else 1.0) * self.period

    def initial_field(self, grid: Grid) -> SpectralField:
        ic = self.initial
        if ic.kind == "zero":
            return SpectralField.zeros(grid)
        if ic.kind == "random":
            rng = np.random.default_rng(self.seed)
            return project(random_field(grid, rng, decay=ic.decay, scale=ic.scale))
        st = load_checkpoint(ic.path, grid)
        return st.v

    def to_json(self) -> dict:
        d = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "forcing":
                d[f.name] = val.to_json()
            elif hasattr(val, "__dataclass_fields__"):
                d[f.name] = asdict(val)
            else:
                d[f.name] = val
        return d

    def validate(self) -> "RunConfig":
        g, t, s, o = self.grid, self.time, self.solver, self.output
        for name in ("M", "N"):
            v = getattr(g, name)
            if not isinstance(v, int) or v < 4 or v % 2:
                raise ConfigError(f"must be an even integer >= 4, got {v!r}", f"grid.{name}")
        if not isinstance(g.K, int) or g.K < 1:
            raise ConfigError(f"must be a positive integer, got {g.K!r}", "grid.K")
        if not g.h > 0:
            raise ConfigError(f"must be positive, got {g.h!r}", "grid.h")
        if g.Q is not None and g.Q < 2 * g.K:
            raise ConfigError(f"must be >= 2K = {2 * g.K}, got {g.Q}", "grid.Q")
        if not t.dt > 0:
            raise ConfigError(f"must be positive, got {t.dt!r}", "time.dt")
        if t.T is not None and not t.T > 0:
            raise ConfigError(f"must be positive, got {t.T!r}", "time.T")
        if t.periods is not None and not t.periods > 0:
            raise ConfigError(f"must be positive, got {t.periods!r}", "time.periods")
        if t.t_end is not None and not t.t_end > 0:
            raise ConfigError(f"must be positive, got {t.t_end!r}", "time.t_end")
        if s.mode not in ("simulate", "periodic", "steady", "compare", "selftest"):
            raise ConfigError(f"unknown mode {s.mode!r}", "solver.mode")
        if s.method not in ("picard", "newton"):
            raise ConfigError(f"unknown method {s.method!r}", "solver.method")
        if not s.tol > 0:
            raise ConfigError(f"must be positive, got {s.tol!r}", "solver.tol")
        if s.maxit < 1:
            raise ConfigError(f"must be >= 1, got {s.maxit!r}", "solver.maxit")
        if s.krylov_dim < 1:
            raise ConfigError(f"must be >= 1, got {s.krylov_dim!r}", "solver.krylov_dim")
        if o.sample_every < 1:
            raise ConfigError(f"must be >= 1, got {o.sample_every!r}", "output.sample_every")
        if self.initial.kind not in ("zero", "random", "checkpoint"):
            raise ConfigError(f"unknown kind {self.initial.kind!r}", "initial.kind")
        if self.initial.kind == "checkpoint" and not self.initial.path:
            raise ConfigError("checkpoint initial data needs a path", "initial.path")
        fc = self.forcing
        if fc.spec is None and fc.preset not in PRESETS:
            raise ConfigError(f"unknown preset {fc.preset!r}; known: {sorted(PRESETS)}",
                              "forcing.preset")
        fs = self.forcing_spec()
        for i, md in enumerate(fs.modes):
            if abs(md.m) >= g.M // 2 or abs(md.n) >= g.N // 2:
                raise ConfigError(f"mode (m={md.m}, n={md.n}) does not fit the {g.M}x{g.N} grid "
                                  f"(need |m| < {g.M // 2}, |n| < {g.N // 2})",
                                  f"forcing.modes[{i}]")
            if md.profile == "sine" and md.k >= g.K:
                raise ConfigError(f"sine profile k={md.k} does not fit K={g.K}",
                                  f"forcing.modes[{i}]")
        if s.mode == "periodic":
            if fs.T is not None and not fs.steady and t.T is not None and abs(t.T - fs.T) > 1e-12 * fs.T:
                raise ConfigError(f"time.T={t.T} differs from the forcing period {fs.T}", "time.T")
        for i, r in enumerate(self.compare.ladder):
            _check_res(r, f"compare.ladder[{i}]")
        if self.compare.fine is not None:
            _check_res(self.compare.fine, "compare.fine")
        return self


def _check_res(r, where):
    if (not isinstance(r, (list, tuple)) or len(r) != 3
            or not all(isinstance(x, int) and x >= 1 for x in r) or r[0] % 2 or r[1] % 2):
        raise ConfigError(f"expected [M, N, K] with even M, N, got {r!r}", where)


_SECTIONS = {
    "grid": GridConfig,
    "time": TimeConfig,
    "solver": SolverConfig,
    "output": OutputConfig,
    "initial": InitialConfig,
    "compare": CompareConfig,
}

_INT_FIELDS = {"M", "N", "K", "Q", "maxit", "krylov_dim", "certify_samples", "sample_every"}


def _section(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", name)
    known = {f.name for f in fields(cls)}
    bad = sorted(set(d) - known)
    if bad:
        raise ConfigError(f"unknown keys {bad}; allowed: {sorted(known)}", name)
    kw = {}
    for k, v in d.items():
        if k in _INT_FIELDS and v is not None:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise ConfigError(f"must be an integer, got {v!r}", f"{name}.{k}")
            if isinstance(v, (int, float)):
                v = int(v)
        kw[k] = v
    return cls(**kw)


def _forcing(d) -> ForcingConfig:
    if isinstance(d, str):
        return ForcingConfig(preset=d)
    if not isinstance(d, dict):
        raise ConfigError("expected a preset name or an object", "forcing")
    if "preset" in d:
        bad = sorted(set(d) - {"preset", "scale"})
        if bad:
            raise ConfigError(f"unknown keys {bad} next to a preset", "forcing")
        return ForcingConfig(preset=d["preset"], scale=float(d.get("scale", 1.0)))
    d = dict(d)
    scale = float(d.pop("scale", 1.0))
    try:
        spec = ForcingSpec.from_json(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e), "forcing") from None
    return ForcingConfig(preset=None, scale=scale, spec=spec)


def config_from_dict(d: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig`; unknown keys are rejected."""
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object")
    allowed = set(_SECTIONS) | {"forcing", "seed"}
    bad = sorted(set(d) - allowed)
    if bad:
        raise ConfigError(f"unknown top-level keys {bad}; allowed: {sorted(allowed)}")
    kw = {}
    try:
        for name, cls in _SECTIONS.items():
            if name in d:
                kw[name] = _section(cls, d[name], name)
        if "forcing" in d:
            kw["forcing"] = _forcing(d["forcing"])
        if "seed" in d:
            if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
                raise ConfigError(f"must be an integer, got {d['seed']!r}", "seed")
            kw["seed"] = d["seed"]
        cfg = RunConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()


def parse_config(path) -> RunConfig:
    """Read a JSON config file; errors name the line/column or the field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    return config_from_dict(d)


def parse_resolution(s: str) -> tuple[int, int, int]:
    try:
        M, N, K = (int(x) for x in s.lower().split("x"))
    except ValueError:
        raise ConfigError(f"expected MxNxK, got {s!r}", "--resolution") from None
    return M, N, K


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"HPE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIdd")


def _half_index(grid: Grid):
    """Stored (i, j) array indices: m outer, then n; n > 0, or n = 0 with m >= 0."""
    hm, hn = grid.M // 2, grid.N // 2
    ii, jj = [], []
    for m in range(-hm + 1, hm):
        for n in range(0, hn):
            if n == 0 and m < 0:
                continue
            ii.append(m % grid.M)
            jj.append(n)
    return np.array(ii), np.array(jj)


def save_checkpoint(state: State, path) -> Path:
    """Write t and the non-redundant coefficient half (little-endian, re/im pairs)."""
    v = state.v
    g = v.grid
    ii, jj = _half_index(g)
    block = v.coef[:, ii, jj, :]  # (2, P, K)
    block = np.ascontiguousarray(np.transpose(block, (1, 2, 0)))  # (P, K, c): component innermost
    data = np.empty(block.shape + (2,), dtype="<f8")
    data[..., 0] = block.real
    data[..., 1] = block.imag
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.M, g.N, g.K, g.h, float(state.t)))
        fh.write(data.tobytes())
    return path


def load_checkpoint(path, grid: Grid | None = None) -> State:
    """Read a checkpoint; the full Hermitian array is rebuilt from the stored half."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, M, N, K, h, t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    if grid is None:
        grid = make_grid(M, N, K, h)
    elif (grid.M, grid.N, grid.K, grid.h) != (M, N, K, h):
        raise CheckpointError(f"{path}: resolution {(M, N, K, h)} does not match grid "
                              f"{(grid.M, grid.N, grid.K, grid.h)}")
    ii, jj = _half_index(grid)
    n_expected = len(ii) * K * 2 * 2
    body = raw[_HEADER.size:]
    if len(body) != 8 * n_expected:
        raise CheckpointError(f"{path}: expected {8 * n_expected} data bytes, found {len(body)}"
                              " (truncated or corrupt)")
    data = np.frombuffer(body, dtype="<f8").reshape(len(ii), K, 2, 2)
    half = data[..., 0] + 1j * data[..., 1]  # (P, K, c)
    a = np.zeros(grid.shape, dtype=complex)
    a[:, ii, jj, :] = np.transpose(half, (2, 0, 1))
    # conjugate partners (-m, -n) for n > 0, and (-m, 0) for m > 0
    pos = jj > 0
    a[:, grid.neg_m[ii[pos]], grid.neg_n[jj[pos]], :] = np.conj(a[:, ii[pos], jj[pos], :])
    col = (jj == 0) & (ii != 0)
    a[:, grid.neg_m[ii[col]], 0, :] = np.conj(a[:, ii[col], 0, :])
    return State(t, SpectralField(a, grid))


# ---------------------------------------------------------------------------
# series


def emit_series(obj, path) -> Path:
    """CSV of a ledger, monitor report, comparator result or Gronwall weights."""
    if isinstance(obj, EnergyLedger):
        return write_csv(path, LEDGER_COLUMNS, obj.rows)
    if hasattr(obj, "to_report"):
        obj = obj.to_report()
    if hasattr(obj, "columns") and hasattr(obj, "rows") and not callable(obj.rows):
        return write_csv(path, obj.columns, obj.rows)
    if hasattr(obj, "COLUMNS"):
        return write_csv(path, obj.COLUMNS, obj.rows())
    raise TypeError(f"cannot emit a series for {type(obj).__name__}")
