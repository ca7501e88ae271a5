"""Persistence: dataset directories, parameter checkpoints, flat key-value
configs, scenario presets, and observable extraction.

Dataset directory layout::

    <dir>/meta    flat key-value text (grid, soil, boundary, provenance)
    <dir>/t.csv   one time value per row, days
    <dir>/c.csv   T rows x n columns, dissolved concentration
    <dir>/ct.csv  T rows x n columns, total concentration

Numeric payloads are written with 17 significant digits, which round-trips
float64 exactly, so read(write(d)) is bitwise-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .fvm import (BoundaryCondition, Cauchy, Dirichlet, FieldPair, Grid1D,
                  Neumann, SoilParams)
from .nn import ParamStore

CHECKPOINT_MAGIC = b"FINNCKPT"
CHECKPOINT_VERSION = 1


def fmt(x) -> str:
    """Canonical text form of a number (17 significant digits for floats)."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


# -- flat key-value config files -------------------------------------------

def write_config(path, entries: dict) -> None:
    """Write ``key = value`` lines (dotted keys, '#' comments allowed)."""
    lines = [f"{k} = {fmt(v)}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_config(path) -> dict[str, str]:
    """Parse a flat key-value file into raw string values."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# -- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    """Time-indexed pair of concentration fields plus provenance metadata."""

    t_grid: np.ndarray           # (T,) days, strictly increasing
    c: np.ndarray                # (T, n) dissolved
    ct: np.ndarray               # (T, n) total
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        self.ct = np.asarray(self.ct, dtype=np.float64)
        t, (tc, nc) = self.t_grid.size, self.c.shape
        if self.c.shape != self.ct.shape or tc != t:
            raise DataFormatError(
                f"inconsistent dataset shapes: t={t}, c={self.c.shape}, ct={self.ct.shape}")
        if t > 1 and not np.all(np.diff(self.t_grid) > 0):
            raise DataFormatError("time grid must be strictly increasing")

    @property
    def n_volumes(self) -> int:
        return self.c.shape[1]

    def initial(self) -> FieldPair:
        return FieldPair(self.c[0].copy(), self.ct[0].copy())


def scenario_meta(grid: Grid1D, soil: SoilParams | None,
                  bc_left: BoundaryCondition, bc_right: BoundaryCondition,
                  provenance: str, **extra) -> dict[str, str]:
    meta = {
        "provenance": provenance,
        "grid.n_volumes": fmt(grid.n_volumes),
        "grid.dx": fmt(grid.dx),
    }
    if grid.length is not None:
        meta["grid.length"] = fmt(grid.length)
    if soil is not None:
        meta.update({
            "soil.d_e": fmt(soil.d_e),
            "soil.porosity": fmt(soil.porosity),
            "soil.rho_s": fmt(soil.rho_s),
            "soil.k_f": fmt(soil.k_f),
            "soil.n_f": fmt(soil.n_f),
        })
    meta.update(bc_meta("bc.left", bc_left))
    meta.update(bc_meta("bc.right", bc_right))
    meta.update({k: fmt(v) for k, v in extra.items()})
    return meta


def bc_meta(prefix: str, bc: BoundaryCondition) -> dict[str, str]:
    if isinstance(bc, Dirichlet):
        return {f"{prefix}.kind": "dirichlet", f"{prefix}.value": fmt(bc.value)}
    if isinstance(bc, Neumann):
        return {f"{prefix}.kind": "neumann", f"{prefix}.flux": fmt(bc.flux)}
    if isinstance(bc, Cauchy):
        return {f"{prefix}.kind": "cauchy", f"{prefix}.flow_rate": fmt(bc.flow_rate)}
    raise ConfigError(f"unsupported boundary condition {bc!r}")


def parse_bc(meta: dict[str, str], prefix: str) -> BoundaryCondition:
    kind = meta.get(f"{prefix}.kind")
    if kind == "dirichlet":
        return Dirichlet(float(meta[f"{prefix}.value"]))
    if kind == "neumann":
        return Neumann(float(meta[f"{prefix}.flux"]))
    if kind == "cauchy":
        return Cauchy(float(meta[f"{prefix}.flow_rate"]))
    raise DataFormatError(f"unknown boundary kind {kind!r} under {prefix!r}")


def parse_grid(meta: dict[str, str]) -> Grid1D:
    return Grid1D(n_volumes=int(meta["grid.n_volumes"]), dx=float(meta["grid.dx"]),
                  length=float(meta["grid.length"]) if "grid.length" in meta else None)


def parse_soil(meta: dict[str, str]) -> SoilParams:
    return SoilParams(d_e=float(meta["soil.d_e"]), porosity=float(meta["soil.porosity"]),
                      rho_s=float(meta["soil.rho_s"]), k_f=float(meta["soil.k_f"]),
                      n_f=float(meta["soil.n_f"]))


def _write_matrix(path: Path, a: np.ndarray) -> None:
    with path.open("w") as fh:
        for row in np.atleast_2d(a):
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _read_matrix(path: Path, n_cols: int | None = None) -> np.ndarray:
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if n_cols is not None and len(cells) != n_cols:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {n_cols} columns, got {len(cells)}")
            if rows and len(cells) != len(rows[0]):
                raise DataFormatError(
                    f"{path}:{lineno}: ragged row ({len(cells)} vs {len(rows[0])} columns)")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells, start=1)
                           if not _is_number(c))
                raise DataFormatError(
                    f"{path}:{lineno}:{bad}: not a number: {cells[bad - 1]!r}") from None
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return np.asarray(rows, dtype=np.float64)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_dataset(path, data: Dataset) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    write_config(d / "meta", data.meta)
    _write_matrix(d / "t.csv", data.t_grid.reshape(-1, 1))
    _write_matrix(d / "c.csv", data.c)
    _write_matrix(d / "ct.csv", data.ct)


def read_dataset(path) -> Dataset:
    d = Path(path)
    if not d.is_dir():
        raise DataFormatError(f"{d}: not a dataset directory")
    meta = read_config(d / "meta")
    t = _read_matrix(d / "t.csv", n_cols=1).ravel()
    c = _read_matrix(d / "c.csv")
    ct = _read_matrix(d / "ct.csv")
    for name, a in (("c.csv", c), ("ct.csv", ct)):
        if a.shape[0] != t.size:
            raise DataFormatError(
                f"{d / name}: {a.shape[0]} rows, but t.csv has {t.size}")
    if c.shape != ct.shape:
        raise DataFormatError(f"{d}: c.csv {c.shape} and ct.csv {ct.shape} differ")
    return Dataset(t_grid=t, c=c, ct=ct, meta=meta)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params: ParamStore) -> None:
    """Versioned binary container of named float64 tensors."""
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.tensors)))
        for name, tensor in params.tensors.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DataFormatError(f"{path}: truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    store = ParamStore()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        values = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
        store[name] = values.reshape(shape)
    if pos != len(view):
        raise DataFormatError(f"{path}: {len(view) - pos} trailing bytes")
    return store


# -- scenario presets ---------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to generate (or predict under) one scenario."""

    name: str
    soil: SoilParams
    grid: Grid1D
    bc_left: BoundaryCondition
    bc_right: BoundaryCondition
    t_end: float                 # days
    dt: float                    # days between stored rows
    c_s: float                   # kg/m^3, top Dirichlet value
    radius: float | None = None  # m, core cross-section (unused by the 1-d solver)
    flow_rate: float | None = None  # m^3/day, bottom reservoir

    def t_grid(self) -> np.ndarray:
        n_steps = int(round(self.t_end / self.dt))
        return np.arange(n_steps) * self.dt

    def with_c_s(self, c_s: float) -> "ScenarioConfig":
        return replace(self, c_s=c_s, bc_left=Dirichlet(c_s))


# Sorption isotherm values for the core presets are synthetic stand-ins (the
# lab samples' isotherms are unknown; recovering them is the whole point), so
# the simulator can still generate property-check data under core geometry.
_SYNTH_SOIL = SoilParams(d_e=5e-4, porosity=0.29, rho_s=2880.0, k_f=3.53e-4, n_f=0.874)
_CORE_N_VOLUMES = 26
_CORE_ROWS = 500


def _core(name, d_e, length, t_end, c_s, flow_rate, radius,
          bottom: BoundaryCondition) -> ScenarioConfig:
    soil = SoilParams(d_e=d_e, porosity=0.288, rho_s=1957.0, k_f=3.53e-4, n_f=0.874)
    grid = Grid1D(_CORE_N_VOLUMES, dx=length / _CORE_N_VOLUMES, length=length)
    return ScenarioConfig(name=name, soil=soil, grid=grid,
                          bc_left=Dirichlet(c_s), bc_right=bottom,
                          t_end=t_end, dt=t_end / _CORE_ROWS, c_s=c_s,
                          radius=radius, flow_rate=flow_rate)


def preset(name: str) -> ScenarioConfig:
    """Named scenario configurations (synthetic pair and core samples)."""
    if name == "synthetic-train" or name == "synthetic-test":
        c_s = 1.0 if name.endswith("train") else 0.7
        return ScenarioConfig(
            name=name, soil=_SYNTH_SOIL,
            grid=Grid1D(n_volumes=26, dx=0.04, length=1.0),
            bc_left=Dirichlet(c_s), bc_right=Cauchy(flow_rate=1.0),
            t_end=1e4, dt=5.0, c_s=c_s, flow_rate=1.0)
    if name == "core1":
        return _core("core1", d_e=2.00e-5, length=0.0254, t_end=38.81, c_s=1.4,
                     flow_rate=1.01e-4, radius=0.02375,
                     bottom=Cauchy(flow_rate=1.01e-4))
    if name == "core2":
        return _core("core2", d_e=2.00e-5, length=0.02604, t_end=39.82, c_s=1.6,
                     flow_rate=1.04e-4, radius=0.02375,
                     bottom=Cauchy(flow_rate=1.04e-4))
    if name == "core2b":
        return _core("core2b", d_e=2.78e-5, length=0.105, t_end=48.88, c_s=1.4,
                     flow_rate=None, radius=None, bottom=Neumann(0.0))
    raise ConfigError(f"unknown preset {name!r}; expected synthetic-train, "
                      "synthetic-test, core1, core2, or core2b")


def generate_scenario_dataset(scenario: ScenarioConfig, rtol: float = 1e-6,
                              atol: float = 1e-8) -> Dataset:
    """Run the ground-truth simulator for a preset and attach full metadata."""
    from .fvm import simulate_diffusion_sorption

    data = simulate_diffusion_sorption(scenario.grid, scenario.soil,
                                       (scenario.bc_left, scenario.bc_right),
                                       scenario.t_grid(), rtol=rtol, atol=atol)
    data.meta.update({
        "scenario": scenario.name,
        "t_end": fmt(scenario.t_end),
        "dt": fmt(scenario.dt),
        "c_s": fmt(scenario.c_s),
    })
    if scenario.radius is not None:
        data.meta["radius"] = fmt(scenario.radius)
    if scenario.flow_rate is not None:
        data.meta["flow_rate"] = fmt(scenario.flow_rate)
    return data


# -- observables --------------------------------------------------------------

def extract_breakthrough(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Concentration time series at the outlet (last volume)."""
    return data.t_grid.copy(), data.c[:, -1].copy()


def extract_profile(data: Dataset, which: str, t_index: int) -> np.ndarray:
    """Spatial profile of one field at one stored time."""
    if which not in ("c", "ct"):
        raise ConfigError(f"field must be 'c' or 'ct', got {which!r}")
    a = data.c if which == "c" else data.ct
    if not (-a.shape[0] <= t_index < a.shape[0]):
        raise ConfigError(f"t_index {t_index} out of range for {a.shape[0]} rows")
    return a[t_index].copy()
