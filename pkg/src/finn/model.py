"""Learnable finite-volume network for the coupled diffusion-sorption system.

Two flux kernels (one per conserved field) share a single resolved set of
boundary ghost values computed from the dissolved concentration, because both
conservation laws transport the dissolved phase. Each kernel combines

* a two-weight stencil ``(w_self, w_neighbor)`` shared across faces, which at
  the ideal values (-1, 1) reproduces the classical [1, -2, 1] Laplacian, and
* a diffusion module: either a strictly positive learnable scalar or a small
  network of the dissolved concentration (the quantity whose reciprocal ratio
  to the effective diffusion coefficient is the retardation factor).

Every interior face rate is computed once and enters its two neighboring
volumes with opposite signs, so the summed rate over the domain telescopes to
the boundary terms alone: with zero-flux overrides at both ends the scheme is
exactly conservative for arbitrary parameter values. Diffusion modules are
evaluated at arithmetic-mean face concentrations for the same reason.

All model code is generic over tape variables and plain numpy arrays: the
training path records onto a tape, the inference path runs the identical code
on raw arrays under the adaptive integrator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tape as T
from .errors import ConfigError, ShapeError
from .fvm import (BoundaryCondition, Cauchy, Dirichlet, FieldPair, GhostValues,
                  Grid1D, Neumann)
from .integrate import integrate_adaptive, integrate_fixed
from .nn import ParamStore, mlp_init
from .tape import Tape, Var, value_of

#: floor under diffusion-module outputs in retardation extraction
D_UNDERFLOW = 1e-12


@dataclass
class FinnConfig:
    """Structure and fixed physical knowledge of one model instance."""

    grid: Grid1D
    bc_left: BoundaryCondition
    bc_right: BoundaryCondition
    porosity: float
    known_d_e: float | None = None   # set in experimental mode
    learn_stencil: bool = True
    d_c_kind: str = "network"        # "network" | "scalar"
    d_ct_kind: str = "scalar"        # "scalar"  | "fixed" (requires known_d_e)
    hidden: tuple[int, ...] = (15, 15, 15)
    c_max: float = 2.0               # clamp on diffusion-network inputs
    d_init: float = 1e-4             # initial diffusivity magnitude

    def __post_init__(self):
        if self.d_c_kind not in ("network", "scalar"):
            raise ConfigError(f"d_c_kind must be 'network' or 'scalar', got {self.d_c_kind!r}")
        if self.d_ct_kind not in ("scalar", "fixed"):
            raise ConfigError(f"d_ct_kind must be 'scalar' or 'fixed', got {self.d_ct_kind!r}")
        if self.d_ct_kind == "fixed" and self.known_d_e is None:
            raise ConfigError("d_ct_kind='fixed' requires known_d_e")
        if self.d_init <= 0:
            raise ConfigError("d_init must be positive")


def default_d_init(dx: float, dt: float) -> float:
    """Initial diffusivity magnitude from the explicit-stability bound.

    A closed-loop rollout at the data's step size only stays bounded for
    diffusion numbers ``d * dt / dx**2`` up to order one, so fresh models
    start at half that limit rather than at an arbitrary unit scale.
    """
    return 0.5 * dx * dx / dt


# -- parameter initialization -------------------------------------------------

def init_params(config: FinnConfig, seed: int) -> ParamStore:
    """Fresh parameter store for a model configuration; deterministic per seed."""
    ss = np.random.SeedSequence(seed)
    seed_net, seed_stencil = ss.spawn(2)
    rng = np.random.default_rng(seed_stencil)
    store = ParamStore()
    if config.learn_stencil:
        store["stencil_c"] = np.array([-1.0, 1.0]) + rng.uniform(-0.1, 0.1, size=2)
        store["stencil_ct"] = np.array([-1.0, 1.0]) + rng.uniform(-0.1, 0.1, size=2)
    if config.d_c_kind == "network":
        net = mlp_init([1, *config.hidden, 1], seed_net)
        # sigmoid(0) = 1/2, so a scale of 2 * d_init starts the module at d_init
        net = net.with_scale(2.0 * config.d_init)
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            store[f"d_c.w{i}"] = w
            store[f"d_c.b{i}"] = b
        store["d_c.raw_scale"] = net.raw_scale
    else:
        store["d_c.raw"] = np.asarray(T.softplus_inverse(config.d_init))
    if config.d_ct_kind == "scalar":
        store["d_ct.raw"] = np.asarray(T.softplus_inverse(config.d_init))
    return store


def lift_params(tape: Tape, params: ParamStore) -> dict[str, Var]:
    """Insert every stored tensor as a leaf so gradients can be collected."""
    return {name: tape.leaf(v) for name, v in params.tensors.items()}


# -- diffusion and source modules ----------------------------------------------

@dataclass
class ScalarDiffusion:
    """Strictly positive learnable scalar, parameterized through softplus."""

    raw: object  # Var or 0-d array

    def face_values(self, c_face):
        return T.softplus(self.raw)


@dataclass
class FixedDiffusion:
    """Known constant diffusivity (experimental mode)."""

    value: float

    def face_values(self, c_face):
        return float(self.value)


@dataclass
class NetworkDiffusion:
    """Concentration-dependent diffusivity: tanh hiddens, sigmoid out, scale."""

    weights: list
    biases: list
    raw_scale: object
    c_max: float

    def face_values(self, c_face):
        x = T.clip(c_face, 0.0, self.c_max)
        h = x.reshape((-1, 1))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = T.tanh(T.linear(h, w, b))
        out = T.sigmoid(T.linear(h, self.weights[-1], self.biases[-1]))
        return out.reshape(value_of(c_face).shape) * T.softplus(self.raw_scale)


@dataclass
class SourceNetwork:
    """Optional source/sink of the state: tanh hiddens, identity output."""

    weights: list
    biases: list

    def __call__(self, u):
        h = u.reshape((-1, 1))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = T.tanh(T.linear(h, w, b))
        out = T.linear(h, self.weights[-1], self.biases[-1])
        return out.reshape(value_of(u).shape)


@dataclass
class FluxKernelParams:
    """One conserved field's kernel: stencil pair plus diffusion module."""

    w_self: object
    w_neighbor: object
    d_module: object


@dataclass
class Modules:
    """All per-field kernels plus shared boundary knowledge for one rhs call."""

    flux_c: FluxKernelParams
    flux_ct: FluxKernelParams
    d_boundary: object           # diffusivity entering the Cauchy ghost
    source_c: SourceNetwork | None = None
    source_ct: SourceNetwork | None = None


def build_modules(config: FinnConfig, leaves: dict) -> Modules:
    """Assemble kernels from lifted leaves (or raw tensors for inference)."""
    if config.learn_stencil:
        wc = (leaves["stencil_c"][0], leaves["stencil_c"][1])
        wct = (leaves["stencil_ct"][0], leaves["stencil_ct"][1])
    else:
        wc = wct = (-1.0, 1.0)

    if config.d_c_kind == "network":
        n_layers = len(config.hidden) + 1
        d_c = NetworkDiffusion(
            weights=[leaves[f"d_c.w{i}"] for i in range(n_layers)],
            biases=[leaves[f"d_c.b{i}"] for i in range(n_layers)],
            raw_scale=leaves["d_c.raw_scale"], c_max=config.c_max)
    else:
        d_c = ScalarDiffusion(leaves["d_c.raw"])

    if config.d_ct_kind == "fixed":
        d_ct = FixedDiffusion(config.known_d_e * config.porosity)
        d_boundary = float(config.known_d_e)
    else:
        d_ct = ScalarDiffusion(leaves["d_ct.raw"])
        if config.known_d_e is not None:
            d_boundary = float(config.known_d_e)
        else:
            # the total-concentration diffusivity targets D_e * porosity, so
            # its current value doubles as the model's effective-D_e estimate
            d_boundary = T.softplus(leaves["d_ct.raw"]) / config.porosity

    return Modules(flux_c=FluxKernelParams(wc[0], wc[1], d_c),
                   flux_ct=FluxKernelParams(wct[0], wct[1], d_ct),
                   d_boundary=d_boundary)


# -- kernels -------------------------------------------------------------------

def resolve_boundary(u, bc_left: BoundaryCondition, bc_right: BoundaryCondition,
                     d_boundary, dx: float) -> GhostValues:
    """Ghost values / flux overrides for the current state (tape-friendly)."""
    gl = gr = fl = fr = None
    if isinstance(bc_left, Dirichlet):
        gl = bc_left.value
    elif isinstance(bc_left, Neumann):
        fl = bc_left.flux
    elif isinstance(bc_left, Cauchy):
        gl = d_boundary / bc_left.flow_rate * (u[0] - u[1]) / dx
    else:
        raise ConfigError(f"unsupported left boundary condition {bc_left!r}")
    if isinstance(bc_right, Dirichlet):
        gr = bc_right.value
    elif isinstance(bc_right, Neumann):
        fr = bc_right.flux
    elif isinstance(bc_right, Cauchy):
        gr = d_boundary / bc_right.flow_rate * (u[-1] - u[-2]) / dx
    else:
        raise ConfigError(f"unsupported right boundary condition {bc_right!r}")
    return GhostValues(gl, gr, fl, fr)


@dataclass
class FaceGeometry:
    """Per-face left/right values and mean concentrations for one state.

    Built once per rhs evaluation and shared by both flux kernels (they read
    the same field through the same ghosts). At an overridden boundary face
    the ghost slot holds an arbitrary placeholder; its rate is replaced.
    """

    left: object       # (n+1,) value on the lower-index side of each face
    right: object      # (n+1,) value on the higher-index side
    mean: object       # (n+1,) face concentrations
    override_left: float | None
    override_right: float | None


def face_geometry(u, ghosts: GhostValues) -> FaceGeometry:
    gl = 0.0 if ghosts.ghost_left is None else ghosts.ghost_left
    gr = 0.0 if ghosts.ghost_right is None else ghosts.ghost_right
    ext = T.cat([gl, u, gr])
    left, right = ext[:-1], ext[1:]
    return FaceGeometry(left=left, right=right, mean=(left + right) * 0.5,
                        override_left=ghosts.flux_override_left,
                        override_right=ghosts.flux_override_right)


def _apply_kernel(faces: FaceGeometry, params: FluxKernelParams, dx: float):
    inv_dx2 = 1.0 / (dx * dx)
    d = params.d_module.face_values(faces.mean)
    f = d * (params.w_self * faces.left + params.w_neighbor * faces.right) * inv_dx2
    if faces.override_left is not None:
        f = T.cat([-float(faces.override_left), f[1:]])
    if faces.override_right is not None:
        f = T.cat([f[:-1], float(faces.override_right)])
    return f[1:] - f[:-1]


def flux_kernel(u, ghosts: GhostValues, params: FluxKernelParams, dx: float):
    """Net diffusive exchange rate of every volume from shared face rates.

    The rate at the face between a left value ``a`` and right value ``b`` is
    ``d * (w_self * a + w_neighbor * b) / dx**2`` with ``d`` evaluated at the
    face-mean concentration; the ghost takes the missing role at boundary
    faces and Neumann overrides replace the boundary contribution verbatim.
    Each interior face rate enters its two volumes with opposite signs.
    """
    return _apply_kernel(face_geometry(u, ghosts), params, dx)


def state_kernel(flux, u, source: SourceNetwork | None = None):
    """Time derivative of one field: flux plus optional learned source/sink."""
    if source is None:
        return flux
    return flux + source(u)


def finn_rhs(c, ct, config: FinnConfig, modules: Modules):
    """Coupled time derivatives; both flux kernels read the dissolved field."""
    ghosts = resolve_boundary(c, config.bc_left, config.bc_right,
                              modules.d_boundary, config.grid.dx)
    faces = face_geometry(c, ghosts)
    dc = state_kernel(_apply_kernel(faces, modules.flux_c, config.grid.dx),
                      c, modules.source_c)
    dct = state_kernel(_apply_kernel(faces, modules.flux_ct, config.grid.dx),
                       c, modules.source_ct)
    return dc, dct


def rhs_function(config: FinnConfig, leaves: dict):
    """Packed-state rhs ``(t, y) -> dy`` over y = [c, ct] for the integrators."""
    modules = build_modules(config, leaves)
    n = config.grid.n_volumes

    def rhs(t, y):
        dc, dct = finn_rhs(y[:n], y[n:], config, modules)
        return T.cat([dc, dct])

    return rhs


# -- rollout and extraction -----------------------------------------------------

def rollout(params: ParamStore, config: FinnConfig, initial: FieldPair,
            t_grid: np.ndarray, rtol: float = 1e-6, atol: float = 1e-8):
    """Closed-loop prediction under the adaptive integrator (inference path)."""
    from .dataio import Dataset, scenario_meta

    n = config.grid.n_volumes
    if initial.c.size != n or initial.ct.size != n:
        raise ShapeError(f"initial fields must have {n} entries")
    rhs = rhs_function(config, dict(params.tensors))
    y0 = np.concatenate((initial.c, initial.ct))
    traj = integrate_adaptive(rhs, y0, t_grid, rtol=rtol, atol=atol)
    meta = scenario_meta(grid=config.grid, soil=None, bc_left=config.bc_left,
                         bc_right=config.bc_right, provenance="finn rollout")
    return Dataset(t_grid=np.asarray(t_grid, dtype=np.float64),
                   c=traj[:, :n], ct=traj[:, n:], meta=meta)


def rollout_recorded(tape: Tape, leaves: dict, config: FinnConfig,
                     initial: FieldPair, t_grid: np.ndarray,
                     method: str = "rk4", max_abs: float | None = None) -> list:
    """Differentiable fixed-step rollout; returns the list of packed states."""
    y0 = tape.constant(np.concatenate((initial.c, initial.ct)))
    rhs = rhs_function(config, leaves)
    return integrate_fixed(rhs, y0, t_grid, method=method, max_abs=max_abs)


def d_e_estimate(params: ParamStore, config: FinnConfig) -> float:
    """Known effective diffusion coefficient, or the one implied by the model."""
    if config.known_d_e is not None:
        return float(config.known_d_e)
    if "d_ct.raw" not in params:
        raise ConfigError("no known_d_e and no learnable total-field diffusivity")
    return float(T.softplus(params["d_ct.raw"])) / config.porosity


def extract_retardation(params: ParamStore, config: FinnConfig,
                        c_values: Sequence[float]) -> np.ndarray:
    """Retardation curve implied by the learned diffusion module.

    ``R(c) = D_e / d_c(c)`` evaluated elementwise; module outputs that
    underflow produce +inf sentinels with a warning.
    """
    c = np.asarray(c_values, dtype=np.float64)
    modules = build_modules(config, dict(params.tensors))
    d_vals = np.broadcast_to(
        np.asarray(value_of(modules.flux_c.d_module.face_values(c))), c.shape).copy()
    d_e = d_e_estimate(params, config)
    tiny = d_vals < D_UNDERFLOW
    if np.any(tiny):
        warnings.warn(f"{int(tiny.sum())} diffusion-module outputs underflowed; "
                      "reporting +inf retardation", RuntimeWarning, stacklevel=2)
    out = np.full(c.shape, np.inf)
    out[~tiny] = d_e / d_vals[~tiny]
    return out


# -- config persistence -----------------------------------------------------------

def model_config_entries(config: FinnConfig) -> dict:
    from .dataio import bc_meta, fmt

    entries = {
        "grid.n_volumes": config.grid.n_volumes,
        "grid.dx": fmt(config.grid.dx),
        "porosity": fmt(config.porosity),
        "learn_stencil": config.learn_stencil,
        "d_c_kind": config.d_c_kind,
        "d_ct_kind": config.d_ct_kind,
        "hidden": ",".join(str(h) for h in config.hidden),
        "c_max": fmt(config.c_max),
        "d_init": fmt(config.d_init),
    }
    if config.grid.length is not None:
        entries["grid.length"] = fmt(config.grid.length)
    if config.known_d_e is not None:
        entries["known_d_e"] = fmt(config.known_d_e)
    entries.update(bc_meta("bc.left", config.bc_left))
    entries.update(bc_meta("bc.right", config.bc_right))
    return entries


def model_config_from_entries(entries: dict[str, str]) -> FinnConfig:
    from .dataio import parse_bc

    return FinnConfig(
        grid=Grid1D(n_volumes=int(entries["grid.n_volumes"]),
                    dx=float(entries["grid.dx"]),
                    length=float(entries["grid.length"]) if "grid.length" in entries else None),
        bc_left=parse_bc(entries, "bc.left"),
        bc_right=parse_bc(entries, "bc.right"),
        porosity=float(entries["porosity"]),
        known_d_e=float(entries["known_d_e"]) if "known_d_e" in entries else None,
        learn_stencil=entries.get("learn_stencil", "true") == "true",
        d_c_kind=entries.get("d_c_kind", "network"),
        d_ct_kind=entries.get("d_ct_kind", "scalar"),
        hidden=tuple(int(h) for h in entries.get("hidden", "15,15,15").split(",")),
        c_max=float(entries.get("c_max", "2.0")),
        d_init=float(entries.get("d_init", "1e-4")))


def model_config_from_meta(meta: dict[str, str], known_d_e: float | None = None,
                           d_init: float | None = None, **overrides) -> FinnConfig:
    """Model configuration for a dataset: grid and boundary come from its
    metadata, porosity from the soil block, structure from the defaults."""
    from .dataio import parse_bc, parse_grid

    grid = parse_grid(meta)
    if d_init is None:
        if "dt" in meta:
            d_init = default_d_init(grid.dx, float(meta["dt"]))
        else:
            raise ConfigError("dataset metadata lacks 'dt'; pass d_init explicitly")
    if "c_max" not in overrides and "c_s" in meta:
        overrides["c_max"] = 2.0 * float(meta["c_s"])
    return FinnConfig(grid=grid,
                      bc_left=parse_bc(meta, "bc.left"),
                      bc_right=parse_bc(meta, "bc.right"),
                      porosity=float(meta["soil.porosity"]),
                      known_d_e=known_d_e, d_init=d_init, **overrides)
