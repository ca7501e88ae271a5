"""Kernel reduction, conservation, frozen-physics equality, and gradients."""

import warnings

import numpy as np
import pytest

from finn import tape as T
from finn.dataio import Dataset, scenario_meta
from finn.errors import ConfigError
from finn.fvm import (Cauchy, Dirichlet, FieldPair, Grid1D, Neumann,
                      SoilParams, flux_divergence, ghost_values,
                      simulate_diffusion_sorption)
from finn.model import (FinnConfig, FluxKernelParams, Modules, ScalarDiffusion,
                        SourceNetwork, build_modules, d_e_estimate,
                        extract_retardation, finn_rhs, flux_kernel,
                        init_params, lift_params, model_config_entries,
                        model_config_from_entries, resolve_boundary, rollout,
                        rollout_recorded, state_kernel)
from finn.nn import ParamStore
from finn.tape import Tape, value_of
from finn.train import FieldSeries, FullField, mse_loss, _states_to_series

RNG = np.random.default_rng(20240817)


def small_config(n=8, dx=0.25, bc_left=None, bc_right=None, **kw) -> FinnConfig:
    return FinnConfig(grid=Grid1D(n_volumes=n, dx=dx),
                      bc_left=bc_left or Dirichlet(1.0),
                      bc_right=bc_right or Cauchy(flow_rate=1.0),
                      porosity=0.3, **kw)


def scalar_d_params(value: float) -> FluxKernelParams:
    return FluxKernelParams(-1.0, 1.0, ScalarDiffusion(np.asarray(
        T.softplus_inverse(value))))


BC_CASES = [
    (Dirichlet(0.8), Dirichlet(0.1)),
    (Dirichlet(1.0), Neumann(0.0)),
    (Neumann(0.3), Cauchy(flow_rate=2.0)),
    (Dirichlet(0.5), Cauchy(flow_rate=1.0)),
]


class TestFluxKernel:
    @pytest.mark.parametrize("bc_left,bc_right", BC_CASES)
    def test_reduces_to_classical_stencil(self, bc_left, bc_right):
        # frozen stencil (-1, 1) with a scalar diffusion module must equal the
        # reference constant-coefficient operator under every boundary type
        n, dx, d = 26, 0.04, 3.3e-4
        for trial in range(20):
            u = RNG.uniform(0.0, 1.0, n)
            ghosts = ghost_values(u, bc_left, bc_right, d_boundary=d, dx=dx)
            reference = flux_divergence(u, ghosts, d, dx)
            tape = Tape()
            out = flux_kernel(tape.leaf(u), ghosts, scalar_d_params(d), dx)
            assert np.max(np.abs(value_of(out) - reference)) <= 1e-12

    def test_constant_field_with_matching_dirichlet_is_zero(self):
        n, k = 12, 0.6
        u = np.full(n, k)
        ghosts = ghost_values(u, Dirichlet(k), Dirichlet(k), 1e-4, 0.1)
        tape = Tape()
        out = flux_kernel(tape.leaf(u), ghosts, scalar_d_params(1e-4), 0.1)
        assert np.allclose(value_of(out), 0.0, atol=1e-15)

    def test_zero_flux_conservation_for_arbitrary_parameters(self):
        # interior face rates cancel in pairs, so sealed ends give zero total
        n, dx = 26, 0.04
        config = small_config(n=n, dx=dx, bc_left=Neumann(0.0),
                              bc_right=Neumann(0.0))
        for seed in range(50):
            params = init_params(config, seed=seed)
            store = ParamStore()
            for name, v in params.tensors.items():  # scramble away from init
                store[name] = v + np.random.default_rng(seed).normal(
                    0.0, 0.5, size=v.shape)
            u = np.random.default_rng(1000 + seed).uniform(0.0, 1.5, n)
            ct = np.zeros(n)
            modules = build_modules(config, dict(store.tensors))
            dc, dct = finn_rhs(u, ct, config, modules)
            scale = max(1.0, np.max(np.abs(dc)), np.max(np.abs(dct)))
            assert abs(float(np.sum(dc))) <= 1e-12 * scale
            assert abs(float(np.sum(dct))) <= 1e-12 * scale

    def test_network_diffusion_positive_everywhere(self):
        config = small_config()
        params = init_params(config, seed=4)
        modules = build_modules(config, dict(params.tensors))
        c_face = np.linspace(-1.0, 3.0, 40)  # clamp handles out-of-range input
        d = modules.flux_c.d_module.face_values(c_face)
        assert np.all(d > 0)


class TestStateKernel:
    def test_none_source_is_identity(self):
        f = np.array([0.1, -0.4, 0.2])
        assert state_kernel(f, np.zeros(3)) is f

    def test_zero_source_network(self):
        src = SourceNetwork(weights=[np.zeros((4, 1)), np.zeros((1, 4))],
                            biases=[np.zeros(4), np.zeros(1)])
        f, u = np.array([0.3, 0.1]), np.array([0.5, 0.6])
        assert np.allclose(state_kernel(f, u, src), f, atol=1e-15)

    def test_identity_source_adds_state(self):
        src = SourceNetwork(weights=[np.array([[1.0]])], biases=[np.zeros(1)])
        f, u = np.array([0.3, 0.1, -0.2]), np.array([0.5, 0.6, 0.7])
        assert np.allclose(state_kernel(f, u, src), f + u, rtol=1e-14)


def frozen_physics_setup(n=10, dx=0.1):
    """Constant-R scenario (n_f = 1) the model can represent exactly."""
    soil = SoilParams(d_e=4e-4, porosity=0.3, rho_s=2000.0, k_f=2e-4, n_f=1.0)
    r0 = 1.0 + (0.7 / 0.3) * 2000.0 * 2e-4  # 1.9333...
    grid = Grid1D(n_volumes=n, dx=dx)
    bc = (Dirichlet(1.0), Cauchy(flow_rate=1.0))
    config = FinnConfig(grid=grid, bc_left=bc[0], bc_right=bc[1],
                        porosity=soil.porosity, known_d_e=soil.d_e,
                        learn_stencil=False, d_c_kind="scalar",
                        d_ct_kind="fixed")
    params = ParamStore()
    params["d_c.raw"] = np.asarray(T.softplus_inverse(soil.d_e / r0))
    return soil, r0, grid, bc, config, params


class TestFrozenPhysics:
    def test_rhs_matches_simulator_reference(self):
        soil, r0, grid, bc, config, params = frozen_physics_setup()
        from finn.fvm import diffusion_sorption_rhs

        for trial in range(10):
            c = np.sort(RNG.uniform(0.0, 1.0, grid.n_volumes))[::-1].copy()
            ct = RNG.uniform(0.0, 1.0, grid.n_volumes)
            ref_dc, ref_dct = diffusion_sorption_rhs(
                c, ct, soil, bc[0], bc[1], grid.dx,
                retardation=lambda cc, s: r0)
            modules = build_modules(config, dict(params.tensors))
            dc, dct = finn_rhs(c, ct, config, modules)
            assert np.max(np.abs(dc - ref_dc)) <= 1e-12
            assert np.max(np.abs(dct - ref_dct)) <= 1e-12

    def test_rollout_matches_simulator(self):
        soil, r0, grid, bc, config, params = frozen_physics_setup()
        t_grid = np.linspace(0.0, 50.0, 26)
        truth = simulate_diffusion_sorption(grid, soil, bc, t_grid,
                                            retardation=lambda c, s: r0)
        pred = rollout(params, config, FieldPair.zeros(grid.n_volumes), t_grid)
        assert np.max(np.abs(pred.c - truth.c)) < 1e-7
        assert np.max(np.abs(pred.ct - truth.ct)) < 1e-7

    def test_zero_state_is_equilibrium(self):
        config = small_config(bc_left=Dirichlet(0.0), bc_right=Neumann(0.0))
        params = init_params(config, seed=0)
        modules = build_modules(config, dict(params.tensors))
        dc, dct = finn_rhs(np.zeros(8), np.zeros(8), config, modules)
        assert np.allclose(dc, 0.0, atol=1e-15)
        assert np.allclose(dct, 0.0, atol=1e-15)

    def test_dirichlet_value_only_reaches_adjacent_volume(self):
        config = small_config(bc_left=Dirichlet(1.0), bc_right=Neumann(0.0))
        params = init_params(config, seed=1)
        modules = build_modules(config, dict(params.tensors))
        u = RNG.uniform(0.2, 0.8, 8)
        dc_a, _ = finn_rhs(u, np.zeros(8), config, modules)
        config2 = small_config(bc_left=Dirichlet(0.3), bc_right=Neumann(0.0))
        dc_b, _ = finn_rhs(u, np.zeros(8), config2,
                           build_modules(config2, dict(params.tensors)))
        diff = np.abs(dc_a - dc_b)
        assert diff[0] > 1e-6        # the boundary volume responds
        assert np.all(diff[1:] == 0)  # nothing beyond stencil reach does


class TestRolloutGradient:
    def test_rollout_loss_gradient_matches_finite_differences(self):
        # small but complete setup: every parameter of the full model
        config = FinnConfig(grid=Grid1D(n_volumes=5, dx=0.25),
                            bc_left=Dirichlet(1.0), bc_right=Cauchy(flow_rate=1.0),
                            porosity=0.3, hidden=(4,), c_max=2.0, d_init=2e-2)
        params = init_params(config, seed=2)
        t_grid = np.linspace(0.0, 0.5, 6)  # five steps
        initial = FieldPair(RNG.uniform(0.1, 0.9, 5), RNG.uniform(0.1, 0.9, 5))
        target = FieldSeries(c=RNG.uniform(0.0, 1.0, (6, 5)),
                             ct=RNG.uniform(0.0, 1.0, (6, 5)))

        def loss_at(store: ParamStore) -> float:
            tape = Tape()
            leaves = lift_params(tape, store)
            states = rollout_recorded(tape, leaves, config, initial, t_grid)
            return float(value_of(mse_loss(_states_to_series(states, 5),
                                           target, FullField())))

        tape = Tape()
        leaves = lift_params(tape, params)
        states = rollout_recorded(tape, leaves, config, initial, t_grid)
        loss = mse_loss(_states_to_series(states, 5), target, FullField())
        grads = tape.gradient(loss, [leaves[k] for k in params.names()])

        for name, grad in zip(params.names(), grads):
            base = params[name]
            for idx in np.ndindex(base.shape or (1,)):
                h = 1e-6 * max(1.0, abs(float(base[idx]) if base.shape else float(base)))
                plus, minus = params.copy(), params.copy()
                if base.shape:
                    plus[name][idx] += h
                    minus[name][idx] -= h
                else:
                    plus[name] = plus[name] + h
                    minus[name] = minus[name] - h
                fd = (loss_at(plus) - loss_at(minus)) / (2 * h)
                ad = grad[idx] if base.shape else float(grad)
                denom = max(abs(fd), abs(ad), 1e-7)
                assert abs(ad - fd) / denom < 1e-3, (name, idx, ad, fd)


class TestRetardationExtraction:
    def test_constant_module_gives_constant_curve(self):
        soil, r0, grid, bc, config, params = frozen_physics_setup()
        c = np.linspace(0.2, 1.0, 9)
        r = extract_retardation(params, config, c)
        assert np.allclose(r, r0, rtol=1e-12)

    def test_underflow_reports_infinity(self):
        soil, r0, grid, bc, config, params = frozen_physics_setup()
        params["d_c.raw"] = np.asarray(-80.0)  # softplus underflows to 0
        with pytest.warns(RuntimeWarning):
            r = extract_retardation(params, config, [0.5])
        assert np.isinf(r[0])

    def test_learned_d_e_comes_from_total_field_scalar(self):
        config = small_config()
        params = init_params(config, seed=0)
        d_ct = float(T.softplus(params["d_ct.raw"]))
        assert d_e_estimate(params, config) == pytest.approx(
            d_ct / config.porosity, rel=1e-12)

    def test_missing_d_e_is_an_error(self):
        config = small_config(d_ct_kind="scalar")
        params = init_params(config, seed=0)
        del params.tensors["d_ct.raw"]
        with pytest.raises(ConfigError):
            d_e_estimate(params, config)


class TestParameterBudget:
    def test_total_parameter_count_near_reported_value(self):
        config = small_config()  # network d_c, scalar d_ct, two stencil pairs
        params = init_params(config, seed=0)
        assert abs(params.n_params() - 528) / 528.0 <= 0.10

    def test_deterministic_initialization(self):
        config = small_config()
        a, b = init_params(config, seed=7), init_params(config, seed=7)
        assert a.equals(b)
        c = init_params(config, seed=8)
        assert not a.equals(c)

    def test_stencil_initialized_near_ideal_weights(self):
        params = init_params(small_config(), seed=11)
        assert abs(params["stencil_c"][0] + 1.0) <= 0.1
        assert abs(params["stencil_c"][1] - 1.0) <= 0.1


class TestConfigPersistence:
    def test_entries_round_trip(self):
        config = small_config(known_d_e=2e-5, d_ct_kind="fixed", c_max=2.8)
        back = model_config_from_entries(
            {k: str(v) if not isinstance(v, bool) else ("true" if v else "false")
             for k, v in model_config_entries(config).items()})
        assert back == config

    def test_rejects_inconsistent_kinds(self):
        with pytest.raises(ConfigError):
            small_config(d_ct_kind="fixed")  # no known_d_e
        with pytest.raises(ConfigError):
            small_config(d_c_kind="spline")
