import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conftest import mix_coeffs, standard_problem, state_free_coeffs, zero_coeffs

from ospde.errors import AssumptionError, ConfigurationError
from ospde.grid import Field, assemble_operator, build_grid, divergence
from ospde.norms import FieldPath, mixed_norm
from ospde.solver import (OBSTACLE_OFF, DiscreteMeasure, DominatorData, ProblemData,
                          skorokhod_defect, solve_linear_spde, solve_penalized,
                          solve_projected, solve_random_pde, solve_unconstrained,
                          step_linear)
from ospde.stochastics import CoefficientSet, NoisePath, sample_noise


class TestStepLinear:
    def test_zero_everything(self, grid64, op64):
        out = step_linear(op64, 0.01, Field.zeros(grid64))
        assert np.all(out.values == 0.0)

    def test_single_step_flux_formula(self, grid64, op64):
        # one step from zero with only a flux source equals
        # dt * (I + dt K)^{-1} div_h g, checked against a direct solve
        rng = np.random.default_rng(1)
        dt = 0.01
        gfield = np.zeros((grid64.n_nodes, 1))
        gfield[grid64.interior, 0] = rng.normal(size=grid64.n_interior)
        out = step_linear(op64, dt, Field.zeros(grid64), g=gfield)
        B = sp.identity(grid64.n_interior) + dt * op64.stiffness
        expected = spla.spsolve(B.tocsc(), dt * grid64.restrict(divergence(grid64, gfield)))
        assert np.allclose(grid64.restrict(out.values), expected, atol=1e-14)

    def test_constant_drift_reaches_steady_state(self, grid64, op64):
        dt = 1.0 / 500
        state = Field.zeros(grid64)
        ones = np.ones(grid64.n_nodes)
        for _ in range(4000):
            state = step_linear(op64, dt, state, f=ones)
        steady = spla.spsolve(op64.stiffness.tocsc(), np.ones(grid64.n_interior))
        assert np.abs(grid64.restrict(state.values) - steady).max() < 1e-8


class TestAgainstAnalyticOracles:
    def test_heat_decay_matches_closed_form(self):
        # pure heat flow from sin(pi x): u(T) = exp(-pi^2 T) sin(pi x)
        def err(cells, steps):
            g = build_grid(1, (0.0, 1.0), cells)
            op = assemble_operator(g, 1.0, 1.0, 1.0)
            T = 0.1
            dt = T / steps
            times = np.arange(steps + 1) * dt
            data = ProblemData(
                op=op, xi=Field.from_function(g, lambda x: np.sin(np.pi * x[:, 0])),
                coeffs=zero_coeffs(1),
                obstacle=FieldPath.constant(g, times, OBSTACLE_OFF),
                noise=NoisePath(J=1, dt=dt, increments=np.zeros((1, steps)), seed=0))
            res = solve_unconstrained(data)
            exact = np.exp(-np.pi ** 2 * T) * np.sin(np.pi * g.coords[:, 0])
            return float(np.abs(res.u.frames[-1] - exact).max())

        coarse, fine = err(32, 64), err(64, 256)
        assert fine < 1e-3
        assert coarse / fine > 3.0

    def test_additive_noise_covariance_exact(self):
        # terminal second moment of the additive-noise linear flow vs the
        # exact discrete covariance recursion C -> M (C + dt H H^T) M^T
        g = build_grid(1, (0.0, 1.0), 32)
        op = assemble_operator(g, 1.0, 1.0, 1.0)
        steps, T = 32, 0.1
        dt = T / steps
        times = np.arange(steps + 1) * dt
        w = np.array([0.8, 0.6])
        hx = 0.5 * np.sin(np.pi * g.coords[:, 0])
        hprof = np.tile(hx[:, None] * w[None, :], (steps + 1, 1, 1))

        M = np.linalg.inv((sp.identity(g.n_interior) + dt * op.stiffness).toarray())
        H = hx[g.interior][:, None] * w[None, :]
        C = np.zeros((g.n_interior, g.n_interior))
        for _ in range(steps):
            C = M @ (C + dt * (H @ H.T)) @ M.T
        exact_sq = g.cell_measure * np.trace(C)

        vals = []
        for seed in range(300):
            noise = sample_noise(2, dt, steps, 81_000 + seed)
            data = ProblemData(
                op=op, xi=Field.zeros(g), coeffs=zero_coeffs(2),
                obstacle=FieldPath.constant(g, times, OBSTACLE_OFF), noise=noise,
                dominator=DominatorData(initial=Field.zeros(g), h=hprof))
            path = solve_linear_spde(data)
            vals.append(g.cell_measure * float(np.sum(g.restrict(path.frames[-1]) ** 2)))
        mc, se = np.mean(vals), np.std(vals) / np.sqrt(len(vals))
        assert abs(mc - exact_sq) <= 4.0 * se


class TestSolveLinearSpde:
    @pytest.mark.filterwarnings("ignore:obstacle exceeds its dominator")
    def test_zero_dominator_data(self):
        probe = standard_problem(cells=16, steps=32)
        dom = DominatorData(initial=Field.zeros(probe.op.grid))
        data = standard_problem(cells=16, steps=32, dominator=dom)
        path = solve_linear_spde(data)
        assert np.all(path.frames == 0.0)

    def test_missing_dominator_rejected(self):
        data = standard_problem(cells=16, steps=32)
        with pytest.raises(ConfigurationError, match="dominator"):
            solve_linear_spde(data)

    def test_additive_noise_is_mean_zero(self):
        # h' only: S' is a stochastic convolution with zero mean
        grid = build_grid(1, (0.0, 1.0), 32)
        op = assemble_operator(grid, 1.0, 1.0, 1.0)
        steps, dt, J = 64, 0.25 / 64, 2
        times = np.arange(steps + 1) * dt
        w = np.array([0.8, 0.6])
        hprof = np.tile((0.5 * np.sin(np.pi * grid.coords[:, 0]))[:, None] * w[None, :],
                        (steps + 1, 1, 1))
        terminal = []
        for seed in range(200):
            noise = sample_noise(J, dt, steps, 5000 + seed)
            data = ProblemData(
                op=op, xi=Field.zeros(grid), coeffs=zero_coeffs(J),
                obstacle=FieldPath.constant(grid, times, OBSTACLE_OFF), noise=noise,
                dominator=DominatorData(initial=Field.zeros(grid), h=hprof))
            terminal.append(solve_linear_spde(data).frames[-1])
        terminal = np.array(terminal)
        mean = terminal.mean(axis=0)
        stderr = terminal.std(axis=0) / np.sqrt(len(terminal)) + 1e-15
        assert np.all(np.abs(mean) <= 5.0 * stderr)

    @pytest.mark.filterwarnings("ignore:obstacle exceeds its dominator")
    def test_no_blowup_over_seeds(self):
        sups = []
        diags = {}
        for seed in range(50):
            data = standard_problem(cells=16, steps=64, seed=7000 + seed,
                                    dominator=None)
            grid = data.op.grid
            dom = DominatorData(initial=data.xi,
                                f=np.full((data.steps + 1, grid.n_nodes), 2.0))
            data = standard_problem(cells=16, steps=64, seed=7000 + seed, dominator=dom)
            path = solve_linear_spde(data, diagnostics=diags)
            sups.append(max(float(grid.quad_weights @ fr ** 2) for fr in path.frames))
        assert np.isfinite(np.mean(sups))
        assert np.isfinite(diags["ratio"])


class TestSolveRandomPde:
    def test_zero_source(self, grid64, op64):
        times = np.linspace(0, 0.5, 33)
        w = solve_random_pde(op64, FieldPath.zeros(grid64, times))
        assert np.all(w.frames == 0.0)

    @pytest.mark.filterwarnings("ignore:obstacle exceeds its dominator")
    def test_matches_linear_spde_without_noise(self):
        data = standard_problem(cells=16, steps=32, dominator=None)
        grid = data.op.grid
        src = np.tile(np.sin(np.pi * grid.coords[:, 0]), (data.steps + 1, 1))
        dom = DominatorData(initial=Field.zeros(grid), f=src)
        data2 = standard_problem(cells=16, steps=32, dominator=dom,
                                 noise=NoisePath(J=2, dt=data.dt,
                                                 increments=np.zeros((2, 32)), seed=0))
        w = solve_random_pde(data.op, FieldPath(grid, data.times, src))
        sprime = solve_linear_spde(data2)
        assert np.allclose(w.frames, sprime.frames, atol=1e-14)

    def test_energy_bound_stable_under_refinement(self):
        # sup |w|^2 + int E(w) <= C (dual#(f0))^2 with C stable in h, dt
        from ospde.grid import energy_values
        from ospde.norms import NormToolbox, dual_sharp_upper
        ratios = []
        for cells, steps in ((32, 64), (64, 128)):
            grid = build_grid(1, (0.0, 1.0), cells)
            op = assemble_operator(grid, 1.0, 1.0, 1.0)
            times = np.arange(steps + 1) * (0.25 / steps)
            frames = np.stack([np.sin(np.pi * grid.coords[:, 0]) * (1 + t) for t in times])
            src = FieldPath(grid, times, frames)
            w = solve_random_pde(op, src)
            sup_sq = max(float(grid.quad_weights @ fr ** 2) for fr in w.frames)
            en = sum(energy_values(op, w.frames[k + 1]) for k in range(steps)) * src.dt
            dual = dual_sharp_upper(src, 0.25, NormToolbox.for_dim(1))
            ratios.append((sup_sq + en) / dual ** 2)
        assert 0.5 <= ratios[0] / ratios[1] <= 2.0


class TestConstrainedSolvers:
    def test_inactive_obstacle_reduction(self):
        data = standard_problem(cells=24, steps=64, obstacle_level=OBSTACLE_OFF)
        free = solve_unconstrained(data)
        pen = solve_penalized(data, 1000)
        proj = solve_projected(data)
        assert np.abs(pen.u.frames - free.u.frames).max() <= 1e-10
        assert np.abs(proj.u.frames - free.u.frames).max() <= 1e-10
        assert pen.measure.total_mass() <= 1e-10
        assert proj.measure.total_mass() <= 1e-10

    def test_penalized_weights_nonnegative(self):
        data = standard_problem(cells=24, steps=64)
        pen = solve_penalized(data, 100)
        assert pen.measure.weights.min() >= 0.0

    def test_projected_feasibility_and_complementarity(self):
        data = standard_problem(cells=24, steps=64)
        res = solve_projected(data)
        grid = data.op.grid
        assert np.all(res.u.frames[:, grid.interior]
                      >= data.obstacle.frames[:, grid.interior] - 1e-12)
        assert skorokhod_defect(res.u, data.obstacle, res.measure) <= 1e-8

    def test_measure_supported_on_contact_set(self):
        data = standard_problem(cells=24, steps=64)
        res = solve_projected(data)
        grid = data.op.grid
        gap = (res.u.frames[1:, grid.interior]
               - data.obstacle.frames[1:, grid.interior])
        off_contact = gap > 10 * 1e-10
        assert np.abs(res.measure.weights[off_contact]).max(initial=0.0) <= 1e-10

    def test_penalization_distance_decreases(self):
        data = standard_problem(cells=24, steps=64)
        star = solve_projected(data)
        grid = data.op.grid
        T = float(data.times[-1])
        dists = []
        for n in (10, 100, 1000):
            pen = solve_penalized(data, n)
            dists.append(mixed_norm(FieldPath(grid, data.times,
                                              pen.u.frames - star.u.frames), 2, math.inf, T))
        assert dists[0] > dists[1] > dists[2]

    def test_penalized_mass_bounded_in_n(self):
        data = standard_problem(cells=24, steps=64)
        proj_mass = solve_projected(data).measure.total_mass()
        for n in (10, 100, 1000, 10000):
            assert solve_penalized(data, n).measure.total_mass() <= 10 * proj_mass

    def test_shared_noise_determinism(self):
        data = standard_problem(cells=24, steps=64, seed=77)
        r1 = solve_projected(data)
        r2 = solve_projected(data)
        assert np.array_equal(r1.u.frames, r2.u.frames)
        assert np.array_equal(r1.measure.weights, r2.measure.weights)
        data_b = standard_problem(cells=24, steps=64, seed=77)
        r3 = solve_projected(data_b)
        assert np.array_equal(r1.u.frames, r3.u.frames)

    def test_contraction_gate_refuses(self):
        z = zero_coeffs(2)
        bad = CoefficientSet(f=z.f, g=lambda t, x, y, z_: 1.0 * z_, h=z.h,
                             C=0.0, alpha=1.0, beta=0.0, modes=2)
        data = standard_problem(cells=16, steps=16, coeffs=bad)
        with pytest.raises(AssumptionError):
            solve_projected(data)
        with pytest.raises(AssumptionError):
            solve_penalized(data, 10)

    def test_deterministic_obstacle_first_order_in_h(self):
        # deterministic obstacle heat flow vs the same scheme on a 4x finer
        # grid, restricted to the coarse nodes: errors shrink ~ first order
        T, steps = 0.1, 256

        def solve_on(cells):
            grid = build_grid(1, (0.0, 1.0), cells)
            op = assemble_operator(grid, 1.0, 1.0, 1.0)
            dt = T / steps
            times = np.arange(steps + 1) * dt
            noise = NoisePath(J=1, dt=dt, increments=np.zeros((1, steps)), seed=0)
            with pytest.warns(UserWarning, match="initial condition"):
                # the flat obstacle starts above sin(pi x) near the boundary
                data = ProblemData(
                    op=op, xi=Field.from_function(grid, lambda x: np.sin(np.pi * x[:, 0])),
                    coeffs=zero_coeffs(1),
                    obstacle=FieldPath.constant(grid, times, 0.2), noise=noise)
            return grid, solve_projected(data)

        errs = []
        for cells in (16, 32):
            gc, coarse = solve_on(cells)
            gf, fine = solve_on(4 * cells)
            sub = fine.u.frames[:, ::4]
            diff = FieldPath(gc, coarse.u.times, coarse.u.frames - sub)
            errs.append(mixed_norm(diff, 2, math.inf, T))
        assert 1.3 <= errs[0] / errs[1] <= 4.0

    def test_skorokhod_zero_measure(self):
        data = standard_problem(cells=16, steps=16)
        zero = DiscreteMeasure.zeros(data.op.grid, data.times)
        assert skorokhod_defect(data.obstacle, data.obstacle, zero) == 0.0


class TestProblemData:
    def test_obstacle_above_initial_warns(self):
        with pytest.warns(UserWarning, match="initial condition"):
            standard_problem(cells=16, steps=16, obstacle_level=2.0)

    def test_mode_count_mismatch_rejected(self):
        with pytest.raises(ConfigurationError, match="modes"):
            standard_problem(cells=16, steps=16, coeffs=mix_coeffs(modes=3))

    def test_dominator_warning_when_domination_fails(self):
        data = standard_problem(cells=16, steps=32)
        grid = data.op.grid
        dom = DominatorData(initial=data.xi)  # plain heat flow decays below 0.2
        data = standard_problem(cells=16, steps=32, dominator=dom)
        with pytest.warns(UserWarning, match="dominator"):
            solve_linear_spde(data)
