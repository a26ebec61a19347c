import dataclasses
import math

import numpy as np
import pytest

from exceptions import ContractError, ConvergenceError, DomainError, RegimeError
from models import ArrivalModel
from vcts import (
    asymptotic_terms,
    build_params,
    clamped_trajectory,
    compute_bounds,
    conditional_mean_rate,
    delay_order,
    delay_upper_bound,
    discrete_unfinished_work,
    drain_time,
    estimate_beta,
    jg_lower,
    ju_upper,
    leftover_fixed_point,
    leftover_iteration,
    mean_power,
    overbound_area,
    power_low,
    power_lower_bound,
    power_order,
    power_time,
    random_arrival_bounds,
    random_arrival_orders,
    rate_low,
    rate_up,
    traj_y,
    vcts_ode_integrate,
)

N_FFT = 64
EPS = 0.01
FRAME_S = 0.1


class TestExpectations:
    def test_beta_is_free_of_v(self, desk_config, desk_params):
        rng = np.random.default_rng(99)
        estimate = estimate_beta(desk_config.phy_params, 20_000, rng)
        assert estimate.beta == pytest.approx(desk_params.beta, rel=1e-12)
        assert estimate.mean_f == pytest.approx(desk_params.mean_f, rel=1e-12)
        assert estimate.beta_prime >= estimate.beta
        assert estimate.beta_se > 0

    def test_v_shifts_beta(self, desk_params, params_at):
        assert params_at(4.0).beta == pytest.approx(desk_params.beta - math.log(4.0), rel=1e-12)
        assert params_at(4.0).beta_prime <= desk_params.beta_prime

    def test_too_few_samples(self, desk_config, rng):
        with pytest.raises(ContractError):
            estimate_beta(desk_config.phy_params, 100, rng)

    def test_v_required(self, desk_config, desk_samples):
        with pytest.raises(ContractError):
            build_params(desk_config, tradeoff_v=0.0, samples=desk_samples)


class TestRateBounds:
    @pytest.mark.parametrize("backlog", [0.5, 2.0, 10.0, 40.0, 200.0])
    def test_sandwich(self, desk_params, backlog):
        mean, se = conditional_mean_rate(backlog, desk_params)
        assert rate_low(backlog, desk_params) <= mean + 3 * se + 1e-9
        assert mean <= rate_up(backlog, desk_params) + 3 * se + 1e-9

    def test_empty_queue(self, desk_params):
        assert rate_low(0.0, desk_params) == 0.0
        assert rate_up(0.0, desk_params) == 0.0
        assert conditional_mean_rate(0.0, desk_params) == (0.0, 0.0)

    @pytest.mark.parametrize("backlog", [5.0, 20.0, 35.0])
    def test_tangent_power_is_below_mean_power(self, desk_params, backlog):
        mean, _ = mean_power(backlog, desk_params)
        assert power_low(backlog, 40.0, desk_params) <= mean + 1e-9

    def test_circuit_power_charged_only_when_active(self, params_at):
        assert mean_power(20.0, params_at(1e6, circuit_power=5.0))[0] == 0.0
        params = params_at(1.0)
        f = params.quality_samples
        active = np.mean(20.0 * params.power_slope > params.n_fft / f)
        idle, _ = mean_power(20.0, params)
        charged, _ = mean_power(20.0, params_at(1.0, circuit_power=5.0))
        assert charged - idle == pytest.approx(5.0 * active, rel=1e-9)

    def test_trajectory_sandwich(self, desk_params):
        # drains under r_low, E[r | U] and r_up from the same start stay ordered
        horizon, step = 0.02, 2e-4
        tol = 1e-3

        def mean_rate(u):
            return conditional_mean_rate(u, desk_params)[0]

        slow = vcts_ode_integrate(20.0, 0.0, horizon, step, N_FFT, EPS,
                                  rate=lambda u: rate_low(u, desk_params), richardson_tol=tol)
        middle = vcts_ode_integrate(20.0, 0.0, horizon, step, N_FFT, EPS, rate=mean_rate, richardson_tol=tol)
        fast = vcts_ode_integrate(20.0, 0.0, horizon, step, N_FFT, EPS,
                                  rate=lambda u: rate_up(u, desk_params), richardson_tol=tol)
        assert np.all(slow.values >= middle.values - 1e-6)
        assert np.all(middle.values >= fast.values - 1e-6)
        closed = [traj_y(t, 20.0, desk_params.beta, N_FFT, EPS) for t in slow.times[::10]]
        np.testing.assert_allclose(slow.values[::10], closed, rtol=1e-6)


TRAJECTORY_CASES = [(20.0, -0.5), (5.0, 0.3), (100.0, -2.0)]


class TestTrajectory:
    def test_starts_at_u0(self):
        assert traj_y(0.0, 20.0, -0.5, N_FFT, EPS) == 20.0

    def test_below_activation_is_a_domain_error(self):
        with pytest.raises(DomainError):
            traj_y(0.01, 1.0, -0.5, N_FFT, EPS)

    def test_clamped_trajectory_is_flat_below_activation(self):
        assert clamped_trajectory(0.05, 1.0, -0.5, N_FFT, EPS) == 1.0

    def test_decreasing_towards_activation_level(self):
        times = np.linspace(0.0, FRAME_S, 21)
        values = [traj_y(t, 20.0, -0.5, N_FFT, EPS) for t in times]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] > math.exp(0.5)

    @pytest.mark.parametrize("u0,beta", TRAJECTORY_CASES)
    def test_matches_rk4(self, u0, beta):
        solution = vcts_ode_integrate(u0, beta, FRAME_S, 1e-4 * FRAME_S, N_FFT, EPS)
        for t, value in zip(solution.times[::50], solution.values[::50]):
            assert traj_y(t, u0, beta, N_FFT, EPS) == pytest.approx(value, rel=1e-6)

    def test_richardson_check_rejects_coarse_steps(self):
        with pytest.raises(ConvergenceError):
            vcts_ode_integrate(100.0, -2.0, FRAME_S, 0.05, N_FFT, EPS, richardson_tol=1e-12)

    @pytest.mark.slow
    def test_matches_rk4_on_many_parameter_sets(self):
        gen = np.random.default_rng(1)
        for _ in range(20):
            u0 = float(np.exp(gen.uniform(math.log(3.0), math.log(300.0))))
            beta = float(gen.uniform(-2.0, 1.0))
            if math.log(u0) + beta <= 0.2:
                beta = 0.2 - math.log(u0) + 0.5
            solution = vcts_ode_integrate(u0, beta, FRAME_S, 1e-5 * FRAME_S, N_FFT, EPS)
            for t, value in zip(solution.times[::1000], solution.values[::1000]):
                assert traj_y(t, u0, beta, N_FFT, EPS) == pytest.approx(value, rel=1e-6)


class TestFixedPoint:
    def test_residual(self, desk_params):
        beta = desk_params.beta
        leftover = leftover_fixed_point(20.0, FRAME_S, beta, N_FFT, EPS)
        assert leftover > 0
        assert abs(clamped_trajectory(FRAME_S, 20.0 + leftover, beta, N_FFT, EPS) - leftover) <= 1e-8

    def test_iteration_from_empty_converges(self, desk_params):
        beta = desk_params.beta
        leftover = leftover_fixed_point(20.0, FRAME_S, beta, N_FFT, EPS)
        path = leftover_iteration(20.0, 300, 0.0, FRAME_S, beta, N_FFT, EPS)
        assert path[-1] == pytest.approx(leftover, abs=1e-6)
        # upward from 0 the leftovers increase and never pass L*
        assert all(a <= b + 1e-12 for a, b in zip(path, path[1:]))

    def test_leftover_bounded_over_100_periods(self, desk_params):
        beta = desk_params.beta
        leftover = leftover_fixed_point(20.0, FRAME_S, beta, N_FFT, EPS)
        path = leftover_iteration(20.0, 100, 0.0, FRAME_S, beta, N_FFT, EPS)
        assert max(path) <= leftover + 1e-6

    def test_iteration_from_above_comes_down(self, desk_params):
        beta = desk_params.beta
        leftover = leftover_fixed_point(20.0, FRAME_S, beta, N_FFT, EPS)
        path = leftover_iteration(20.0, 300, 5.0 * leftover, FRAME_S, beta, N_FFT, EPS)
        assert path[-1] == pytest.approx(leftover, abs=1e-6)

    def test_larger_burst_leaves_more(self, desk_params):
        beta = desk_params.beta
        small = leftover_fixed_point(10.0, FRAME_S, beta, N_FFT, EPS)
        large = leftover_fixed_point(40.0, FRAME_S, beta, N_FFT, EPS)
        assert large > small

    def test_burst_must_be_positive(self):
        with pytest.raises(DomainError):
            leftover_fixed_point(0.0, FRAME_S, 0.0, N_FFT, EPS)


class TestPeriodIntegrals:
    def test_unfinished_work_against_midpoint_sum(self, desk_params):
        u0 = 35.0
        panels = 4000
        h = FRAME_S / panels
        riemann = h * sum(traj_y((i + 0.5) * h, u0, desk_params.beta, N_FFT, EPS) for i in range(panels))
        assert ju_upper(u0, FRAME_S, desk_params) == pytest.approx(riemann, rel=1e-7)

    def test_flat_below_activation(self, desk_params):
        tiny = 0.5 * desk_params.activation_level
        assert ju_upper(tiny, FRAME_S, desk_params) == pytest.approx(tiny * FRAME_S)

    def test_discrete_recursion_converges_at_first_order(self, desk_params):
        u0 = 35.0
        continuous = ju_upper(u0, FRAME_S, desk_params)
        errors = [
            abs(discrete_unfinished_work(u0, FRAME_S, dt, desk_params) - continuous)
            for dt in (0.005, 0.0025, 0.00125)
        ]
        assert errors[0] > errors[1] > errors[2]
        assert 1.5 < errors[0] / errors[1] < 2.6
        assert 1.5 < errors[1] / errors[2] < 2.6

    def test_energy_bound(self, desk_params):
        energy = jg_lower(20.0, FRAME_S, desk_params)
        mean, _ = mean_power(20.0, desk_params)
        assert 0.0 < energy <= mean * FRAME_S
        assert jg_lower(0.0, FRAME_S, desk_params) == 0.0


class TestBounds:
    def test_deterministic_bounds(self, desk_config, desk_params):
        config = dataclasses.replace(desk_config, arrival=ArrivalModel.deterministic(20.0))
        bounds = compute_bounds(config, params=desk_params)
        assert not bounds.random_arrivals
        assert bounds.delay_upper == pytest.approx(delay_upper_bound(20.0, desk_params))
        assert bounds.power_lower == pytest.approx(power_lower_bound(20.0, desk_params))
        assert bounds.delay_upper > 0
        assert bounds.power_lower > 0
        assert 0 < bounds.t_d <= FRAME_S
        assert 0 < bounds.t_p <= FRAME_S
        assert bounds.leftover_fixed_point > 0
        assert bounds.delay_order is not None
        assert bounds.regime_note == ""
        assert set(bounds.as_dict()) >= {"beta", "beta_prime", "t_d_s", "t_p_s", "delay_upper_s", "power_lower"}

    def test_desk_burst_is_outside_small_v_regime(self, desk_config, desk_params):
        bounds = compute_bounds(desk_config, params=desk_params)
        assert bounds.delay_upper > 0
        assert bounds.leftover_fixed_point >= desk_params.activation_level
        assert bounds.delay_order is None
        assert "small-V regime" in bounds.regime_note

    def test_random_arrival_dispatch(self, desk_random_config, desk_samples):
        params = build_params(desk_random_config, samples=desk_samples)
        bounds = compute_bounds(desk_random_config, params=params)
        assert bounds.random_arrivals
        delay, power = random_arrival_bounds(desk_random_config.arrival, params)
        assert bounds.delay_upper == pytest.approx(delay)
        assert bounds.power_lower == pytest.approx(power)
        assert bounds.delay_order == pytest.approx(random_arrival_orders(desk_random_config.arrival, params)[0])

    def test_never_active_gives_zero_power_with_note(self, desk_config, params_at):
        bounds = compute_bounds(desk_config, params=params_at(1e6))
        assert bounds.power_lower == 0.0
        assert "never activates" in bounds.regime_note
        assert bounds.t_p == FRAME_S

    def test_delay_bound_grows_with_v(self, params_at):
        delays = [delay_upper_bound(20.0, params_at(v)) for v in (0.5, 1.0, 2.0, 4.0)]
        powers = [power_lower_bound(20.0, params_at(v)) for v in (0.5, 1.0, 2.0, 4.0)]
        assert all(a < b for a, b in zip(delays, delays[1:]))
        assert all(a > b for a, b in zip(powers, powers[1:]))

    @pytest.mark.parametrize("v", [0.5, 1.0, 2.0])
    def test_triangle_overbounds_unfinished_work(self, params_at, v):
        params = params_at(v)
        leftover = leftover_fixed_point(20.0, FRAME_S, params.beta, N_FFT, EPS)
        assert overbound_area(20.0, params) >= ju_upper(20.0 + leftover, FRAME_S, params)

    def test_drain_and_power_times(self, desk_params):
        terms = asymptotic_terms(20.0, desk_params)
        assert terms.t_d == pytest.approx(drain_time(20.0, desk_params))
        assert terms.t_p == pytest.approx(power_time(20.0, desk_params))
        assert 0 < terms.t_d <= FRAME_S


class TestAsymptoticOrders:
    burst = 20.0

    def test_delay_order_band(self, params_at):
        for v in (1e-4, 1e-3, 1e-2, 1e-1):
            params = params_at(v)
            scaled = delay_order(self.burst, params) * math.log(self.burst * params.mean_f / v) / self.burst**2
            assert 0.3 <= scaled <= 3.0

    def test_power_order_band(self, params_at):
        for v in (1e-4, 1e-3, 1e-2, 1e-1):
            params = params_at(v)
            scaled = power_order(self.burst, params) * v * math.log(self.burst * params.mean_f / v) / self.burst**2
            assert 0.3 <= scaled <= 3.0

    def test_circuit_power_grows_power_order_linearly(self, params_at):
        orders = [power_order(self.burst, params_at(0.1, circuit_power=p)) for p in (0.0, 1.0, 2.0, 3.0)]
        steps = np.diff(orders)
        assert steps[0] > 0
        np.testing.assert_allclose(steps, steps[0], rtol=1e-12)

    def test_outside_small_v_regime(self, params_at):
        with pytest.raises(RegimeError):
            delay_order(self.burst, params_at(1e4))
