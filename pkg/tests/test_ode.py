"""Reduced-dynamics integrator against its closed-form late-time limits."""

import math
import warnings

import numpy as np
import pytest

from sgdreg import ode, theory
from sgdreg.distribution import DataDistribution
from sgdreg.perceptron import ModelParams


def params_for(T, chi=1.0, d=128, B=8, **kw):
    return ModelParams(dist=DataDistribution(chi=chi, dim=d), P=8192,
                       kappa=2.0**-7, eta=T * B, B=B, **kw)


class TestInits:
    def test_default_init_scale(self):
        s = ode.default_init(T=2.0, d=128)
        assert s.w1 == s.wp == pytest.approx(2e-6 * math.sqrt(128))
        assert s.t == 0.0

    def test_first_step_init(self):
        p = params_for(2.0)
        s = ode.first_step_init(p)
        want_w1 = p.eta * theory.mean_abs_x1(1.0) / math.sqrt(128)
        assert s.w1 == pytest.approx(want_w1, rel=1e-12)
        assert s.wp == pytest.approx(p.eta / math.sqrt(p.B), rel=0.01)
        assert s.t == p.eta

    def test_invalid_init(self):
        with pytest.raises(ValueError):
            ode.SummaryState(w1=0.0, wp=-1.0, t=0.0)
        with pytest.raises(ValueError):
            ode.integrate(params_for(2.0), t_end=1.0,
                          init=ode.SummaryState(w1=0.1, wp=0.0, t=0.0))
        with pytest.raises(ValueError):
            ode.integrate(params_for(2.0), t_end=0.0)


class TestIntegrate:
    def test_zero_temperature_wp_decreases(self):
        # only the contractive drift acts when the noise term vanishes
        p = params_for(1e-9, B=1)
        traj = ode.integrate(p, t_end=1.0,
                             init=ode.SummaryState(w1=0.1, wp=1.0, t=0.0))
        assert np.all(np.diff(traj.wp) <= 1e-12)

    def test_wp_plateau_matches_k_perp(self):
        p = params_for(2.0)
        k = theory.asymptotic_constants(1.0)
        traj = ode.integrate(p, t_end=1e6)
        assert traj.wp[-1] == pytest.approx(k.k_perp * 2.0 * math.sqrt(128),
                                            rel=0.02)

    def test_plateau_linear_in_T(self):
        plateaus = []
        temps = [0.5, 1.0, 2.0, 4.0, 8.0]
        for T in temps:
            traj = ode.integrate(params_for(T), t_end=200 * T * 128)
            plateaus.append(traj.wp[-1])
        slope = np.polyfit(np.log(temps), np.log(plateaus), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.03)

    @pytest.mark.parametrize("chi", [0.0, 1.0, 2.0])
    def test_w1_exponent(self, chi):
        T, d = 2.0, 128
        traj = ode.integrate(params_for(T, chi=chi), t_end=1e5 * T * d)
        m = (traj.t >= 100 * T * d) & (traj.t <= 1e5 * T * d)
        slope = np.polyfit(np.log(traj.t[m]), np.log(traj.w1[m]), 1)[0]
        assert slope == pytest.approx(1.0 / (3.0 + chi), abs=0.01)

    def test_n_decay_exponent(self):
        T, d = 2.0, 128
        traj = ode.integrate(params_for(T), t_end=1e5 * T * d)
        m = (traj.t >= 100 * T * d) & (traj.t <= 1e5 * T * d)
        slope = np.polyfit(np.log(traj.t[m]), np.log(traj.n[m]), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.02)

    def test_weight_decay_plateau_scaling(self):
        lambdas = [1e-6, 1e-5, 1e-4]
        plateaus = []
        for L in lambdas:
            p = params_for(2.0, weight_decay=L)
            traj = ode.integrate(p, t_end=30.0 / L)
            plateaus.append(traj.w1[-1])
            want = ode.stationary_w1(1.0, 2.0, 128, L)
            assert traj.w1[-1] == pytest.approx(want, rel=0.10)
        slope = np.polyfit(np.log(lambdas), np.log(plateaus), 1)[0]
        assert slope == pytest.approx(-0.25, abs=0.025)

    def test_csv(self, tmp_path):
        traj = ode.integrate(params_for(2.0), t_end=1e4, n_points=20)
        traj.to_csv(tmp_path / "ode.csv")
        lines = (tmp_path / "ode.csv").read_text().splitlines()
        assert lines[0] == "t,w1,wp,lambda,n_theory"
        assert len(lines) == len(traj.t) + 1


class TestAsymptoticSolution:
    def test_lambda_relation_exact(self):
        k = theory.asymptotic_constants(1.0)
        T, d = 2.0, 128
        for t in (T * d, 10 * T * d, 1e4 * T * d):
            s = ode.asymptotic_solution(1.0, T, d, t)
            assert s.w1 / s.wp == pytest.approx(
                (k.k1 / k.k_perp) * (t / (T * d)) ** 0.25, rel=1e-12)

    def test_linear_in_T_at_fixed_reduced_time(self):
        a = ode.asymptotic_solution(1.0, 1.0, 128, 100 * 1.0 * 128)
        b = ode.asymptotic_solution(1.0, 2.0, 128, 100 * 2.0 * 128)
        assert b.w1 == pytest.approx(2 * a.w1, rel=1e-12)
        assert b.wp == pytest.approx(2 * a.wp, rel=1e-12)

    def test_validity_domain(self):
        with pytest.raises(ValueError):
            ode.asymptotic_solution(1.0, 2.0, 128, 1.0)

    def test_matches_integrator_endpoint(self):
        T, d = 2.0, 128
        traj = ode.integrate(params_for(T), t_end=1e6)
        s = ode.asymptotic_solution(1.0, T, d, 1e6)
        assert s.w1 == pytest.approx(traj.w1[-1], rel=0.05)
        assert s.wp == pytest.approx(traj.wp[-1], rel=0.05)


class TestPredictions:
    def test_crossover_scalings(self):
        a = ode.predict_crossover(1.0, 0.125, 128, 4096)
        b = ode.predict_crossover(1.0, 0.125, 128, 8192)
        assert b.t_hat / a.t_hat == pytest.approx(4.0, rel=1e-9)   # P^2
        assert b.w1_hat / a.w1_hat == pytest.approx(math.sqrt(2), rel=1e-9)
        c = ode.predict_crossover(1.0, 0.25, 128, 4096)
        assert c.t_hat == pytest.approx(2 * a.t_hat, rel=1e-9)
        assert c.w1_hat == pytest.approx(2 * a.w1_hat, rel=1e-9)

    def test_crossover_consistency(self):
        pred = ode.predict_crossover(1.0, 2.0, 128, 16384)
        k = theory.asymptotic_constants(1.0)
        # at t_hat the closed-form n equals d/P by construction
        assert k.cn * pred.lam_hat ** -2 == pytest.approx(128 / 16384, rel=1e-9)
        assert pred.w1_of_t(pred.t_hat) == pytest.approx(pred.w1_hat, rel=1e-9)
        assert pred.n_of_t(pred.t_hat) == pytest.approx(128 / 16384, rel=1e-9)

    def test_small_P_warns(self):
        with pytest.warns(UserWarning):
            ode.predict_crossover(1.0, 2.0, 128, 64)

    def test_Bstar_values(self):
        assert ode.predict_Bstar(1.0, 16384) == pytest.approx(128.0)
        assert ode.predict_Bstar(0.0, 10_000) == pytest.approx(10_000.0)

    def test_Tc_proportional(self):
        assert ode.predict_Tc(0.02) == pytest.approx(2 * ode.predict_Tc(0.01))

    def test_lambda_star_scaling(self):
        a = ode.lambda_star(1.0, 2.0, 128, 4096)
        assert ode.lambda_star(1.0, 4.0, 128, 4096) == pytest.approx(a / 2)
        assert ode.lambda_star(1.0, 2.0, 128, 8192) == pytest.approx(a / 4)

    def test_stationary_error_scaling(self):
        # epsilon ~ (T Lambda)^{(chi+1)/(chi+3)} = sqrt(T Lambda) at chi=1
        e = ode.stationary_test_error(1.0, 2.0, 128, 1e-4)
        assert ode.stationary_test_error(1.0, 2.0, 128, 4e-4) == pytest.approx(
            2 * e, rel=1e-9)
        assert ode.stationary_test_error(1.0, 8.0, 128, 1e-4) == pytest.approx(
            2 * e, rel=1e-9)
