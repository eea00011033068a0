import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from kernelfield import (AVG, DERIV, POINT, CorrelationModel, Observation,
                         ObservationSet, UnsupportedOperatorError, assemble,
                         cholesky, cross_correlation, kernel_value,
                         kernel_vector, read_observations_csv,
                         write_observations_csv)
from kernelfield.cli import demo_observation_set
from kernelfield.obsmodel import support_separation

M52 = CorrelationModel("matern52", 1.0)
M52_WIDE = CorrelationModel("matern52", 3.0)
G2 = CorrelationModel("gauss2", 0.5)
TAPERED = CorrelationModel("gauss2", 0.5, 1.0)


def pt(x, value=0.0, error_var=0.0):
    return Observation(POINT, np.atleast_1d(np.asarray(x, dtype=float)), value, error_var)


def dv(c, value=0.0, z=1.0, error_var=0.0):
    return Observation(DERIV, np.array([float(c)]), value, error_var, direction=np.array([z]))


def av(lo, hi, value=0.0, error_var=0.0):
    return Observation(AVG, np.array([float(lo), float(hi)]), value, error_var)


class TestObservationValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Observation("slope", np.array([0.0]), 1.0)

    def test_negative_error_var(self):
        with pytest.raises(ValueError):
            pt(0.0, error_var=-0.1)

    def test_avg_bounds_order(self):
        with pytest.raises(ValueError):
            av(2.0, 1.0)

    def test_direction_normalized(self):
        o = Observation(DERIV, np.array([0.0, 0.0]), 1.0, direction=np.array([3.0, 4.0]))
        assert np.allclose(o.direction, [0.6, 0.8])

    def test_direction_on_point_rejected(self):
        with pytest.raises(ValueError):
            Observation(POINT, np.array([0.0]), 1.0, direction=np.array([1.0]))

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError):
            Observation(DERIV, np.array([0.0]), 1.0, direction=np.array([0.0]))

    def test_set_rejects_mixed_dimensions(self):
        with pytest.raises(ValueError):
            ObservationSet([pt([0.0]), pt([0.0, 1.0])])

    def test_set_rejects_operators_in_2d_by_default(self):
        o = Observation(DERIV, np.array([0.0, 0.0]), 1.0, direction=np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            ObservationSet([o])
        ObservationSet([o], allow_numeric=True)  # opt-in is fine

    def test_empty_set_needs_dimension(self):
        with pytest.raises(ValueError):
            ObservationSet([])
        assert ObservationSet([], dim=2).m == 0

    def test_mean_image(self):
        assert pt(0.0).mean_image == 1.0
        assert dv(0.0).mean_image == 0.0
        assert av(2.0, 3.5).mean_image == pytest.approx(1.5)


class TestKernelValue:
    def test_point_at_own_location(self):
        assert kernel_value(pt(0.0), [0.0], M52) == 1.0

    def test_derivative_uncorrelated_at_center(self):
        assert kernel_value(dv(-5.0), [-5.0], M52) == 0.0

    def test_derivative_positive_right_of_center(self):
        # sign convention: the derivative observation correlates positively
        # with field values just to the right of its center
        assert kernel_value(dv(-5.0), [-4.9], M52) > 0.0
        assert kernel_value(dv(-5.0), [-5.1], M52) < 0.0

    def test_average_matches_quadrature(self):
        obs = av(5.0, 6.0)
        for x in [-3.0, 4.9, 5.5, 6.0, 9.7]:
            oracle = quad(lambda u: M52.eval(abs(x - u)), 5.0, 6.0,
                          epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            assert kernel_value(obs, [x], M52) == pytest.approx(oracle, abs=1e-10)

    def test_average_quadrature_path_tapered(self):
        obs = av(0.0, 2.0)
        for x in [0.5, 1.1, 2.5, 3.5]:
            oracle = quad(lambda u: TAPERED.eval(abs(x - u)), 0.0, 2.0,
                          points=[p for p in (x - 1.0, x, x + 1.0) if 0 < p < 2],
                          epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            assert kernel_value(obs, [x], TAPERED) == pytest.approx(oracle, abs=1e-10)

    def test_derivative_kernel_second_order_fd_convergence(self):
        obs = dv(0.5)
        x = 1.3
        exact = kernel_value(obs, [x], M52)
        errs = []
        for h in (1e-3, 1e-4):
            fd = (M52.eval(abs(x - (0.5 + h))) - M52.eval(abs(x - (0.5 - h)))) / (2 * h)
            errs.append(abs(exact - fd))
        assert errs[0] < 1e-5
        ratio = errs[0] / errs[1]
        assert 30.0 < ratio < 300.0  # second-order: ~100 per decade of h

    def test_derivative_rejected_for_tapered_model(self):
        with pytest.raises(UnsupportedOperatorError):
            kernel_value(dv(0.0), [0.5], TAPERED)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_value(pt([0.0, 0.0]), [0.0], G2)


def fd_dd_oracle(model, c1, z1, c2, z2, h=1e-4):
    f = lambda s, t: model.eval(abs((c1 + s * z1) - (c2 + t * z2)))
    return (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h)


class TestCrossCorrelation:
    def test_exact_point_self(self):
        a = pt(0.0)
        assert cross_correlation(a, a, M52, 1.0) == 1.0

    def test_point_self_with_error_ratio(self):
        a = pt(0.0, error_var=1.0)
        assert cross_correlation(a, a, M52, 1.0) == 2.0
        assert cross_correlation(a, a, M52, 4.0) == 1.25

    def test_identical_but_distinct_objects_are_offdiagonal(self):
        a, b = pt(0.0, error_var=1.0), pt(0.0, error_var=1.0)
        assert cross_correlation(a, b, M52, 1.0) == 1.0

    def test_derivative_self_value(self):
        a = dv(2.0)
        assert cross_correlation(a, a, M52, 1.0) == pytest.approx(5.0 / 3.0, abs=1e-12)
        # independent oracle: second central difference of the correlation at lag 0
        h = 1e-4
        fd = -(M52.eval(h) - 2.0 * M52.eval(0.0) + M52.eval(h)) / h**2
        assert cross_correlation(a, a, M52, 1.0) == pytest.approx(fd, abs=1e-4)

    def test_derivative_self_wide_range(self):
        a = dv(0.0)
        assert cross_correlation(a, a, M52_WIDE, 1.0) == pytest.approx(5.0 / 27.0, abs=1e-12)

    @pytest.mark.parametrize("model", [M52, G2])
    def test_point_deriv_matches_fd(self, model):
        a, b = pt(0.3), dv(1.1, z=-1.0)
        h = 1e-5
        fd = -1.0 * (model.eval(abs(0.3 - (1.1 + h))) - model.eval(abs(0.3 - (1.1 - h)))) / (2 * h)
        assert cross_correlation(a, b, model, 1.0) == pytest.approx(fd, abs=1e-7)

    @pytest.mark.parametrize("model", [M52, G2])
    def test_deriv_deriv_matches_fd(self, model):
        a, b = dv(0.0), dv(0.7, z=-1.0)
        oracle = fd_dd_oracle(model, 0.0, 1.0, 0.7, -1.0)
        assert cross_correlation(a, b, model, 1.0) == pytest.approx(oracle, abs=1e-6)

    @pytest.mark.parametrize("model", [M52, G2, TAPERED])
    def test_point_avg_matches_quadrature(self, model):
        a, b = pt(0.4), av(1.0, 2.2)
        oracle = quad(lambda u: model.eval(abs(0.4 - u)), 1.0, 2.2,
                      points=[1.4] if model.taper_range else None,
                      epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        assert cross_correlation(a, b, model, 1.0) == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("model", [M52, G2])
    def test_deriv_avg_matches_quadrature_of_fd(self, model):
        a, b = dv(0.9), av(1.5, 3.0)
        h = 1e-5
        oracle = quad(
            lambda v: (model.eval(abs(0.9 + h - v)) - model.eval(abs(0.9 - h - v))) / (2 * h),
            1.5, 3.0, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        assert cross_correlation(a, b, model, 1.0) == pytest.approx(oracle, abs=1e-8)

    @pytest.mark.parametrize("model", [M52, G2, TAPERED])
    def test_avg_avg_matches_double_quadrature(self, model):
        a, b = av(0.0, 1.0), av(0.5, 2.5)
        oracle = dblquad(lambda u, v: model.eval(abs(u - v)), 0.5, 2.5, 0.0, 1.0,
                         epsabs=1e-11)[0]
        assert cross_correlation(a, b, model, 1.0) == pytest.approx(oracle, abs=1e-8)

    def test_avg_self_with_error(self):
        a = av(5.0, 6.0, error_var=0.5)
        base = av(5.0, 6.0)
        assert cross_correlation(a, a, M52, 2.0) == pytest.approx(
            cross_correlation(base, base, M52, 2.0) + 0.25, abs=1e-14)

    def test_symmetry_is_exact(self):
        pairs = [(pt(0.3), dv(1.0)), (pt(0.1), av(2.0, 3.0)), (dv(-1.0), av(0.0, 1.5)),
                 (pt(0.0), pt(2.0)), (dv(0.0), dv(1.0)), (av(0.0, 1.0), av(0.5, 2.0))]
        for a, b in pairs:
            assert cross_correlation(a, b, M52, 1.0) == cross_correlation(b, a, M52, 1.0)

    @given(st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=60, deadline=None)
    def test_symmetry_property(self, seed):
        rng = np.random.default_rng(seed)
        def rand_obs():
            u = rng.random()
            x = float(rng.uniform(-3, 3))
            if u < 0.4:
                return pt(x)
            if u < 0.7:
                return dv(x, z=float(rng.choice([-1.0, 1.0])))
            return av(x, x + float(rng.uniform(0.2, 2.0)))
        a, b = rand_obs(), rand_obs()
        assert cross_correlation(a, b, M52, 1.0) == cross_correlation(b, a, M52, 1.0)

    def test_invalid_sigma2(self):
        with pytest.raises(ValueError):
            cross_correlation(pt(0.0), pt(1.0), M52, 0.0)


class TestSupportSeparation:
    def test_points(self):
        assert support_separation(pt(0.0), pt(3.0)) == 3.0

    def test_point_interval(self):
        assert support_separation(pt(0.0), av(1.0, 2.0)) == 1.0
        assert support_separation(pt(1.5), av(1.0, 2.0)) == 0.0
        assert support_separation(av(1.0, 2.0), pt(4.0)) == 2.0

    def test_intervals(self):
        assert support_separation(av(0.0, 1.0), av(3.0, 4.0)) == 2.0
        assert support_separation(av(0.0, 2.0), av(1.0, 4.0)) == 0.0


class TestAssemble:
    def test_single_exact_point(self):
        s = assemble(ObservationSet([pt(0.0, value=1.0)]), M52, 1.0)
        assert np.array_equal(s.to_dense(), [[1.0]])

    def test_two_distant_points_tapered_identity(self):
        s = assemble(ObservationSet([pt(0.0), pt(5.0)]), TAPERED, 1.0)
        assert np.array_equal(s.to_dense(), np.eye(2))
        assert s.nnz_lower == 2

    def test_demo_weight_reproduction(self):
        s = assemble(demo_observation_set((1, 0, 2)), M52, 1.0)
        alpha = np.linalg.solve(s.to_dense(), np.array([1.0, 0.0, 2.0]))
        assert np.allclose(alpha, [0.9992, -0.00085, 2.23876], atol=1e-3)

    def test_duplicate_exact_points_rejected(self):
        obs = ObservationSet([pt([1.0, 2.0], 1.0), pt([1.0, 2.0], 3.0)])
        with pytest.raises(ValueError, match="duplicate exact point"):
            assemble(obs, G2, 1.0)

    def test_duplicate_with_error_allowed(self):
        obs = ObservationSet([pt([1.0, 2.0], 1.0), pt([1.0, 2.0], 3.0, error_var=0.5)])
        s = assemble(obs, G2, 1.0)
        cholesky(s)  # positive definite thanks to the error ratio

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            assemble(ObservationSet([], dim=1), M52, 1.0)

    def test_matches_dense_brute_force_mixed_tapered(self):
        rng = np.random.default_rng(8)
        obs_list = [pt(x, value=float(rng.normal())) for x in np.arange(0.0, 6.0, 0.45)]
        obs_list.append(av(1.3, 2.1, value=0.5))
        obs_list.append(av(4.0, 4.4, value=0.2))
        obs = ObservationSet(obs_list)
        s = assemble(obs, TAPERED, 1.0)
        m = obs.m
        dense = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1):
                if support_separation(obs[i], obs[j]) >= TAPERED.taper_range:
                    continue
                dense[i, j] = dense[j, i] = cross_correlation(
                    obs[i], obs[i] if i == j else obs[j], TAPERED, 1.0)
        assert np.allclose(s.to_dense(), dense, atol=1e-15)
        # absent entries are mathematically zero
        got = s.to_dense()
        for i in range(m):
            for j in range(m):
                if got[i, j] == 0.0 and i != j:
                    assert support_separation(obs[i], obs[j]) >= TAPERED.taper_range or \
                        cross_correlation(obs[i], obs[j], TAPERED, 1.0) == 0.0

    def test_sparsity_bounded_by_neighborhoods(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 10, (120, 2))
        obs = ObservationSet([pt(p, value=0.0) for p in pts])
        s = assemble(obs, TAPERED, 1.0)
        max_in_ball = max(
            int(np.sum(np.linalg.norm(pts - pts[i], axis=1) < TAPERED.taper_range))
            for i in range(len(pts)))
        assert s.full().nnz <= obs.m * max_in_ball

    def test_positive_definite_for_shipped_configs(self):
        for seed in range(4):
            rng = np.random.default_rng(seed)
            pts = rng.uniform(0, 8, (30, 2)) * 1.0
            obs = ObservationSet([pt(p, value=0.0) for p in pts])
            cholesky(assemble(obs, TAPERED, 1.0))


class TestKernelVector:
    def test_matches_pointwise(self):
        obs = demo_observation_set((1, 0, 2))
        x = [1.7]
        v = kernel_vector(obs, x, M52)
        expect = [kernel_value(o, x, M52) for o in obs]
        assert np.allclose(v, expect, atol=1e-15)

    def test_subset_zeroes_rest(self):
        obs = ObservationSet([pt(0.0), pt(1.0), pt(2.0)])
        v = kernel_vector(obs, [0.0], M52, subset=np.array([0, 2]))
        assert v[1] == 0.0 and v[0] == 1.0


class TestCsv:
    def test_round_trip(self, tmp_path):
        obs = ObservationSet([
            pt(0.5, value=1.25, error_var=0.1),
            dv(-2.0, value=0.3, z=-1.0),
            av(1.0, 2.5, value=4.0),
        ])
        path = tmp_path / "obs.csv"
        write_observations_csv(path, obs)
        back = read_observations_csv(path)
        assert back.m == obs.m
        for a, b in zip(obs, back):
            assert a.kind == b.kind
            assert np.array_equal(a.location, b.location)
            assert a.value == b.value and a.error_var == b.error_var

    def test_round_trip_2d(self, tmp_path):
        obs = ObservationSet([pt([0.5, 1.5], value=2.0), pt([3.0, 0.25], value=-1.0)])
        path = tmp_path / "obs2.csv"
        write_observations_csv(path, obs)
        back = read_observations_csv(path)
        assert back.dim == 2 and np.array_equal(back.rep_points(), obs.rep_points())

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,kind,value,error_var,p1,p2\n0.0,point,1.0,,,\n1.0,point,oops,,,\n")
        from kernelfield import ObservationParseError
        with pytest.raises(ObservationParseError) as exc:
            read_observations_csv(path)
        assert exc.value.line == 3

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("lon,lat,value\n")
        from kernelfield import ObservationParseError
        with pytest.raises(ObservationParseError) as exc:
            read_observations_csv(path)
        assert exc.value.line == 1

    def test_header_only_gives_empty_set(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x1,x2,kind,value,error_var,p1,p2\n")
        obs = read_observations_csv(path)
        assert obs.m == 0 and obs.dim == 2
