import math

import numpy as np
import pytest

from oracles import (accurate_angle_deg, quat_dot_angle_deg, quat_from_euler,
                     quat_to_matrix, random_rotation)
from rotvol.rotations import (DEFAULT_BINS, EulerTriple, OverlapClass, RelPoseParam,
                              angle_to_bin, bin_to_angle, euler_to_matrix,
                              geodesic_error, is_rotation_matrix, matrix_to_euler,
                              overlap_class, relative_from_params, rot_z,
                              rotation_from_json, rotation_to_json, top_k_angles,
                              wrap_angle)


class TestEulerToMatrix:
    def test_identity(self):
        assert np.allclose(euler_to_matrix(EulerTriple(0, 0, 0)), np.eye(3))

    def test_pure_yaw_90(self):
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(euler_to_matrix(EulerTriple(0, 0, 90)), expected, atol=1e-12)

    def test_matches_quaternion_composition(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            a, b, g = rng.uniform(-180, 180, size=3)
            m = euler_to_matrix(EulerTriple(a, b, g))
            oracle = quat_to_matrix(quat_from_euler(a, b, g))
            assert accurate_angle_deg(m, oracle) < 1e-6

    def test_result_is_special_orthogonal(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            m = euler_to_matrix(EulerTriple(*rng.uniform(-180, 180, size=3)))
            assert is_rotation_matrix(m)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            euler_to_matrix(EulerTriple(float("nan"), 0, 0))
        with pytest.raises(ValueError):
            euler_to_matrix(EulerTriple(0, float("inf"), 0))


class TestMatrixToEuler:
    def test_identity(self):
        e = matrix_to_euler(np.eye(3))
        assert (e.alpha, e.beta, e.gamma) == (0, 0, 0)

    def test_pure_yaw(self):
        e = matrix_to_euler(rot_z(90))
        assert abs(e.alpha) < 1e-12 and abs(e.beta) < 1e-12
        assert abs(e.gamma - 90) < 1e-12

    def test_round_trip_1000(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            m = random_rotation(rng)
            m2 = euler_to_matrix(matrix_to_euler(m))
            assert accurate_angle_deg(m, m2) < 1e-6

    def test_gimbal_lock_canonical(self):
        for beta in (90.0, -90.0):
            m = euler_to_matrix(EulerTriple(25.0, beta, 40.0))
            e = matrix_to_euler(m)
            assert e.gamma == 0.0
            assert accurate_angle_deg(euler_to_matrix(e), m) < 1e-6

    def test_angles_in_range(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            e = matrix_to_euler(random_rotation(rng))
            for v in (e.alpha, e.beta, e.gamma):
                assert -180 <= v < 180


class TestRelativeFromParams:
    def test_equal_pitch_zero_yaw_is_identity(self):
        r = relative_from_params(RelPoseParam(10, 10, 0))
        assert accurate_angle_deg(r, np.eye(3)) < 1e-9

    def test_pure_yaw(self):
        r = relative_from_params(RelPoseParam(0, 0, 90))
        assert accurate_angle_deg(r, rot_z(90)) < 1e-12

    def test_matches_quaternion_oracle(self):
        oracle = quat_to_matrix(quat_from_euler(0, 20, 135)) @ quat_to_matrix(
            quat_from_euler(0, -30, 0)).T
        r = relative_from_params(RelPoseParam(-30, 20, 135))
        assert accurate_angle_deg(r, oracle) < 1e-6

    def test_zero_pitch_angle_equals_yaw(self):
        for dg in np.linspace(0, 180, 37):
            r = relative_from_params(RelPoseParam(0, 0, float(dg)))
            assert abs(geodesic_error(r, np.eye(3)) - dg) < 1e-6


class TestGeodesicError:
    def test_zero_on_equal(self):
        rng = np.random.default_rng(14)
        m = random_rotation(rng)
        assert geodesic_error(m, m) < 1e-5

    def test_single_axis_value(self):
        assert abs(geodesic_error(np.eye(3), rot_z(90)) - 90.0) < 1e-9

    def test_matches_quaternion_dot_oracle_1000(self):
        rng = np.random.default_rng(15)
        for _ in range(1000):
            m1, m2 = random_rotation(rng), random_rotation(rng)
            assert abs(geodesic_error(m1, m2) - quat_dot_angle_deg(m1, m2)) < 1e-6

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(16)
        for _ in range(200):
            m1, m2 = random_rotation(rng), random_rotation(rng)
            a = geodesic_error(m1, m2)
            assert 0 <= a <= 180
            assert abs(a - geodesic_error(m2, m1)) < 1e-9

    def test_bi_invariance(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            q, m1, m2 = (random_rotation(rng) for _ in range(3))
            assert abs(geodesic_error(q @ m1, q @ m2) - geodesic_error(m1, m2)) < 1e-6

    def test_trace_clamp_absorbs_drift(self):
        # A slightly denormalized near-identity product must not produce NaN.
        m = rot_z(1e-9)
        assert math.isfinite(geodesic_error(m, np.eye(3)))


class TestBins:
    @pytest.mark.parametrize("angle,expected", [(-180, 0), (0, 180), (179.9, 359)])
    def test_forced_examples(self, angle, expected):
        assert angle_to_bin(angle) == expected

    def test_bin_centers(self):
        assert bin_to_angle(0) == -179.5
        assert bin_to_angle(180) == 0.5
        assert bin_to_angle(359) == 179.5

    def test_index_round_trip(self):
        for i in range(DEFAULT_BINS.n_bins):
            assert angle_to_bin(bin_to_angle(i)) == i

    def test_quantization_at_most_half_degree(self):
        rng = np.random.default_rng(18)
        for a in rng.uniform(-180, 180, size=500):
            back = bin_to_angle(angle_to_bin(float(a)))
            assert abs(back - a) <= 0.5 + 1e-12

    def test_wrap(self):
        assert wrap_angle(180.0) == -180.0
        assert wrap_angle(-180.0) == -180.0
        assert wrap_angle(540.0) == -180.0
        assert abs(wrap_angle(190.0) + 170.0) < 1e-12


class TestOverlapClass:
    @pytest.mark.parametrize("yaw,expected", [
        (30, OverlapClass.LARGE), (45, OverlapClass.LARGE),
        (60, OverlapClass.SMALL), (90, OverlapClass.SMALL),
        (120, OverlapClass.NONE),
    ])
    def test_yaw_boundaries(self, yaw, expected):
        assert overlap_class(rot_z(yaw)) is expected

    def test_invariant_under_transpose(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            m = random_rotation(rng)
            assert overlap_class(m) is overlap_class(m.T)


class TestTopKAngles:
    def test_one_hot(self):
        probs = np.zeros(360)
        probs[180] = 1.0
        assert top_k_angles(probs, 1) == [(0.5, 1.0)]

    def test_uniform_tie_break(self):
        probs = np.full(360, 1.0 / 360)
        top = top_k_angles(probs, 2)
        assert [bin_to_angle(0), bin_to_angle(1)] == [a for a, _ in top]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            probs = rng.dirichlet(np.ones(360))
            k = int(rng.integers(1, 20))
            got = top_k_angles(probs, k)
            order = sorted(range(360), key=lambda i: (-probs[i], i))[:k]
            assert [a for a, _ in got] == [bin_to_angle(i) for i in order]
            probs_sorted = [p for _, p in got]
            assert all(probs_sorted[i] >= probs_sorted[i + 1] for i in range(k - 1))

    def test_k_out_of_range(self):
        probs = np.full(360, 1.0 / 360)
        with pytest.raises(ValueError):
            top_k_angles(probs, 0)
        with pytest.raises(ValueError):
            top_k_angles(probs, 361)


def test_rotation_json_round_trip():
    rng = np.random.default_rng(21)
    m = random_rotation(rng)
    values = rotation_to_json(m)
    assert len(values) == 9 and values[1] == m[0, 1]
    assert np.allclose(rotation_from_json(values), m)
