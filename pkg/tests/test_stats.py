#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import math
import os
import sys
import unittest

import numpy as np

# Add src directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from analytics import Profile, intensity_at, rho
from ensemble import FunctionalObserver, simulate
from stats import (ConvergenceReport, covariance_check, functional_mean_exact,
                   functional_moments_exact, functional_variance, hydro_scan,
                   ks_distance_to_limit, laplace_check, lln_table, local_equilibrium_scan,
                   poisson_fit, poisson_pmf_truncated, poisson_tv, product_poisson_check,
                   std_check, tv_distance)
from walk_core import averaged_kernel

ACCEPTANCE = os.environ.get("QWALK_ACCEPTANCE") == "1"


def poisson_terms(mean, count):
    return {k: math.exp(-mean) * mean ** k / math.factorial(k) for k in range(count)}


class TestTotalVariation(unittest.TestCase):
    """TV distance on truncated pmfs."""

    def test_identical(self):
        p = {0: 0.2, 1: 0.5, 3: 0.3}
        self.assertAlmostEqual(tv_distance(p, p), 0.0, delta=1e-15)

    def test_disjoint(self):
        self.assertAlmostEqual(tv_distance({0: 1.0}, {1: 0.5, 2: 0.5}), 1.0, delta=1e-15)

    def test_negative_entries_rejected(self):
        with self.assertRaises(ValueError):
            tv_distance({0: 1.1, 1: -0.1}, {0: 1.0})
        with self.assertRaises(ValueError):
            tv_distance({0: 1.0}, {0: 1.0, 1: -0.5})

    def test_p_must_be_normalized(self):
        with self.assertRaises(ValueError):
            tv_distance({0: 0.5}, {0: 1.0})

    def test_shifted_truncated_poisson_matches_direct_sum(self):
        full = poisson_terms(1.0, 31)
        p = {k: v for k, v in full.items() if k <= 20}
        p_total = sum(p.values())
        p = {k: v / p_total for k, v in p.items()}
        q = {k + 1: v for k, v in p.items()}
        q = {k: v * (1.0 - 1e-13) for k, v in q.items()}
        oracle = 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in range(31))
        oracle += 0.5 * (1.0 - sum(q.values()))
        self.assertAlmostEqual(tv_distance(p, q), oracle, delta=1e-12)

    def test_metric_properties_on_random_triples(self):
        gen = np.random.default_rng(314)
        for _ in range(50):
            pmfs = []
            for _ in range(3):
                weights = gen.random(6)
                weights /= weights.sum()
                pmfs.append({k: float(w) for k, w in enumerate(weights)})
            a, b, c = pmfs
            self.assertAlmostEqual(tv_distance(a, b), tv_distance(b, a), delta=1e-12)
            self.assertLessEqual(tv_distance(a, c), tv_distance(a, b) + tv_distance(b, c) + 1e-12)


class TestPoisson(unittest.TestCase):
    """Truncated Poisson laws and fits."""

    def test_truncation_tail(self):
        for mean in (0.3, 2.0, 25.0):
            pmf = poisson_pmf_truncated(mean)
            self.assertGreater(sum(pmf.values()), 1.0 - 1e-11)
            self.assertEqual(min(pmf), 0)

    def test_zero_mean(self):
        self.assertEqual(poisson_pmf_truncated(0.0), {0: 1.0})
        with self.assertRaises(ValueError):
            poisson_pmf_truncated(-1.0)

    def test_all_zero_histogram_vs_zero_mean(self):
        fit = poisson_fit({0: 1000}, 0.0)
        self.assertEqual(fit.tv, 0.0)
        self.assertTrue(fit.passed)

    def test_exact_pmf_as_empirical(self):
        histogram = poisson_pmf_truncated(2.0)
        fit = poisson_fit(histogram, 2.0)
        self.assertLess(fit.tv, 1e-9)
        self.assertTrue(fit.passed)

    def test_empty_histogram_rejected(self):
        with self.assertRaises(ValueError):
            poisson_fit({}, 1.0)

    def test_poisson_tv(self):
        self.assertLess(poisson_tv(1.5, 1.5), 1e-11)
        self.assertGreater(poisson_tv(1.0, 2.0), 0.1)


class TestLawOfLargeNumbers(unittest.TestCase):
    """KS distance between the rescaled walk law and the limit law."""

    def test_point_mass(self):
        self.assertAlmostEqual(ks_distance_to_limit(averaged_kernel(0), 0), 0.5, delta=1e-9)

    def test_decreasing_and_bounded(self):
        values = [ks_distance_to_limit(averaged_kernel(n), n) for n in (20, 200, 2000)]
        self.assertLess(values[1], values[0])
        self.assertLess(values[2], values[1])
        self.assertLessEqual(values[2], 0.03)

    def test_deterministic(self):
        kernel = averaged_kernel(300)
        self.assertEqual(ks_distance_to_limit(kernel, 300), ks_distance_to_limit(kernel, 300))

    def test_lln_table(self):
        rows = lln_table(3)
        self.assertEqual([x for x, _, _ in rows], [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])
        self.assertAlmostEqual(rows[1][1], 3 * 0.375 / 2.0, delta=1e-12)
        self.assertEqual(rows[0][2], 0.0)
        self.assertGreater(rows[1][2], 0.0)


class TestConvergenceReport(unittest.TestCase):
    """Report invariants and serialization."""

    def test_needs_two_points(self):
        with self.assertRaises(ValueError):
            ConvergenceReport.from_values([10], [0.1], "tv")

    def test_lengths_must_match(self):
        with self.assertRaises(ValueError):
            ConvergenceReport(scale_points=[1, 2], metric_values=[0.1], metric_name="tv",
                              monotone_trend=False)

    def test_trend_and_rows(self):
        report = ConvergenceReport.from_values([10, 20, 40], [0.3, 0.35, 0.1], "tv",
                                               stderrs=[0.01, 0.01, 0.01])
        self.assertTrue(report.monotone_trend)
        self.assertFalse(report.strictly_decreasing())
        self.assertEqual(report.to_rows()[1], (20, 0.35, 0.01))
        self.assertEqual(report.to_dict()["scale_points"], [10, 20, 40])
        self.assertEqual(report.verdict()["last"], 0.1)


class TestFunctionalMoments(unittest.TestCase):
    """Exact mean and variance of the empirical functional."""

    def test_zero_profile(self):
        self.assertEqual(functional_moments_exact(Profile.zero(), Profile.triangle(), 10, 10),
                         (0.0, 0.0))

    def test_monte_carlo_matches_exact(self):
        triangle = Profile.triangle()
        n, steps, replicas = 50, 50, 2000
        values = np.array(simulate(triangle, n, steps, replicas, seed=99,
                                   observer=FunctionalObserver(triangle)))
        mean = functional_mean_exact(triangle, triangle, n, steps)
        variance = functional_variance(triangle, triangle, n, steps)
        self.assertLess(abs(values.mean() - mean), 4.0 * math.sqrt(variance / replicas))
        self.assertLess(abs(values.var(ddof=1) - variance),
                        4.0 * variance * math.sqrt(2.0 / (replicas - 1)))

    def test_std_check(self):
        gen = np.random.default_rng(8)
        result = std_check(gen.normal(0.0, 2.0, size=5000), 2.0, sigma=4.0)
        self.assertTrue(result["passed"])
        self.assertFalse(std_check(gen.normal(0.0, 2.0, size=5000), 3.0)["passed"])

    def test_covariance_check(self):
        gen = np.random.default_rng(21)
        a, b = gen.normal(size=2000), gen.normal(size=2000)
        self.assertTrue(covariance_check(a, b, sigma=4.0).passed)
        self.assertFalse(covariance_check(a, a).passed)
        with self.assertRaises(ValueError):
            covariance_check([1.0, 2.0], [1.0])


class TestScans(unittest.TestCase):
    """Local equilibrium and hydrodynamic scans."""

    def setUp(self):
        self.triangle = Profile.triangle()

    def test_local_equilibrium_zero_profile(self):
        report = local_equilibrium_scan(Profile.zero(), 1.0, 0.0, [8, 32], 20, seed=1)
        self.assertEqual(report.metric_values, [0.0, 0.0])

    def test_local_equilibrium_triangle_inequality(self):
        report = local_equilibrium_scan(self.triangle, 1.0, 0.3, [8, 32], 500, seed=3)
        target = rho(self.triangle, 1.0, 0.3)
        for i, n in enumerate(report.scale_points):
            intensity = report.extras["intensity_B"][i]
            self.assertAlmostEqual(intensity, intensity_at(self.triangle, n, n, int(0.3 * n)))
            bound = report.metric_values[i] + poisson_tv(intensity, target)
            self.assertLessEqual(report.extras["tv_to_poisson_B"][i], bound + 1e-9)

    def test_local_equilibrium_is_reproducible(self):
        a = local_equilibrium_scan(self.triangle, 1.0, 0.0, [8, 16], 200, seed=12)
        b = local_equilibrium_scan(self.triangle, 1.0, 0.0, [8, 16], 200, seed=12)
        self.assertEqual(a.metric_values, b.metric_values)

    def test_scan_validation(self):
        with self.assertRaises(ValueError):
            local_equilibrium_scan(self.triangle, 1.0, 0.0, [32], 10, seed=1)
        with self.assertRaises(ValueError):
            hydro_scan(self.triangle, self.triangle, 0.0, [8, 16], 10, seed=1)
        with self.assertRaises(ValueError):
            hydro_scan(self.triangle, self.triangle, 1.0, [16, 8], 10, seed=1)

    def test_hydro_outside_cone(self):
        far = Profile.triangle(2.5, 3.5)
        report = hydro_scan(self.triangle, far, 1.0, [10, 20], 5, seed=4)
        self.assertEqual(report.extras["functional_mean"], [0.0, 0.0])
        self.assertEqual(report.extras["target"], [0.0, 0.0])

    def test_hydro_zero_profile(self):
        report = hydro_scan(Profile.zero(), self.triangle, 1.0, [10, 20], 5, seed=4)
        self.assertEqual(report.metric_values, [0.0, 0.0])

    def test_hydro_limit_and_fluctuations(self):
        replicas = 400
        report = hydro_scan(self.triangle, self.triangle, 1.0, [250, 1000], replicas, seed=2024)
        target = report.extras["target"][-1]
        self.assertLessEqual(report.metric_values[-1], 0.05 * target)
        ratio = report.extras["replica_std"][0] / report.extras["replica_std"][1]
        self.assertGreaterEqual(ratio, 1.6)
        self.assertLessEqual(ratio, 2.6)
        std = report.extras["replica_std"][-1]
        exact = report.extras["exact_std"][-1]
        self.assertLess(abs(std - exact), 4.0 * std / math.sqrt(2.0 * (replicas - 1)))

    def test_product_poisson_small(self):
        result = product_poisson_check(self.triangle, 16, 16, 0, [-2, -1, 0, 1, 2], 3000,
                                       seed=6, threshold=0.05, sigma=4.0)
        self.assertEqual(len(result["probes"]), 5)
        self.assertTrue(result["passed"], msg=str(result))

    def test_laplace_small(self):
        lam = {-2: 0.5, -1: 0.25, 0: 1.0, 1: 0.25, 2: 0.5}
        result = laplace_check(self.triangle, 32, 32, lam, 2000, seed=17, sigma=4.0)
        self.assertTrue(result["passed"], msg=str(result))


@unittest.skipUnless(ACCEPTANCE, "set QWALK_ACCEPTANCE=1 for full-size Monte Carlo runs")
class TestAcceptance(unittest.TestCase):
    """Full-size statistical checks."""

    def setUp(self):
        self.triangle = Profile.triangle()

    def test_product_poisson(self):
        result = product_poisson_check(self.triangle, 64, 64, 0, [-2, -1, 0, 1, 2], 100000,
                                       seed=20240601, threshold=0.01, sigma=3.0)
        self.assertTrue(result["passed"], msg=str(result))

    def test_laplace(self):
        lam = {-2: 0.5, -1: 0.25, 0: 1.0, 1: 0.25, 2: 0.5}
        result = laplace_check(self.triangle, 64, 64, lam, 100000, seed=20240601, sigma=3.0)
        self.assertTrue(result["passed"], msg=str(result))

    def test_local_equilibrium_trend(self):
        for x in (0.0, 0.3):
            report = local_equilibrium_scan(self.triangle, 1.0, x, [32, 128, 512], 100000,
                                            seed=20240601)
            self.assertTrue(report.monotone_trend, msg=str(report.to_dict()))

    def test_hydro_at_scale(self):
        report = hydro_scan(self.triangle, self.triangle, 1.0, [250, 1000], 50, seed=20240601)
        self.assertLessEqual(report.metric_values[-1], 0.05 * report.extras["target"][-1])
        std = report.extras["replica_std"][-1]
        stderr = std / math.sqrt(2.0 * 49)
        self.assertLess(abs(std - report.extras["exact_std"][-1]), 3.0 * stderr)


if __name__ == "__main__":
    unittest.main()
