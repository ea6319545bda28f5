import tempfile
import unittest
from pathlib import Path

import numpy as np

from abm_eql.config import BdmConfig, SirConfig
from abm_eql.errors import ConfigError
from abm_eql.lattice_abm import (
    AGENT,
    EMPTY,
    INFECTED,
    Lattice,
    ReplicateSet,
    Trace,
    advance_bdm,
    advance_sir,
    init_lattice,
    occupancy_correlation,
    replicate_config,
    run_ensemble,
    run_replicates,
    simulate,
    simulate_bdm,
    simulate_sir,
)


def _checkerboard(size):
    r, c = np.indices((size, size))
    return ((r + c) % 2).astype(np.int8)


class TestLattice(unittest.TestCase):
    def test_init_counts(self):
        """Initial placement uses round(fraction * X^2) distinct sites"""
        self.assertEqual(init_lattice(BdmConfig(pp=0.01, pd=0.005, pm=1.0, size=120)).occupied_count, 720)
        empty = init_lattice(BdmConfig(pp=0.01, pd=0.005, pm=1.0, size=10, init_fraction=0.0))
        self.assertEqual(empty.occupied_count, 0)
        full = init_lattice(BdmConfig(pp=0.01, pd=0.005, pm=1.0, size=10, init_fraction=1.0))
        self.assertEqual(full.occupied_count, 100)

    def test_sir_init_counts(self):
        lattice = init_lattice(SirConfig(pi=0.005, pr=0.0005, pm=1.0, size=40))
        self.assertEqual(lattice.counts.tolist(), [784, 16, 0])
        self.assertEqual(lattice.census().tolist(), [784, 16, 0])

    def test_rejects_malformed_sites(self):
        with self.assertRaises(ConfigError):
            Lattice(np.zeros((3, 4), dtype=np.int8))
        with self.assertRaises(ConfigError):
            Lattice(np.full((3, 3), INFECTED, dtype=np.int8), "bdm")
        with self.assertRaises(ConfigError):
            Lattice(np.zeros((3, 3), dtype=np.int8), "abm")

    def test_occupancy_correlation_identities(self):
        full = Lattice(np.ones((12, 12), dtype=np.int8))
        self.assertEqual(occupancy_correlation(full), 1.0)
        self.assertEqual(occupancy_correlation(Lattice(_checkerboard(10))), 0.0)
        self.assertTrue(np.isnan(occupancy_correlation(Lattice(np.zeros((5, 5), dtype=np.int8)))))

    def test_uniform_placement_is_uncorrelated(self):
        rng = np.random.default_rng(11)
        config = BdmConfig(pp=0.01, pd=0.005, pm=1.0, size=30, init_fraction=0.3)
        values = [occupancy_correlation(init_lattice(config, rng)) for _ in range(500)]
        self.assertAlmostEqual(float(np.mean(values)), 1.0, delta=0.02)

    def test_bdm_census_after_every_event(self):
        config = BdmConfig(pp=0.3, pd=0.2, pm=0.5, size=6, init_fraction=0.3, seed=5)
        rng = np.random.default_rng(config.seed)
        lattice = init_lattice(config, rng)
        t = 0.0
        for _ in range(500):
            t_new, events = advance_bdm(lattice, config, rng, t)
            if events == 0:
                break
            self.assertGreater(t_new, t)
            t = t_new
            self.assertEqual(lattice.counts.tolist(), lattice.census().tolist())
            self.assertEqual(lattice.pair_count, lattice.pair_census())
            n = lattice.occupied_count
            occupied = lattice.slots[:n]
            self.assertTrue(np.all(lattice.flat[occupied] == AGENT))
            self.assertEqual(sorted(occupied.tolist()), np.flatnonzero(lattice.flat).tolist())
            self.assertTrue(np.all(lattice.where[occupied] == np.arange(n)))

    def test_sir_conservation_after_every_event(self):
        config = SirConfig(pi=0.5, pr=0.1, pm=1.0, size=8, init_s_fraction=0.4, init_i_fraction=0.1, seed=2)
        rng = np.random.default_rng(config.seed)
        lattice = init_lattice(config, rng)
        total = lattice.occupied_count
        t = 0.0
        for _ in range(2000):
            t, events = advance_sir(lattice, config, rng, t)
            if events == 0:
                break
            self.assertEqual(lattice.occupied_count, total)
            self.assertEqual(lattice.counts.tolist(), lattice.census().tolist())
            n_i = int(lattice.counts[1])
            sites = lattice.slots[lattice.infected[:n_i]]
            self.assertTrue(np.all(lattice.flat[sites] == INFECTED))
        self.assertEqual(int(np.count_nonzero(lattice.flat != EMPTY)), total)


class TestSimulation(unittest.TestCase):
    def test_no_events_keeps_initial_density(self):
        config = BdmConfig(pp=0.0, pd=0.0, pm=0.0, size=10, init_fraction=0.2, t_end=10.0, n_record=20)
        trace = simulate_bdm(config)
        np.testing.assert_array_equal(trace.density["C"], np.full(20, 0.2))

    def test_saturated_lattice_stays_full(self):
        config = BdmConfig(pp=0.1, pd=0.0, pm=0.0, size=8, init_fraction=1.0, n_record=10)
        trace = simulate_bdm(config)
        np.testing.assert_array_equal(trace.density["C"], np.ones(10))
        np.testing.assert_array_equal(trace.correlation, np.ones(10))

    def test_pure_death_is_monotone(self):
        config = BdmConfig(pp=0.0, pd=0.01, pm=0.0, size=20, init_fraction=0.5, t_end=300.0, seed=9)
        c = simulate_bdm(config).density["C"]
        self.assertEqual(c[0], 0.5)
        self.assertTrue(np.all(np.diff(c) <= 0))

    def test_same_seed_same_trace(self):
        config = BdmConfig(pp=0.1, pd=0.05, pm=1.0, size=20, seed=123)
        a, b = simulate_bdm(config), simulate_bdm(config)
        np.testing.assert_array_equal(a.density["C"], b.density["C"])
        np.testing.assert_array_equal(a.correlation, b.correlation)
        c = simulate_bdm(config.with_seed(124))
        self.assertFalse(np.array_equal(a.density["C"], c.density["C"]))

    def test_sir_without_infection(self):
        config = SirConfig(pi=0.1, pr=0.01, pm=1.0, size=10, init_s_fraction=0.5, init_i_fraction=0.0)
        trace = simulate_sir(config)
        np.testing.assert_array_equal(trace.density["S"], np.ones(config.n_record))
        np.testing.assert_array_equal(trace.density["I"], np.zeros(config.n_record))
        np.testing.assert_array_equal(trace.density["R"], np.zeros(config.n_record))

    def test_sir_fractions_sum_to_one(self):
        config = SirConfig(pi=0.1, pr=0.01, pm=1.0, size=12, seed=4)
        trace = simulate_sir(config)
        total = trace.density["S"] + trace.density["I"] + trace.density["R"]
        np.testing.assert_allclose(total, 1.0, atol=1e-12)
        self.assertTrue(np.all(np.diff(trace.density["R"]) >= 0))

    def test_simulate_rejects_sir_correlation(self):
        with self.assertRaises(ConfigError):
            simulate(SirConfig(pi=0.1, pr=0.01, pm=1.0, size=10), correlation=True)


class TestEnsemble(unittest.TestCase):
    def setUp(self):
        self.config = BdmConfig(pp=0.1, pd=0.05, pm=1.0, size=12, n_record=30)

    def test_single_replicate_ensemble(self):
        mean = run_ensemble(self.config, 1, master_seed=8)
        single = simulate(replicate_config(self.config, 8, 0))
        np.testing.assert_array_equal(mean.density["C"], single.density["C"])
        self.assertEqual(mean.n_replicates, 1)

    def test_order_independent_of_workers(self):
        serial = run_replicates(self.config, 4, master_seed=3, correlation=True, workers=1)
        pooled = run_replicates(self.config, 4, master_seed=3, correlation=True, workers=3)
        np.testing.assert_array_equal(serial.density["C"], pooled.density["C"])
        self.assertEqual(serial.n_replicates, 4)
        self.assertEqual(serial.standard_error("C").shape, (30,))

    def test_mean_of_constant_replicates(self):
        times = np.linspace(0.0, 1.0, 5)
        replicates = ReplicateSet(times, {"C": np.array([np.full(5, 0.2), np.full(5, 0.4)])}, None)
        np.testing.assert_allclose(replicates.mean().density["C"], 0.3)
        self.assertEqual(replicates.mean().n_replicates, 2)

    def test_correlation_mean_skips_empty_replicates(self):
        times = np.linspace(0.0, 1.0, 3)
        corr = np.array([[1.0, np.nan, np.nan], [0.5, 0.7, np.nan]])
        replicates = ReplicateSet(times, {"C": np.array([[0.1, 0.0, 0.0], [0.1, 0.1, 0.0]])}, corr)
        mean = replicates.mean().correlation
        np.testing.assert_allclose(mean[:2], [0.75, 0.7])
        self.assertTrue(np.isnan(mean[2]))

    def test_pure_recovery_decays_exponentially(self):
        config = SirConfig(pi=0.0, pr=0.01, pm=1.0, size=20, init_s_fraction=0.3, init_i_fraction=0.2,
                           t_end=150.0, n_record=40)
        replicates = run_replicates(config, 60, master_seed=11)
        mean = replicates.mean()
        expected = 0.4 * np.exp(-0.01 * replicates.times)
        se = replicates.standard_error("I")
        self.assertTrue(np.all(np.abs(mean.density["I"] - expected) <= 4.5 * se + 1e-12))
        np.testing.assert_allclose(replicates.density["S"], 0.6, rtol=0, atol=1e-12)
        self.assertTrue(np.all(np.ptp(replicates.density["S"], axis=1) == 0.0))

    def test_rejects_zero_replicates(self):
        with self.assertRaises(ConfigError):
            run_replicates(self.config, 0, master_seed=1)


class TestTrace(unittest.TestCase):
    def test_csv_round_trip_keeps_every_digit(self):
        config = BdmConfig(pp=0.1, pd=0.05, pm=1.0, size=12, n_record=25)
        trace = run_ensemble(config, 2, master_seed=6, correlation=True)
        with tempfile.TemporaryDirectory() as tmp:
            path = trace.to_csv(Path(tmp) / "trace.csv")
            header = path.read_text(encoding="utf-8").splitlines()[0]
            self.assertEqual(header, "t,C,F,n_replicates")
            loaded = Trace.from_csv(path)
        np.testing.assert_array_equal(loaded.times, trace.times)
        np.testing.assert_array_equal(loaded.density["C"], trace.density["C"])
        np.testing.assert_array_equal(loaded.correlation, trace.correlation)
        self.assertEqual(loaded.n_replicates, 2)

    def test_from_csv_rejects_bad_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.csv"
            path.write_text("time,C\n0,0.1\n", encoding="utf-8")
            with self.assertRaises(ConfigError):
                Trace.from_csv(path)

    def test_validation(self):
        with self.assertRaises(ConfigError):
            Trace(times=[0.0, 1.0], density={"C": [0.1]})
        with self.assertRaises(ConfigError):
            Trace(times=[1.0, 0.0], density={"C": [0.1, 0.2]})
        trace = Trace(times=[0.0, 1.0, 2.0], density={"C": [0.1, 0.2, 0.3]})
        self.assertTrue(trace.is_uniform())
        self.assertEqual(trace.take([0, 2]).times.tolist(), [0.0, 2.0])
        self.assertFalse(Trace(times=[0.0, 1.0, 3.0], density={"C": [0.1, 0.2, 0.3]}).is_uniform())


if __name__ == '__main__':
    unittest.main()
