//! Fixtures shared by the benchmarks.

use ips_core::{fit_distributions, simulate_survey, simulate_test_points, Observation, SimScenario, SparseRadioMap};

/// Sparse map fitted from a survey of the benchmark room.
pub fn sparse_room(scans_per_cell: usize) -> (SimScenario, SparseRadioMap) {
    let sc = SimScenario::benchmark_room(0);
    let samples = simulate_survey(&sc, &sc.area.reference_points, scans_per_cell).expect("survey");
    let sparse = fit_distributions(&samples, &sc.area, 0.2).expect("fit");
    (sc, sparse)
}

pub fn observations(sc: &SimScenario, n: usize) -> Vec<Observation> {
    simulate_test_points(sc, n, false).expect("test points").into_iter().map(|t| t.observation).collect()
}
