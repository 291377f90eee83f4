//! Fixtures shared by the benchmarks.

use twinloc::scenario::{build_scenario, generate_cube_scenario, CubeNoise, Scenario};

/// The eight-agent cube, optionally with 10° direction noise at 5 Hz.
pub fn cube(noisy: bool) -> Scenario {
    let noise = noisy.then(|| CubeNoise {
        theta0: 10f64.to_radians(),
        freq: 5.0,
    });
    build_scenario(generate_cube_scenario(5.0, 1, noise)).expect("cube scenario is valid")
}
