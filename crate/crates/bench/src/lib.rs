//! Fixtures shared by the benchmarks.

use culdiv_core::pipeline::{derive, Derived};
use culdiv_core::simulate::{generate_world, SimulatedPanel, SyntheticWorld};
use culdiv_core::{simulate_panel, SimulationConfig, WorldConfig};

/// A synthetic world of `n` countries over `t` periods with its derived
/// indicators and weights.
pub fn world(n: usize, t: usize) -> (SyntheticWorld, Derived) {
    let cfg = WorldConfig {
        n_countries: n,
        n_periods: t,
        ..Default::default()
    };
    let w = generate_world(&cfg).expect("valid world config");
    let d = derive(&w.registry, &w.hofstede, &w.migrants, &w.panel, cfg.k_neighbors).expect("derivable world");
    (w, d)
}

/// A six-equation simulated panel with the full error structure.
pub fn panel(n: usize, t: usize) -> SimulatedPanel {
    let cfg = SimulationConfig::new(n, t, vec![0.15; 6], vec![0.8; 6], 7);
    simulate_panel(&cfg).expect("valid simulation config")
}
