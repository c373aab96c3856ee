//! Runs the graph-theory checks at a glance: effective resistance under a
//! rank-one Laplacian update, return mass of small attention graphs, and the
//! softmax sensitivity bound.
//!
//!     cargo run --release --example theory_checks -- [seed]

use invfold::rng::CounterRng;
use invfold::theory::{
    effective_resistance, random_pair_fixture, resistance_sweep, return_mass,
    softmax_sensitivity_check, DirectedAttention, WeightedGraph,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);

    let path = WeightedGraph::path(5);
    println!(
        "path of 5 unit edges: R(0, 4) = {:.6}",
        effective_resistance(&path, 0, 4)?
    );
    let sweep = resistance_sweep(200, 12, 1e-9, seed)?;
    println!(
        "resistance sweep: {} graphs, {} pairs, {} violations, max increase {:.2e}, Sherman-Morrison residual {:.2e}",
        sweep.graphs, sweep.pairs_checked, sweep.violations, sweep.max_increase, sweep.max_sherman_morrison_residual
    );

    for (name, att) in [
        ("star(3)", DirectedAttention::star(3)),
        ("two-cycle", DirectedAttention::two_cycle()),
    ] {
        let r = return_mass(&att)?;
        println!(
            "return mass of {name}: per node {:?}, mean {}",
            r.per_node, r.mean
        );
    }

    let mut rng = CounterRng::new(seed);
    let fixtures: Vec<_> = (0..1000).map(|_| random_pair_fixture(&mut rng)).collect();
    let s = softmax_sensitivity_check(&fixtures, 1e-4);
    println!(
        "softmax sensitivity: {} fixtures, {} hard violations, worst margin {:.2e}, fitted second-order constant {:.3}",
        s.fixtures, s.hard_violations, s.worst_margin, s.fitted_second_order
    );
    Ok(())
}
