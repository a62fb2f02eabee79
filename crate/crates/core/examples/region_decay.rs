//! Final-frame attention per history frame against temporal distance, averaged over seeds.

use packcache::sim;
use packcache::{CachePolicy, SimConfig};

fn main() -> packcache::Result<()> {
    for decay in [0.0, 2.0, 4.0, 8.0] {
        let mut sums = Vec::new();
        for seed in 0..10 {
            let trace = sim::run(SimConfig {
                seed,
                decay_injection: decay,
                policy: CachePolicy::full(),
                ..SimConfig::default()
            })?;
            for (d, m) in trace.final_history_by_distance() {
                if sums.len() < d {
                    sums.resize(d, 0.0);
                }
                sums[d - 1] += m / 10.0;
            }
        }
        let shown: Vec<String> = sums.iter().map(|m| format!("{m:.4}")).collect();
        println!("decay_injection={decay}: {}", shown.join(" "));
    }
    Ok(())
}
