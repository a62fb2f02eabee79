//! One seeded workload under each policy; attended keys and occupancy per frame.

use packcache::sim;
use packcache::{CachePolicy, SimConfig};

fn main() -> packcache::Result<()> {
    let base = SimConfig {
        num_latent_frames: 10,
        tokens_per_frame: 32,
        seed: 7,
        ..SimConfig::default()
    };
    for policy in [CachePolicy::full(), CachePolicy::sliding_window(), CachePolicy::pack_cache()] {
        let trace = sim::run(SimConfig {
            policy,
            ..base.clone()
        })?;
        println!("{:<10} total attended {:>6}", trace.policy, trace.total_attended_keys());
        let mut out = Vec::new();
        trace.write_csv(&mut out)?;
        print!("{}", String::from_utf8_lossy(&out));
        println!();
    }
    Ok(())
}
