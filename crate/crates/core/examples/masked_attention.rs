//! Attention over a cache with masked rows, and the per-region breakdown.

use ndarray::Array2;
use packcache::attention::{masked_attention, region_stats, FrameBlock};
use packcache::packer::on_frame_complete;
use packcache::{CacheEntry, CachePolicy, FrameCache, KvCache, Position3D, Region, RopeConfig};

fn row(seed: usize, d: usize) -> Vec<f64> {
    (0..d).map(|c| ((seed * 31 + c * 7) as f64 * 0.37).sin()).collect()
}

fn main() -> packcache::Result<()> {
    let (n, d) = (4, 8);
    let rope = RopeConfig::for_head_dim(d)?;
    let mut cache = KvCache::new(2, n, d, d)?;
    let prompt = vec![CacheEntry::new(row(0, d), row(1, d), Position3D::new(0, 0, 0, 0), Region::TextPrompt, 0)];
    let cond = vec![CacheEntry::new(row(2, d), row(3, d), Position3D::new(0, 0, 0, 1), Region::ConditionImage, 0)];
    cache.set_anchors(prompt, cond)?;

    let entries = (0..n)
        .map(|i| {
            CacheEntry::new(row(10 + i, d), row(20 + i, d), Position3D::raster(0, i, 2, 2 + i as u64), Region::HistoryFrame(1), i)
                .with_masked(i % 2 == 1)
        })
        .collect();
    on_frame_complete(&mut cache, FrameCache::new(1, entries)?, &CachePolicy::full())?;

    let t = cache.temporal_position(2);
    let current = FrameBlock {
        frame_index: 2,
        keys: Array2::from_shape_fn((n, d), |(i, c)| row(40 + i, d)[c]),
        values: Array2::from_shape_fn((n, d), |(i, c)| row(50 + i, d)[c]),
        positions: (0..n).map(|i| Position3D::raster(t, i, 2, 6 + i as u64)).collect(),
    };
    let queries = Array2::from_shape_fn((n, d), |(i, c)| row(60 + i, d)[c]);
    let att = masked_attention(queries.view(), &cache, &current, &rope)?;
    println!("cache rows {}, attended keys per query {}", cache.occupancy(), att.attended_keys);
    for (i, w) in att.weights.rows().into_iter().enumerate() {
        let shown: Vec<String> = w.iter().map(|x| format!("{x:.3}")).collect();
        println!("q{i}: [{}]", shown.join(" "));
    }
    let stats = region_stats(&att.weights, &att.layout, 0, 0)?;
    for (region, mean) in &stats.means {
        println!("{region:<8} mean {mean:.4}");
    }
    Ok(())
}
