//! Walks PackCache through fill, pack and slide, printing what each frame kept.

use packcache::packer::{check_invariants, on_frame_complete};
use packcache::{CacheEntry, CachePolicy, FrameCache, KvCache, Position3D, Region};

fn main() -> packcache::Result<()> {
    let (w, n) = (3, 16);
    let mut cache = KvCache::new(w, n, 2, 2)?;
    cache.set_anchors(Vec::new(), Vec::new())?;
    let policy = CachePolicy::pack_cache();

    for idx in 1..=6 {
        let t = cache.temporal_position(idx);
        let entries = (0..n)
            .map(|i| {
                let mut e = CacheEntry::new(vec![0.0; 2], vec![0.0; 2], Position3D::raster(t, i, 4, cache.next_seq() + i as u64), Region::HistoryFrame(idx), i)
                    .with_masked((i * 5 + idx) % 7 == 0);
                e.attn_mass = ((i * 13 + idx * 3) % n) as f64;
                e
            })
            .collect();
        let report = on_frame_complete(&mut cache, FrameCache::new(idx, entries)?, &policy)?;
        check_invariants(&cache, &policy, &report)?;
        let regime = match (report.packed, report.evicted_frames) {
            (false, _) => "fill",
            (true, 0) => "pack",
            _ => "slide",
        };
        let ts: Vec<u32> = cache.frames().iter().map(|f| f.entries.first().map_or(0, |e| e.pos.t)).collect();
        println!(
            "frame {idx}: {regime:<5} kept={:?} masked_out={} budget_out={} rows={} t={ts:?} dropped={}",
            report.kept_per_frame, report.removed_masked, report.removed_by_budget, report.occupancy, cache.dropped_frames()
        );
    }
    println!("\n{}", cache.to_snapshot_text().lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
