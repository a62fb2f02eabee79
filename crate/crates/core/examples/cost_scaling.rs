//! Analytic attended-key ratios, Full over PackCache, as the clip grows.

use packcache::cost::{latent_frames_for_video, CostParams, SpeedupProxy};
use packcache::CachePolicy;

fn main() -> packcache::Result<()> {
    println!("video latent   total    last");
    for video in [8, 24, 48, 96, 192] {
        let t = latent_frames_for_video(video);
        let s = SpeedupProxy::compute(&CostParams::new(t, 4084, 4, 4333), &CachePolicy::pack_cache())?;
        println!("{video:>5} {t:>6} {:>7.3} {:>7.3}", s.total_f64(), s.last_f64());
    }
    Ok(())
}
