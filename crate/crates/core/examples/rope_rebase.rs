//! Rebasing temporal indices after a slide leaves relative logits intact.

use packcache::rope::rebase;
use packcache::{Position3D, RopeConfig};

fn logit(rope: &RopeConfig, q: &[f64], k: &[f64], pq: &Position3D, pk: &Position3D) -> f64 {
    let a = rope.rotate(q, pq).unwrap();
    let b = rope.rotate(k, pk).unwrap();
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

fn main() -> packcache::Result<()> {
    let rope = RopeConfig::for_head_dim(16)?;
    println!(
        "head_dim 16: t/h/w pairs {}/{}/{}, scales {}/{}/{}",
        rope.dims_t, rope.dims_h, rope.dims_w, rope.scale_t, rope.scale_h, rope.scale_w
    );
    let q: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
    let k: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).cos()).collect();

    let positions = [Position3D::new(7, 2, 3, 900), Position3D::new(5, 1, 4, 400)];
    for delta in [0, 1, 3, 5] {
        let moved = rebase(&positions, delta)?;
        println!(
            "delta_t={delta}: q.t={} k.t={} logit={:.12}",
            moved[0].t,
            moved[1].t,
            logit(&rope, &q, &k, &moved[0], &moved[1])
        );
    }
    match rebase(&positions, 6) {
        Err(e) => println!("delta_t=6: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
