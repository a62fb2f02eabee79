//! Allocation plans for a few windows, decay factors and quota rules.

use packcache::alloc::{frac, normalized_allocation, DecayParams};
use packcache::{AllocationPlan, PlanSource, QuotaRule};

fn main() -> packcache::Result<()> {
    let b_one = 4084;
    for w in 1..=6 {
        println!("{}", AllocationPlan::build(w, &PlanSource::ClosedForm, &QuotaRule::None, b_one)?);
    }

    println!();
    for rho in [0.25, 0.5, 0.75] {
        let b = normalized_allocation(4, &DecayParams::new(rho)?)?;
        let shown: Vec<String> = b.iter().map(|x| format!("{x:.4}")).collect();
        println!("rho={rho:<5} b=[{}]", shown.join(", "));
    }

    println!();
    for quota in [QuotaRule::None, QuotaRule::three_frame(), QuotaRule::Strict(frac(3, 32)), QuotaRule::strict_frames(3, 8)] {
        let plan = AllocationPlan::build(8, &PlanSource::ClosedForm, &quota, b_one)?;
        println!("quota={quota:<12} {plan}");
    }
    Ok(())
}
