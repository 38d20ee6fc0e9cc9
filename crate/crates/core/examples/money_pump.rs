//! A money pump for a non-integrable three-good field: an intransitive triple,
//! the closed curve along which every move looks like an improvement, and the
//! check of that curve from its samples.

use integrability::cheat::demonstrate_cheat;
use integrability::sampling::Region;
use integrability::{FieldSpec, OdeSettings};

fn main() -> integrability::Result<()> {
    let field = FieldSpec::noninteg3();
    let Some(report) = demonstrate_cheat(&field, &Region::default(), 42, &OdeSettings::default())? else {
        println!("no intransitive triple found");
        return Ok(());
    };
    let (x, y, z) = &report.triple;
    println!("x = {:.6?}\ny = {:.6?}\nz = {:.6?}", x.as_slice(), y.as_slice(), z.as_slice());
    println!("leg values {:.6?}, shrink factor a = {:.6}", report.leg_values, report.shrink_factor);
    for row in &report.narrative {
        println!(
            "  {:<8} t in [{:.3}, {:.3}]  {:.5?} -> {:.5?}",
            row.leg, row.t_start, row.t_end, row.start, row.end
        );
    }
    let check = report.check();
    println!(
        "min g(x).x' = {:.4e} over {} samples, closure gap {:.1e}, ends at {:.6} of the start: ok = {}",
        check.min_directional,
        report.curve.samples.len(),
        report.curve.closure_gap,
        check.final_ray_multiple,
        check.ok
    );

    let cd = FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5])?;
    let none = demonstrate_cheat(&cd, &Region::default(), 42, &OdeSettings::default())?;
    println!("Cobb-Douglas: money pump found = {}", none.is_some());
    Ok(())
}
