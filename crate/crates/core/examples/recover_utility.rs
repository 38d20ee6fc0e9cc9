//! Recovers utility from a field, traces an indifference curve and measures
//! the holonomy that separates transitive from intransitive preferences.

use integrability::preference::{holonomy, preference_report, trace_indifference, utility, DEFAULT_BAND};
use integrability::{Bundle, FieldSpec, OdeSettings};

fn main() -> integrability::Result<()> {
    let settings = OdeSettings::default();
    let cd = FieldSpec::cobb_douglas(&[0.5, 0.5])?;
    let one = Bundle::ones(2);
    println!("Cobb-Douglas, reference (1,1): u vs sqrt(x1 x2)");
    for x in [[4.0, 1.0], [0.5, 2.0], [1.3, 0.7]] {
        let u = utility(&cd, &Bundle::new(x.to_vec())?, &one, &settings)?;
        println!("  u({x:?}) = {u:.10}   oracle {:.10}", (x[0] * x[1]).sqrt());
    }

    let curve = trace_indifference(&cd, &Bundle::new(vec![2.0, 0.5])?, &one, &settings, 6)?;
    println!("indifference arc from (2, 0.5) to the ray of (1, 1):");
    for (t, p) in &curve {
        println!("  t = {t:.4}  x = {:.6?}  x1 x2 = {:.8}", p, p[0] * p[1]);
    }

    let id = FieldSpec::identity(2)?;
    let r = preference_report(&id, &Bundle::new(vec![2.0, 1.0])?, &Bundle::new(vec![1.0, 2.0])?, &settings, DEFAULT_BAND)?;
    println!("identity field, (2,1) vs (1,2): {:?} (u = {:.9})", r.verdict, r.u_forward);

    let (x, y, z) = (
        Bundle::new(vec![1.0, 2.0, 1.0])?,
        Bundle::new(vec![1.0, 1.0, 2.0])?,
        Bundle::new(vec![2.0, 1.0, 1.0])?,
    );
    for field in [FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5])?, FieldSpec::noninteg3()] {
        let h = holonomy(&field, &x, &y, &z, &settings)?;
        println!("{}: holonomy around x -> y -> z -> x = {h:.9}", field.describe());
    }
    Ok(())
}
