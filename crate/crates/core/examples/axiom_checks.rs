//! Axiom verdicts for a few fields, the Antonelli matrix and the weak weak
//! axiom witness of the identity field.

use integrability::axioms::{
    antonelli, check_a1_a2, check_b, check_ville, check_weak_axiom, check_wwa, check_wwa_seeded, sweep_a1_a2,
    sweep_b, AxiomVerdict,
};
use integrability::sampling::Region;
use integrability::{Bundle, FieldSpec};

fn line(v: &AxiomVerdict) -> String {
    format!("{:?}: {:?} ({} of {})", v.axiom, v.status, v.violations, v.samples_tested)
}

fn main() -> integrability::Result<()> {
    let region = Region::default();
    let fields = [
        FieldSpec::cobb_douglas(&[0.5, 0.5])?,
        FieldSpec::identity(2)?,
        FieldSpec::ces(&[0.5, 0.5], -1.0)?,
        FieldSpec::noninteg3(),
    ];
    for field in &fields {
        println!("{}", field.describe());
        let (a1, a2) = sweep_a1_a2(field, &region, 100, 42)?;
        for v in [
            check_wwa(field, &region, 500, 42)?,
            check_weak_axiom(field, &region, 500, 42)?,
            a1,
            a2,
            sweep_b(field, &region, 100, 42)?,
            check_ville(field, &region, 100, 42)?,
        ] {
            println!("  {}", line(&v));
        }
    }

    let x = Bundle::new(vec![1.0, 1.0, 1.0])?;
    let nonint = FieldSpec::noninteg3();
    let a = antonelli(&nonint, &x)?;
    println!("noninteg3 Antonelli matrix at (1,1,1): {:?}", a.matrix);
    println!("  symmetry residual {:.12}, symmetric part {:?}", a.symmetry_residual, a.classification);
    println!("  B residuals {:?}", check_b(&nonint, &x)?.iter().map(|r| r.residual).collect::<Vec<_>>());
    let t = check_a1_a2(&nonint, &x)?;
    println!("  tangent form eigenvalues {:?}, agrees with Antonelli: {}", t.eigenvalues, t.consistent);

    let id = FieldSpec::identity(2)?;
    let pair = (Bundle::new(vec![2.0, 1.0])?, Bundle::new(vec![1.0, 2.0])?);
    let v = check_wwa_seeded(&id, &region, 0, 42, &[pair])?;
    println!("identity field with the pair (2,1), (1,2): {}", line(&v));
    if let Some(w) = v.witnesses.first() {
        println!("  witness {:?} {:?}", w.points, w.values);
    }
    Ok(())
}
