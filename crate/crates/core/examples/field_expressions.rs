//! Builds fields from builtins and expressions, evaluates them and compares
//! the analytic Jacobian with the finite-difference one.

use integrability::field::{fd_jacobian, Field, FieldSpec};
use integrability::Bundle;

fn main() -> integrability::Result<()> {
    let fields = [
        FieldSpec::cobb_douglas(&[0.3, 0.7])?,
        FieldSpec::ces(&[0.4, 0.6], 0.5)?,
        FieldSpec::noninteg3(),
        FieldSpec::from_exprs(&["x2 + 0.1*x1", "x1 + 0.2*x2^2"])?,
        FieldSpec::from_json(r#"{"n": 3, "kind": "expr", "components": ["exp(-x1) + x2", "1", "sqrt(x3)"]}"#)?,
    ];
    for field in &fields {
        let x = Bundle::new((1..=field.dim()).map(|i| 0.5 + 0.25 * i as f64).collect())?;
        let g = field.eval(&x)?;
        let jac = field.jacobian(&x)?;
        let fd = fd_jacobian(field, &x)?;
        let gap = (&jac.matrix - &fd.matrix).abs().max();
        println!("{:<40} g({:?}) = {:.6?}", field.describe(), x.as_slice(), g);
        println!("{:<40} jacobian {:?}, |J - J_fd|_max = {gap:.2e}", "", jac.mode);
    }

    for bad in [r#"{"n": 2, "kind": "expr", "components": ["x1 +", "1"]}"#, r#"{"n": 2, "kind": "expr", "components": ["x3", "1"]}"#] {
        println!("rejected: {}", FieldSpec::from_json(bad).unwrap_err());
    }
    let negative = FieldSpec::from_exprs(&["x1 - 2", "1"])?;
    println!("rejected: {}", negative.eval(&Bundle::new(vec![1.0, 1.0])?).unwrap_err());
    Ok(())
}
