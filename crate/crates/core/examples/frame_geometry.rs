//! The plane through a bundle and a reference ray: orthonormal frame, cone
//! extremes, the bracketing triangle and the indifference flow inside it.

use integrability::geometry::{build_frame, DEFAULT_PROP_TOL};
use integrability::preference::indifference_cross;
use integrability::{Bundle, FieldSpec, OdeSettings};

fn main() -> integrability::Result<()> {
    let x = Bundle::new(vec![1.0, 2.0, 1.0])?;
    let v = Bundle::new(vec![1.0, 1.0, 1.0])?;
    let frame = build_frame(&x, &v, DEFAULT_PROP_TOL)?;
    println!("a1 = {:.6?}", frame.a1);
    println!("a2 = {:.6?}", frame.a2);
    println!("C  = {:.6}", frame.c);
    println!("cone extremes v1 = {:.6?}, v2 = {:.6?}", frame.v1, frame.v2);
    println!("triangle on the ray: y1 = {:.6?}, y2 = {:.6?}", frame.y1.as_slice(), frame.y2.as_slice());

    for field in [FieldSpec::noninteg3(), FieldSpec::cobb_douglas(&[1.0, 2.0, 3.0])?] {
        let r = indifference_cross(&field, &x, &v, &OdeSettings::default())?;
        println!(
            "{}: crosses at t = {:.6} at {:.6?}, distance to [y1, y2] = {:.1e}",
            field.describe(),
            r.t_cross,
            r.endpoint.as_slice(),
            r.residuals.segment_containment
        );
    }
    Ok(())
}
