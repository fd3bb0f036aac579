//! Linear and tangent edits of a small latent.

use latent_deid::geometry::{linear_edit, tangent_angle, tangent_edit, tangent_project, EditDirection, LatentTensor};

fn main() -> latent_deid::Result<()> {
    let z = LatentTensor::from_vec(&[2], vec![2.0, 0.0])?;
    let dh = EditDirection::from_vec(&[2], vec![1.0, 1.0])?;

    let lin = linear_edit(&z, &dh, 0.5)?;
    println!("linear  (λ=0.5): {:?}", lin.to_flat());

    let proj = tangent_project(&z, &dh)?;
    println!("tangent direction: {:?}", proj.to_flat());
    println!("angle θ = {:.6} rad", tangent_angle(&dh));

    let tan = tangent_edit(&z, &dh, true)?;
    println!(
        "tangent edit: {:?} (norm {:.6}, source norm {:.6})",
        tan.to_flat(),
        tan.norm(),
        z.norm()
    );

    let raw = tangent_edit(&z, &dh, false)?;
    println!("without renormalization: {:?} (norm {:.6})", raw.to_flat(), raw.norm());
    Ok(())
}
