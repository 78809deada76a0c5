//! Thin-plate-spline mesh warp of one chip: solve the spline for a set of
//! control-point offsets, apply it, and check the result against the dense
//! operator and the identity warp.
//!
//!     cargo run --release --example tps_warp -- [out_dir]

use rand::Rng;
use sraw::attack::project_offsets;
use sraw::data::{generate_synthetic_dataset, save_pgm};
use sraw::harness::difference_image;
use sraw::rng::stream;
use sraw::tps::assemble_system;
use sraw::warp::{build_mesh, OffsetField, Warper};

fn main() -> sraw::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sraw-example-warp".into()));
    let chip = generate_synthetic_dataset(8, 1, 64, 3)?.remove(4);
    let mesh = build_mesh(64, 64, 8, 8, &chip.mask, 0.05)?;
    println!("{} control points, {} on the target", mesh.num_points(), mesh.foreground_count());

    // Random offsets, then clipped to 0.5 px on the target and 3 px elsewhere.
    let mut rng = stream(11, 0);
    let raw = (0..mesh.num_points()).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
    let xi = project_offsets(&OffsetField::new(&mesh, raw)?, &mesh, 0.5, 3.0)?;

    let tar = mesh.source().displaced(&xi.offsets)?;
    let spline = assemble_system(mesh.source())?.solve_coefficients(&tar)?;
    let err = mesh
        .source()
        .points()
        .iter()
        .zip(tar.points())
        .map(|(p, q)| {
            let g = spline.eval(*p);
            (g.u - q.u).abs().max((g.v - q.v).abs())
        })
        .fold(0.0, f64::max);
    println!("spline hits every target point to {err:.1e} px");

    let warper = Warper::new(mesh)?;
    let field = warper.field(&xi)?;
    let solved = spline.eval_field(64, 64)?;
    let gap = field.map_u.iter().zip(&solved.map_u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("cached operator vs direct evaluation: {gap:.1e} px");

    let warped = warper.warp(&chip.image, &xi)?;
    let same = warper.warp(&chip.image, &OffsetField::zeros(warper.mesh()))?;
    println!("identity warp changes the chip by {:.1e}", chip.image.data().iter().zip(same.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

    std::fs::create_dir_all(&out).map_err(|e| sraw::Error::Io { path: out.clone(), source: e })?;
    save_pgm(&chip.image, out.join("clean.pgm"), 16)?;
    save_pgm(&warped, out.join("warped.pgm"), 16)?;
    save_pgm(&difference_image(&chip.image, &warped, 5.0)?, out.join("difference.pgm"), 8)?;
    println!("images written to {}", out.display());
    Ok(())
}
