//! Renders one synthetic onset/apex pair, runs dense flow and strain, and
//! compares the recovered motion against the region that actually moved.

use epir::data::{class_region, render_pair, Texture};
use epir::flow::{extract_flow_feature, farneback_flow, optical_strain, FarnebackParams};
use epir::nn::rng_from_seed;

fn main() -> epir::Result<()> {
    let size = 64;
    let texture = Texture::random(&mut rng_from_seed(3), 24, 6.0, 20.0, 60.0);
    let region = class_region(0, size);
    let (onset, apex) = render_pair(&texture, &region, 2.5, size);

    let params = FarnebackParams::default();
    let (u, v) = farneback_flow(&onset, &apex, &params)?;
    let strain = optical_strain(&u, &v)?;

    let mag = |x: usize, y: usize| u.at(x, y).hypot(v.at(x, y));
    let (cx, cy) = (region.cx.round() as usize, region.cy.round() as usize);
    println!("region {:?} moving along {:?}", (cx, cy), region.dir);
    println!("flow at region centre  ({:+.3}, {:+.3})  |{:.3}|", u.at(cx, cy), v.at(cx, cy), mag(cx, cy));
    println!("flow in a far corner   |{:.3}|", mag(4, size - 5));
    let peak = strain.data.iter().cloned().fold(0.0, f64::max);
    println!("peak strain {peak:.4}");

    let (field, flat) = extract_flow_feature(&onset, &apex, &params, 28)?;
    println!("feature {}x{} x3 channels, constant channels: {flat:?}", field.width, field.height);
    Ok(())
}
