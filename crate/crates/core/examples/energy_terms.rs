//! The pieces of the segmentation energy on tiny hand-sized inputs.

use liftseg::energy::{data_term, discrete_gradient, divergence, energy, optimal_constants, total_variation};
use liftseg::solver::{project_admissible_pixel, project_dual_pixel};
use liftseg::{FeatureStack, SoftLabelField};
use ndarray::{arr3, Array2};

fn main() -> liftseg::Result<()> {
    let mut dot = Array2::zeros((5, 5));
    dot[[2, 2]] = 1.0;
    println!("TV of a single interior pixel: {:.6} (2 + sqrt 2 = {:.6})", total_variation(dot.view()), 2.0 + 2f64.sqrt());

    let (gx, gy) = discrete_gradient(dot.view());
    let div = divergence(gx.view(), gy.view())?;
    let lhs: f64 = gx.iter().zip(&gx).chain(gy.iter().zip(&gy)).map(|(a, b)| a * b).sum();
    let rhs: f64 = -dot.iter().zip(&div).map(|(a, b)| a * b).sum::<f64>();
    println!("<grad u, grad u> = {lhs}, -<u, div grad u> = {rhs}");

    let phi = FeatureStack::new(arr3(&[[[1.0, 0.0], [0.0, 0.0]]]))?;
    let u = SoftLabelField::new(arr3(&[[[1.0, 0.0], [0.0, 0.0]]]))?;
    let c = optimal_constants(&u, &phi)?;
    println!("optimal constants a={:?} b={:?}, data term {}", c.a, c.b, data_term(&u, &c, &phi)?);
    println!("energy at lambda 0.2: {:?}", energy(&u, &phi, 0.2)?);

    for v in [[0.2, 0.3], [-0.5, 0.3], [0.9, 0.8]] {
        println!("project {v:?} -> {:?}", project_admissible_pixel(&v));
    }
    println!("dual ball: (3, 4) at radius 1 -> {:?}", project_dual_pixel([3.0, 4.0], 1.0));
    Ok(())
}
