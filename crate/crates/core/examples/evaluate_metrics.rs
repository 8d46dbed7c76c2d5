//! Dice, IoU and permutation matching on a four-pixel example, plus an overlay.
//!
//! `cargo run --example evaluate_metrics [overlay.png]`

use liftseg::io::save_rgb_png;
use liftseg::metrics::{connected_components, evaluate, render_overlay, ClassMatching};
use liftseg::synthetic::{piecewise_image, three_region_labels};
use liftseg::LabelMap;
use ndarray::arr2;

fn main() -> liftseg::Result<()> {
    let truth = LabelMap::new(arr2(&[[1, 1], [2, 2]]), 3)?;
    let pred = LabelMap::new(arr2(&[[1, 2], [2, 2]]), 3)?;
    let fixed = evaluate(&pred, &truth, ClassMatching::Fixed)?;
    println!("fixed matching: dice {:.4?} iou {:.4?}", fixed.per_class_dice, fixed.per_class_iou);

    let swapped = LabelMap::new(arr2(&[[2, 2], [1, 1]]), 3)?;
    let best = evaluate(&swapped, &truth, ClassMatching::BestPermutation)?;
    println!("swapped labels, best permutation {:?}: dice {:.4?}", best.permutation, best.per_class_dice);

    let regions = three_region_labels(96);
    let image = piecewise_image(&regions, &[0.0, 0.2, 0.5, 0.8])?;
    for c in connected_components(&regions).iter().take(3) {
        println!("component label {} area {}", c.label, c.area);
    }
    let overlay = render_overlay(&image, &regions)?;
    if let Some(path) = std::env::args().nth(1) {
        save_rgb_png(&overlay, &path)?;
        println!("overlay written to {path}");
    }
    Ok(())
}
