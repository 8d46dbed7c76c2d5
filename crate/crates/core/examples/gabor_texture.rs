//! Gabor lifting of a three-texture montage.
//!
//! Prints the mean of every channel inside every texture region, so the
//! channel tuned to a texture should stand out in its own row.
//!
//! `cargo run --release --example gabor_texture [size]`

use liftseg::gabor::{lift_gabor, GaborSpec};
use liftseg::synthetic::three_texture_montage;

fn main() -> liftseg::Result<()> {
    let size = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(192);
    let spec = GaborSpec::three_texture();
    println!("largest kernel side: {} px", spec.max_kernel_side());

    let (image, truth) = three_texture_montage(size)?;
    let features = lift_gabor(&image, &spec)?;

    println!("region   ch1    ch2    ch3");
    for region in 1..=3u8 {
        let mut sums = vec![0.0; features.channels()];
        let mut count = 0usize;
        for ((i, j), &l) in truth.labels().indexed_iter() {
            if l == region {
                count += 1;
                for (k, s) in sums.iter_mut().enumerate() {
                    *s += features.channel(k)[[i, j]];
                }
            }
        }
        let means: Vec<String> = sums.iter().map(|s| format!("{:.3}", s / count as f64)).collect();
        println!("{region:>6}   {}", means.join("  "));
    }
    Ok(())
}
