//! Unsupervised decomposition of a two-texture image by a small CNN.
//!
//! `cargo run --release --example cnn_decomposition [iterations]`

use liftseg::cnn::{decomposition_loss, init_params, pairwise_cosines, train_decomposition_from, CnnConfig};
use liftseg::synthetic::two_texture_composite;

fn main() -> liftseg::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let s2 = 2f64.sqrt();
    let image = two_texture_composite(64, s2 / 4.0, s2 / 32.0)?;
    let config = CnnConfig {
        iterations,
        ..CnnConfig::default()
    };

    let start = init_params(&config);
    let before = decomposition_loss(&start, &image, &config)?;
    println!("initial loss {:.4} ({:?})", before.total, before);

    let every = (iterations / 10).max(1);
    let trained = train_decomposition_from(&image, &config, start, |it, loss| {
        if it % every == 0 {
            println!("iter {it:>5}  loss {:.4}", loss.total);
        }
    })?;
    let after = decomposition_loss(&trained.params, &image, &config)?;
    println!("final loss {:.4} ({:?})", after.total, after);

    let raw = liftseg::cnn::forward_decompose(&trained.params, &image)?;
    println!("pairwise cosines {:?}", pairwise_cosines(&raw, config.epsilon));
    Ok(())
}
