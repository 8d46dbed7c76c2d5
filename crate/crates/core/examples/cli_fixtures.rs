//! Writes inputs for trying the `liftseg` binary: a montage image, its ground
//! truth, a Gabor spec and pipeline configs.
//!
//! `cargo run --example cli_fixtures [dir]`

use std::path::{Path, PathBuf};

use liftseg::gabor::GaborSpec;
use liftseg::io::{save_gray_png, save_label_png};
use liftseg::synthetic::{three_texture_montage, two_texture_composite};
use liftseg::{Error, SolverConfig};
use serde_json::json;

fn write(path: &Path, value: &serde_json::Value) -> liftseg::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json");
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn main() -> liftseg::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;

    let (montage, truth) = three_texture_montage(192)?;
    save_gray_png(&montage, dir.join("montage.png"))?;
    save_label_png(&truth, dir.join("truth.png"))?;
    let s2 = 2f64.sqrt();
    save_gray_png(&two_texture_composite(64, s2 / 4.0, s2 / 32.0)?, dir.join("composite.png"))?;

    let spec = GaborSpec::three_texture();
    write(&dir.join("gabor.json"), &serde_json::to_value(&spec).expect("json"))?;
    write(
        &dir.join("pipeline-gabor.json"),
        &json!({ "lifting": "gabor", "gabor_spec": spec, "solver": SolverConfig::with_lambda(0.2) }),
    )?;
    write(
        &dir.join("pipeline-cnn.json"),
        &json!({ "lifting": "cnn", "cnn": { "k": 3, "iterations": 300, "seed": 0 }, "solver": { "lambda": 0.2 } }),
    )?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
