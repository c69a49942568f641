//! Binary 8-bit portable graymaps.

use std::path::Path;

use anyhow::{Context, Result};

/// `round(255 v / peak)`, clamped; a zero peak maps everything to black.
pub fn gray(values: &[f64], peak: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| if peak > 0.0 { (255.0 * v / peak).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect()
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, encode(width, height, pixels)).with_context(|| format!("writing {}", path.display()))
}
