//! Regenerate the bundled sample dataset and power curves under `data/`.
//!
//! cargo run -p windcast-cli --example sample_data -- <repo root>

use std::path::PathBuf;

use windcast::field::FieldFormat;
use windcast::power::PowerCurve;
use windcast_cli::sample::synthetic_wind;

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let sample = root.join("data/sample");
    let curves = root.join("data/curves");
    std::fs::create_dir_all(&sample)?;
    std::fs::create_dir_all(&curves)?;
    let field = synthetic_wind(6, 1200, 2024)?;
    field.write(sample.join("speeds.csv"), FieldFormat::Csv)?;
    field.locations().write_csv(sample.join("locations.csv"))?;
    PowerCurve::nordex_like().write(curves.join("nordex-like.csv"))?;
    PowerCurve::ge_like().write(curves.join("ge-like.csv"))?;
    Ok(())
}
