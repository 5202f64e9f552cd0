//! Prints the 3x3 price table for one preset.
//!
//! `cargo run --release --example price_table -- NIG1 100`

use pide_core::experiment::{price_run, RunConfig};
use pide_core::levy::Preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let preset = Preset::from_name(&args.next().unwrap_or_else(|| "VG0".into()))?;
    let n_x: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let cfg = RunConfig::for_preset(preset);
    let run = price_run(&cfg, n_x)?;
    println!("{} at N_x = {n_x} ({:.1}s)", preset.name(), run.report.total_seconds);
    for row in run.table(&cfg.table_points)? {
        println!("({:>5}, {:>5})  {:.4}", row.x1, row.x2, row.price);
    }
    Ok(())
}
