//! Writes the synthetic three-class dataset: `make_synthetic OUT_DIR [SEED]`.

use xraycnn_core::synthetic::{write_dataset, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().ok_or("usage: make_synthetic OUT_DIR [SEED]")?;
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);
    let m = write_dataset(&out, &SyntheticSpec::default(), seed)?;
    println!("wrote {} images to {out}", m.entries().len());
    Ok(())
}
