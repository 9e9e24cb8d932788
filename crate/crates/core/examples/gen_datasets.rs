//! Regenerates the bundled synthetic tables under `data/`.

use std::path::Path;

use caps_core::synth::{smoke_binary, smoke_multiclass};

fn main() -> caps_core::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    std::fs::create_dir_all(&root)?;
    smoke_binary(20)?.write_csv(&root.join("smoke_binary.csv"), "label")?;
    smoke_multiclass(40)?.write_csv(&root.join("smoke_multiclass.csv"), "label")?;
    Ok(())
}
