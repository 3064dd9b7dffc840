//! Regenerates the bundled synthetic corpus.
//!
//! Usage: `cargo run --example make_synthetic [-- <output dir>]`

use std::path::PathBuf;

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic"));
    if let Err(e) = naboe::synthetic::generate().write_to(&dir) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("wrote synthetic corpus to {}", dir.display());
}
