//! Regenerates the checked-in fixture set.
//!
//! `cargo run -p zvp-core --example make_fixtures [DIR]`

use std::path::PathBuf;

fn main() -> zvp::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    std::fs::create_dir_all(&dir)?;
    zvp::fixtures::write_fixture_set(&dir)?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
