//! Simulate a one-way data set, write it with its sidecar header, and read
//! it back.

use varspike::covmodel::simulate;
use varspike::harness::io::{read_data, write_data};
use varspike::numerics::Seed;
use varspike::{DesignKind, DesignSpec, ModelSpec};

fn main() -> varspike::Result<()> {
    let design = DesignSpec::build(DesignKind::Oneway { i: 100, j: 2 })?;
    let model = ModelSpec::from_json(
        r#"{"p": 50, "components": [
            {"sigma2": 0.0, "spikes": [{"theta": 8.0, "v": "e1"}]},
            {"sigma2": 1.0}
        ]}"#,
    )?;
    model.check_design(&design)?;
    let y = simulate(&design, &model, Seed(7))?;
    let dir = std::env::temp_dir().join("varspike-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("data.bin");
    write_data(&path, &y, &design.kind.hash_hex())?;
    let (back, header) = read_data(&path)?;
    println!("wrote {} ({} x {}), design hash {}", path.display(), header.n, header.p, &header.design_hash[..12]);
    assert_eq!(back.as_slice(), y.as_slice());
    Ok(())
}
