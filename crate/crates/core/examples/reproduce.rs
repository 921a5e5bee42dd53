//! Rerun one cell of a registered simulation table with a small number of
//! replicates and print the comparison.

fn main() -> varspike::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let report = varspike::reproduce_table("d1-rank1-mu6", reps, 1)?;
    print!("{}", report.summary());
    Ok(())
}
