//! Runs a small simulation study and prints the summary tables.
//!
//! `cargo run --release -p fetree --example study -- 4 1 10`

use fetree::simlab::{run_study, write_summary, SimSpec, StudyModel};

fn main() -> fetree::Result<()> {
    let args: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (scenario, setting, reps) = match args[..] {
        [a, b, c, ..] => (a, b, c as usize),
        _ => (4, 1, 5),
    };
    let spec = SimSpec::new(scenario, setting)?;
    let start = std::time::Instant::now();
    let out = run_study(&[spec], &StudyModel::ALL, reps, 2024, None)?;
    for f in &out.failures {
        eprintln!("rep {} {}: {}", f.rep, f.model, f.message);
    }
    write_summary(&out.rows, std::io::stdout())?;
    eprintln!("{reps} replications in {:.1?}", start.elapsed());
    Ok(())
}
