//! Runs the synthetic-world experiment for a list of seeds and prints the
//! Recall@1/@10 of every method.
//!
//! Usage: synthetic_sweep [config.json|-] [seeds] [y_data_fraction] [y_vocab_fraction]
//!        synthetic_sweep --print-default

use groundalign::pipeline::{run_experiment, Condition, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.first().is_some_and(|a| a == "--print-default") {
        println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
        return Ok(());
    }
    let config: ExperimentConfig = match args.first().filter(|a| a.as_str() != "-") {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    let seeds: u64 = args.get(1).map_or(Ok(1), |s| s.parse())?;
    let condition = Condition {
        y_data_fraction: args.get(2).map_or(Ok(1.0), |s| s.parse())?,
        y_vocab_fraction: args.get(3).map_or(Ok(1.0), |s| s.parse())?,
    };
    for seed in 0..seeds {
        let start = std::time::Instant::now();
        let r = run_experiment(&config.with_seed(seed), condition)?;
        print!("seed {seed} queries {:>4} ({:>5.1}s)", r.queries, start.elapsed().as_secs_f64());
        for s in &r.scores {
            print!("  {}={:.3}/{:.3}", s.method.name(), s.recall_at_1, s.recall_at_10);
        }
        println!();
    }
    Ok(())
}
