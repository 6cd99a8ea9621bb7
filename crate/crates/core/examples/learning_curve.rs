//! Trains one algorithm on the built-in corridor map and prints its learning
//! curve.
//!
//! ```text
//! cargo run --release -p vascnav --example learning_curve -- ppo 0 2000000
//! ```

use std::sync::Arc;

use vascnav::env::EnvConfig;
use vascnav::grid::corridor_benchmark;
use vascnav::trainers::{train, A2cConfig, AlgoConfig, EvalConfig, PpoConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let algo = args.get(1).map_or("ppo", String::as_str);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2_000_000);
    let cfg = match algo {
        "a2c" => AlgoConfig::A2c(A2cConfig { total_steps: steps, seed, ..A2cConfig::default() }),
        "ppo" => AlgoConfig::Ppo(PpoConfig { total_steps: steps, seed, ..PpoConfig::default() }),
        other => {
            eprintln!("unknown algorithm '{other}'; expected ppo or a2c");
            std::process::exit(1);
        }
    };
    let eval = EvalConfig { stop_at_success: Some(0.95), ..EvalConfig::default() };
    let report = match train(&cfg, Arc::new(corridor_benchmark()), &EnvConfig::desk(), &eval) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    print!("{}", report.curve_csv());
    eprintln!("{:?}", report.phase_times);
}
