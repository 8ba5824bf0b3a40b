//! Runs CReST+ on a synthetic long-tailed mixture and prints per-generation
//! test recall.
//!
//! cargo run --release -p crest-core --example longtail_demo -- [seed] [dim] [sep] [steps] [G] [plus|off|<t>]

use crest_core::augment::AugmentPolicy;
use crest_core::crest::{run_crest, CrestConfig};
use crest_core::data::{split_labeled_unlabeled, ClassProfile, SynthParams};
use crest_core::rng::derive_seed;
use crest_core::ssl::AlignmentMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let seed: u64 = arg(1, "1").parse()?;
    let dim: usize = arg(2, "16").parse()?;
    let separation: f64 = arg(3, "4.0").parse()?;
    let steps: usize = arg(4, "2000").parse()?;
    let last: usize = arg(5, "2").parse()?;
    let mode = arg(6, "plus");

    let params = SynthParams {
        num_classes: 10,
        gamma: 100.0,
        n1: 500,
        dim,
        separation,
        noise_sigma: 1.0,
        seed,
    };
    let data = params.generate()?;
    let test = params
        .mixture()?
        .sample(ClassProfile::uniform(10, 100)?.counts(), derive_seed(seed, "test"))?;
    let split = split_labeled_unlabeled(&data, 0.1, seed)?;

    let mut cfg = CrestConfig {
        last_generation: last,
        seed,
        ..CrestConfig::default()
    };
    cfg.ssl.steps = steps;
    cfg.ssl.augment = AugmentPolicy::for_noise(params.noise_sigma);
    cfg.ssl.alignment = match mode.as_str() {
        "plus" => AlignmentMode::Scheduled,
        "off" => AlignmentMode::Off,
        other => AlignmentMode::Constant(other.parse()?),
    };
    let start = std::time::Instant::now();
    let reports = run_crest(&split, &test, &cfg)?;
    for r in &reports {
        let rec: Vec<String> = r.test.recall.iter().map(|v| format!("{:.2}", v)).collect();
        let prec: Vec<String> = r.test.precision.iter().map(|v| format!("{:.2}", v)).collect();
        println!(
            "gen {} t={:.2} |X'|={} sel={:?} mean_recall={:.4}\n  recall {}\n  prec   {}",
            r.generation,
            r.temperature,
            r.labeled_size,
            r.selected_per_class,
            r.test_mean_recall,
            rec.join(" "),
            prec.join(" ")
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
