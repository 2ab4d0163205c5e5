//! Acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; the process fails if any criterion fails.
//!
//! `cargo test --test acceptance -- <substring>` runs the matching criteria
//! only.

mod cli;
mod extents;
mod fusion_oracle;
mod gradients;
mod identity;
mod membership;
mod metrics_oracle;
mod target_math;

use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 8] = [
    ("extent-strategies", extents::run),
    ("learned-membership", membership::run),
    ("zero-noise-identity", identity::run),
    ("metric-oracle", metrics_oracle::run),
    ("loss-gradients", gradients::run),
    ("fusion-oracle", fusion_oracle::run),
    ("target-math", target_math::run),
    ("cli-reproducibility", cli::run),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {} {name}: {} [{:.1}s]", i + 1, v.detail, t0.elapsed().as_secs_f64());
        if !v.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
