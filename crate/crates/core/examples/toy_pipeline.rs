//! Runs the synthetic end-to-end pipeline and prints its scores.
//!
//! Usage: `cargo run --release -p bintrans-core --example toy_pipeline [seed]`

use std::time::Instant;

use bintrans_core::linalg::cosine;
use bintrans_core::pipeline::{run_toy, vuln_transfer, ToyConfig, TOY_SVM_LAMBDA};
use bintrans_core::OversampleConfig;

fn main() -> bintrans_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let start = Instant::now();
    let run = run_toy(&ToyConfig::default().seeded(seed))?;

    // Nearest CAIE neighbor of each low-side lexicon word, by cosine.
    let (src, tgt) = (&run.alignment.source_caie, &run.alignment.target_caie);
    let pairs = run.twin.lexicon.pairs();
    let mut hits = 0;
    for (a, b) in pairs {
        let Some(bi) = src.id(b) else { continue };
        let v = src.row(bi as usize);
        let best = (4..tgt.len()).max_by(|&i, &j| cosine(v, tgt.row(i)).total_cmp(&cosine(v, tgt.row(j))));
        hits += usize::from(best.is_some_and(|i| tgt.words()[i] == *a));
    }
    println!("mapping iterations: {}", run.alignment.outcome.iterations);
    println!("mapping p@1:        {:.4}", hits as f64 / pairs.len() as f64);
    println!("final losses:       {:?}", run.model.losses.last());
    println!("token accuracy:     {:.4}", run.token_accuracy);
    println!("mean function BLEU: {:.4}", run.bleu.mean);
    println!("corpus BLEU:        {:.4}", run.bleu.corpus);
    let vt = vuln_transfer(&run, &OversampleConfig::default(), TOY_SVM_LAMBDA, 50, seed)?;
    println!("detector TPR/FPR:   {:?} / {:?}", vt.metrics.tpr, vt.metrics.fpr);
    println!("elapsed:            {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
