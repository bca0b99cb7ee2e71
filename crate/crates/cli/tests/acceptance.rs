//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng as _;

use bintrans_core::asmtext::rewrite_instruction;
use bintrans_core::corpus::{write_corpus, SPECIAL_WORDS};
use bintrans_core::embed::{sgns_grad, sgns_loss, train_maie, SgnsExample};
use bintrans_core::evalkit::{bleu_score, bleu_stats, cosine_similarity, function_embedding, pair_accuracy, TfWeighting};
use bintrans_core::pipeline::{run_toy, twin_corpora, vuln_transfer, ToyConfig, ToyRun, TOY_SVM_LAMBDA};
use bintrans_core::rng;
use bintrans_core::toyoracle::{bleu_bruteforce, generate_twin_corpus, plant_rotation, richardson_grad, shared_latent_twins, TwinSpec};
use bintrans_core::vulndetect::{duplicate_minority, oversample, train_linear_svm};
use bintrans_core::xlate::{backtranslation_pairs, denoising_pairs, train_translator, Pairs, Trainer, HIGH, LOW};
use bintrans_core::xmap::{align, precision_at_1, preprocess, procrustes_fit, self_learn};
use bintrans_core::{
    ArchId, BasicBlock, EmbedMode, EmbeddingMatrix, FunctionRecord, Instruction, LabeledSet, OversampleConfig, OversampleMethod,
    SeedDictionary, SelfLearnConfig, ThresholdPolicy, TrainSchedule, TranslationModel,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn normalization() -> Outcome {
    let cases = [
        ("MOV EDX, 11E1H", "MOV EDX, 11E1H"),
        ("MOV ECX, 0FFFFFFFH", "MOV ECX, <CONST>"),
        ("JLE LOC_9BA3B", "JLE LOC_<TAG>"),
        ("CALL CRYPTO_FREE", "CALL CRYPTO_FREE"),
        ("MOV RCX, CS:GLIBC_2_5", "MOV RCX, CS:<ADDR>"),
        ("MOV [RSP+VAR_58], RDX", "MOV [RSP+<VAR>], RDX"),
    ];
    for (input, expected) in cases {
        let instr = Instruction::parse(input, ArchId::X86).map_err(|e| format!("{input}: {e}"))?;
        let got = rewrite_instruction(&instr).0.to_string();
        if got != expected {
            return Err(format!("`{input}` gave `{got}`, expected `{expected}`"));
        }
    }
    Ok("6/6 lines exact".into())
}

fn random_corpus(r: &mut rng::Rng) -> Vec<Vec<String>> {
    let blocks = r.random_range(1..=5);
    (0..blocks)
        .map(|_| (0..r.random_range(1..=30)).map(|_| format!("w{}", r.random_range(0..50))).collect())
        .collect()
}

fn bleu_equivalence() -> Outcome {
    let mut r = rng::seeded(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let cand = random_corpus(&mut r);
        let reference: Vec<Vec<String>> = cand
            .iter()
            .map(|b| {
                // Mutate about a third of the tokens and sometimes change the length.
                let mut v: Vec<String> =
                    b.iter().map(|w| if r.random_bool(0.3) { format!("w{}", r.random_range(0..50)) } else { w.clone() }).collect();
                if r.random_bool(0.3) {
                    v.push(format!("w{}", r.random_range(0..50)));
                }
                v
            })
            .collect();
        for smooth in [false, true] {
            let ours = bleu_stats(&cand, &reference, 4).map_err(|e| e.to_string())?.score(smooth);
            let oracle = bleu_bruteforce(&cand, &reference, 4, smooth);
            worst = worst.max((ours - oracle).abs());
        }
        let id = bleu_score(&cand, &cand, 4).map_err(|e| e.to_string())?;
        if id != 1.0 {
            return Err(format!("identity corpus scored {id}"));
        }
    }
    check(worst <= 1e-9, format!("1000 corpora, max |diff| {worst:.2e}, identity = 1.0"))
}

fn matrix(prefix: &str, n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut r = rng::seeded(seed);
    let words: Vec<String> = SPECIAL_WORDS.iter().map(|s| s.to_string()).chain((0..n).map(|i| format!("{prefix}{i}"))).collect();
    let data = (0..words.len() * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    EmbeddingMatrix::new(words, dim, data, EmbedMode::Word).unwrap()
}

fn xlate_grad_errors(model: &TranslationModel, pairs: &Pairs, src: usize, tgt: usize, seed: u64) -> Vec<f64> {
    let (_, g) = model.batch_loss(pairs, src, tgt, true);
    let g = g.unwrap();
    let mut r = rng::seeded(seed);
    let coords: Vec<usize> = (0..120).map(|_| r.random_range(0..model.params().len())).collect();
    let fd = richardson_grad(|p| model.batch_loss_at(p, pairs, src, tgt, false).0, model.params(), &coords, 1e-3);
    coords.iter().zip(&fd).map(|(&c, &n)| rel_err(g[c], n)).collect()
}

fn gradients() -> Outcome {
    let mut r = rng::seeded(3);
    let (d, n_in, n_out) = (6, 12, 8);
    let mut sgns = Vec::new();
    while sgns.len() < 120 {
        let input: Vec<f64> = (0..n_in * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let output: Vec<f64> = (0..n_out * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let ex = SgnsExample {
            input_rows: (0..r.random_range(1..4)).map(|_| r.random_range(0..n_in)).collect(),
            context: r.random_range(0..n_out),
            negatives: (0..3).map(|_| r.random_range(0..n_out)).collect(),
        };
        let (g_in, g_out) = sgns_grad(&input, &output, d, &ex);
        let c_in = ex.input_rows[0] * d + r.random_range(0..d);
        let c_out = ex.context * d + r.random_range(0..d);
        let fd_in = richardson_grad(|p| sgns_loss(p, &output, d, &ex), &input, &[c_in], 1e-3);
        let fd_out = richardson_grad(|p| sgns_loss(&input, p, d, &ex), &output, &[c_out], 1e-3);
        sgns.push(rel_err(g_in[c_in], fd_in[0]));
        sgns.push(rel_err(g_out[c_out], fd_out[0]));
    }

    let schedule = TrainSchedule { hidden: 4, ..TrainSchedule::default() };
    let model = TranslationModel::new(matrix("X", 7, 5, 10), ArchId::X86, matrix("a", 6, 5, 11), ArchId::Arm, schedule, 12)
        .map_err(|e| e.to_string())?;
    let blocks = vec![vec![4, 5, 6, 7], vec![8, 9, 10], vec![4, 10]];
    let denoise = denoising_pairs(&blocks, 0.5, &mut rng::seeded(4));
    let denoise_err = xlate_grad_errors(&model, &denoise, HIGH, HIGH, 5);
    let mut bt = backtranslation_pairs(&model, &blocks, HIGH).pairs;
    if bt.is_empty() {
        bt.push((vec![4, 6], vec![4, 5, 6]));
    }
    let bt_err = xlate_grad_errors(&model, &bt, LOW, HIGH, 6);

    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let detail = format!(
        "max rel err: sgns {:.1e} ({}), denoise {:.1e} ({}), backtranslate {:.1e} ({})",
        max(&sgns),
        sgns.len(),
        max(&denoise_err),
        denoise_err.len(),
        max(&bt_err),
        bt_err.len()
    );
    check(max(&sgns) <= 1e-5 && max(&denoise_err) <= 1e-5 && max(&bt_err) <= 1e-5, detail)
}

fn procrustes() -> Outcome {
    let (latent, _, _) = shared_latent_twins(500, 50, 0.0, 4);
    let (x, _) = preprocess(&latent).map_err(|row| format!("zero row {row}"))?;
    let (z, q) = plant_rotation(&x, 0.0, 9);
    let w = procrustes_fit(&x, &z, &SeedDictionary::identity(500)).map_err(|e| e.to_string())?;
    let err = (&w - &q).norm();
    check(err <= 1e-4, format!("‖W − Q‖_F = {err:.2e}"))
}

fn mapping_quality() -> Outcome {
    let (xs, zt, gold) = shared_latent_twins(200, 50, 0.01, 5);
    let (xs, _) = preprocess(&xs).map_err(|row| format!("zero row {row}"))?;
    let (zt, _) = preprocess(&zt).map_err(|row| format!("zero row {row}"))?;
    let cfg = SelfLearnConfig::default();
    let out = self_learn(&xs, &zt, &cfg).map_err(|e| e.to_string())?;
    let p1 = precision_at_1(&(&xs * &out.w), &zt, &gold, cfg.csls_k);
    check(p1 >= 0.9, format!("precision@1 = {p1:.3} after {} iterations", out.iterations))
}

fn toy_run() -> &'static Result<ToyRun, String> {
    static RUN: OnceLock<Result<ToyRun, String>> = OnceLock::new();
    RUN.get_or_init(|| run_toy(&ToyConfig::default()).map_err(|e| e.to_string()))
}

fn toy_translation() -> Outcome {
    let run = toy_run().as_ref()?;
    let detail = format!("token accuracy {:.3}, mean function BLEU {:.3}", run.token_accuracy, run.bleu.mean);
    check(run.token_accuracy >= 0.8 && run.bleu.mean >= 0.7, detail)
}

fn on_some_segment(p: &[f64], minority: &[&[f64]]) -> bool {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    minority.iter().any(|a| minority.iter().any(|b| (d(p, a) + d(p, b) - d(a, b)).abs() <= 1e-9))
}

fn oversampling() -> Outcome {
    let mut vectors: Vec<Vec<f64>> = (0..9999).map(|i| vec![(i % 97) as f64, (i % 13) as f64]).collect();
    let mut labels = vec![false; 9999];
    vectors.push(vec![50.0, 50.0]);
    labels.push(true);
    let set = LabeledSet::new(vectors, labels).map_err(|e| e.to_string())?;
    let cfg = OversampleConfig::default();
    let dup = duplicate_minority(&set, cfg.duplicates);
    let mut counts = Vec::new();
    for method in [OversampleMethod::Smote, OversampleMethod::Ros] {
        let out = oversample(&set, &OversampleConfig { method, ..cfg.clone() }).map_err(|e| e.to_string())?;
        counts.push(out.class_counts().0);
    }
    if dup.class_counts().0 != 4 || counts != [20, 20] {
        return Err(format!("minority {} after duplication, {counts:?} after oversampling", dup.class_counts().0));
    }

    // Distinct minority points, so the segment identity is not trivial.
    let mut r = rng::seeded(7);
    let mut vectors: Vec<Vec<f64>> = (0..400).map(|_| vec![r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).collect();
    let mut labels = vec![false; 400];
    for _ in 0..6 {
        vectors.push(vec![r.random_range(10.0..12.0), r.random_range(10.0..12.0)]);
        labels.push(true);
    }
    let set = LabeledSet::new(vectors, labels).map_err(|e| e.to_string())?;
    let out = oversample(&set, &OversampleConfig { ratio: 0.1, duplicates: 0, ..cfg }).map_err(|e| e.to_string())?;
    let minority: Vec<&[f64]> = set.vectors[400..].iter().map(Vec::as_slice).collect();
    let synth = &out.vectors[set.len()..];
    let ok = synth.iter().all(|p| on_some_segment(p, &minority));
    check(ok && !synth.is_empty(), format!("minority 1 → 4 → 20; {} synthetic points on minority segments", synth.len()))
}

fn vuln_transfer_check() -> Outcome {
    let run = toy_run().as_ref()?;
    let cfg = OversampleConfig::default();
    let t = vuln_transfer(run, &cfg, TOY_SVM_LAMBDA, 50, 1).map_err(|e| e.to_string())?;
    let tpr = t.metrics.tpr.unwrap_or(0.0);
    let fpr = t.metrics.fpr.unwrap_or(1.0);
    let detail = format!(
        "TPR {tpr:.3}, FPR {fpr:.4} over {} positives and {} negatives, model unchanged: {}",
        t.metrics.tp + t.metrics.fn_,
        t.metrics.fp + t.metrics.tn,
        t.model_hash_before == t.model_hash_after
    );
    check(tpr == 1.0 && fpr <= 0.001 && t.model_hash_before == t.model_hash_after, detail)
}

fn small_toy(seed: u64) -> ToyConfig {
    let mut cfg = ToyConfig::default().seeded(seed);
    cfg.twin = TwinSpec { blocks: 300, vocab_size: 60, ..cfg.twin };
    cfg.embed.epochs = 10;
    cfg.embed.dim = 16;
    cfg.schedule.iterations = 30;
    cfg.schedule.hidden = 12;
    cfg
}

fn frozen_embeddings() -> Outcome {
    let cfg = small_toy(9);
    let twin = generate_twin_corpus(&cfg.twin).map_err(|e| e.to_string())?;
    let (a, b) = twin_corpora(&twin).map_err(|e| e.to_string())?;
    let maie_a = train_maie(&a, &cfg.embed).map_err(|e| e.to_string())?.embeddings;
    let maie_b = train_maie(&b, &cfg.embed).map_err(|e| e.to_string())?.embeddings;
    let al = align(&maie_b, &maie_a, ArchId::Arm, ArchId::X86, &cfg.map).map_err(|e| e.to_string())?;
    let model = TranslationModel::new(al.target_caie.clone(), ArchId::X86, al.source_caie.clone(), ArchId::Arm, cfg.schedule.clone(), 9)
        .map_err(|e| e.to_string())?;
    let before = model.embedding_hash();
    let params_before = model.params().to_vec();
    let mut trainer = Trainer::new(model, &a, &b).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        trainer.step().map_err(|e| e.to_string())?;
    }
    let model = trainer.finish();
    let after = model.embedding_hash();
    let moved = model.params() != params_before.as_slice();
    let same_tables = model.caie(HIGH) == &al.target_caie && model.caie(LOW) == &al.source_caie;
    check(
        before == after && same_tables && moved,
        format!("CAIE hash {}… unchanged after 100 iterations, translator weights moved: {moved}", &before[..12]),
    )
}

fn stage_artifacts(cfg: &ToyConfig) -> Result<BTreeMap<&'static str, Vec<u8>>, String> {
    let e = |e: bintrans_core::Error| e.to_string();
    let mut out = BTreeMap::new();
    let twin = generate_twin_corpus(&cfg.twin).map_err(e)?;
    let blocks = |fs: &[FunctionRecord]| fs.iter().flat_map(|f| f.blocks.iter().map(BasicBlock::words)).collect::<Vec<_>>();
    out.insert("toygen", format!("{}{}{}", write_corpus(&blocks(&twin.a)), write_corpus(&blocks(&twin.b)), twin.lexicon.to_tsv()).into_bytes());
    let (a, b) = twin_corpora(&twin).map_err(e)?;
    let maie_a = train_maie(&a, &cfg.embed).map_err(e)?.embeddings;
    let maie_b = train_maie(&b, &cfg.embed).map_err(e)?.embeddings;
    let mut bytes = Vec::new();
    maie_a.write_binary(&mut bytes, "#").map_err(e)?;
    maie_b.write_binary(&mut bytes, "#").map_err(e)?;
    out.insert("train-embed", bytes);
    let al = align(&maie_b, &maie_a, ArchId::Arm, ArchId::X86, &cfg.map).map_err(e)?;
    let mut bytes = al.transform.to_text().into_bytes();
    al.source_caie.write_binary(&mut bytes, "#").map_err(e)?;
    out.insert("map", bytes);
    let model = train_translator(&a, &b, &al.target_caie, &al.source_caie, &cfg.schedule, cfg.seed).map_err(e)?;
    let mut bytes = Vec::new();
    model.write(&mut bytes, "#").map_err(e)?;
    out.insert("train-xlate", bytes);
    let translated = twin.b.iter().map(|f| model.translate_function(f, ArchId::X86, 1)).collect::<Result<Vec<_>, _>>().map_err(e)?;
    out.insert("translate", write_corpus(&blocks(&translated)).into_bytes());
    let caie = model.caie(HIGH);
    let x = twin.a.iter().map(|f| function_embedding(f, caie, TfWeighting::Raw).map(|v| v.vector)).collect::<Result<Vec<_>, _>>().map_err(e)?;
    let set = oversample(&LabeledSet::new(x, twin.motif_a.clone()).map_err(e)?, &OversampleConfig::default()).map_err(e)?;
    out.insert("vuln-train", train_linear_svm(&set, TOY_SVM_LAMBDA, 20, cfg.seed).map_err(e)?.model.to_text().into_bytes());
    Ok(out)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let cfg = small_toy(3);
    let first = stage_artifacts(&cfg)?;
    let second = stage_artifacts(&cfg)?;
    let differing: Vec<&str> = first.keys().filter(|k| first[*k] != second[*k]).copied().collect();
    if !differing.is_empty() {
        return Err(format!("stages differ between runs: {differing:?}"));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ini = dir.path().join("small.ini");
    fs::write(&ini, "[toy]\nblocks = 300\nvocab_size = 60\n[embed]\nepochs = 10\ndim = 16\n[xlate]\niterations = 30\nhidden = 12\n")
        .map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_bintrans"))
            .args(["--config", ini.to_str().unwrap(), "e2e-demo", "--out", out.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("e2e-demo failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        trees.push(tree(&out));
    }
    check(
        trees[0] == trees[1] && !trees[0].is_empty(),
        format!("{} library stages and {} CLI artifacts byte-identical", first.len(), trees[0].len()),
    )
}

fn tf_invariance() -> Outcome {
    let mut r = rng::seeded(11);
    let caie = matrix("I", 40, 8, 12);
    let random_function = |r: &mut rng::Rng, name: String| {
        let blocks = (0..r.random_range(1..4))
            .map(|_| BasicBlock::from_words((0..r.random_range(1..12)).map(|_| format!("I{}", r.random_range(0..40)))))
            .collect();
        FunctionRecord { name, arch: ArchId::X86, blocks }
    };
    let mut worst: f64 = 0.0;
    let mut scored = [Vec::new(), Vec::new()];
    for i in 0..1000 {
        let f = random_function(&mut r, format!("f{i}"));
        let g = random_function(&mut r, format!("g{i}"));
        let label = r.random_bool(0.5);
        let mut cos = [0.0; 2];
        for (k, tf) in [TfWeighting::Raw, TfWeighting::LengthNormalized].into_iter().enumerate() {
            let u = function_embedding(&f, &caie, tf).map_err(|e| e.to_string())?.vector;
            let v = function_embedding(&g, &caie, tf).map_err(|e| e.to_string())?.vector;
            cos[k] = cosine_similarity(&u, &v).map_err(|e| e.to_string())?;
            scored[k].push((cos[k], label));
        }
        worst = worst.max((cos[0] - cos[1]).abs());
    }
    let mut same_accuracy = true;
    for policy in [ThresholdPolicy::Best, ThresholdPolicy::Fixed(0.5), ThresholdPolicy::Validation { fraction: 0.3, seed: 2 }] {
        let a = pair_accuracy(&scored[0], policy).map_err(|e| e.to_string())?;
        let b = pair_accuracy(&scored[1], policy).map_err(|e| e.to_string())?;
        same_accuracy &= a.accuracy == b.accuracy;
    }
    check(
        worst <= 1e-12 && same_accuracy,
        format!("1000 pairs, max cosine diff {worst:.1e}, pair accuracy identical: {same_accuracy}"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("normalization exactness", normalization),
        ("BLEU oracle equivalence", bleu_equivalence),
        ("gradient checks", gradients),
        ("Procrustes planted recovery", procrustes),
        ("unsupervised mapping quality", mapping_quality),
        ("end-to-end toy translation", toy_translation),
        ("oversampling arithmetic", oversampling),
        ("toy vulnerability transfer", vuln_transfer_check),
        ("frozen-embedding invariant", frozen_embeddings),
        ("determinism", determinism),
        ("cosine/TF invariances", tf_invariance),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
