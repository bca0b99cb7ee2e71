//! Subcommand implementations. Each returns the text it reports on stdout.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bintrans_core::asmtext::parse_listing;
use bintrans_core::corpus::{corpus_stats, format_stats_table};
use bintrans_core::embed::{fmt_sig6, train_maie};
use bintrans_core::evalkit::{
    bleu_report, cosine_similarity, format_accuracy_table, function_embedding, pair_accuracy, read_pairs, write_pairs,
    TfWeighting,
};
use bintrans_core::pipeline::token_accuracy;
use bintrans_core::toyoracle::{generate_twin_corpus, Lexicon};
use bintrans_core::vulndetect::{evaluate_detection, format_metrics_table, oversample, train_linear_svm};
use bintrans_core::xlate::train_translator;
use bintrans_core::xmap::align;
use bintrans_core::{
    ArchId, EmbedMode, EmbeddingMatrix, FunctionRecord, LabeledSet, LinearModel, MonoCorpus, OptLevel, SimilarityPair,
    ThresholdPolicy, TranslationModel, TranslationRequest, Vocab,
};

use crate::artifacts::{
    format_labels, load_blocks, load_functions, read_bytes, read_labels, read_text, read_text_checked, require,
    save_functions, corpus_path, write_bytes, write_text, Provenance, Store,
};
use crate::config::{Ini, Settings};
use crate::{
    BleuArgs, Cli, CliError, Command, DemoArgs, FuncsimArgs, MapArgs, NormalizeArgs, StatsArgs, StoreArgs,
    ToygenArgs, TrainEmbedArgs, TrainXlateArgs, TranslateArgs, VulnScanArgs, VulnTrainArgs,
};

/// Resolves settings (defaults, config file, `--set`, then command flags)
/// and runs the command.
pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut ini = match &cli.config {
        Some(p) => Ini::parse(&read_text(p)?)?,
        None => Ini::default(),
    };
    for a in &cli.set {
        ini.push_assignment(a)?;
    }
    ini.extend(flag_overrides(&cli.command)?);
    let base = match cli.command {
        Command::Toygen(_) | Command::E2eDemo(_) => Settings::toy(),
        _ => Settings::standard(),
    };
    let s = base.resolve(&ini, cli.seed)?;
    let report = match &cli.command {
        Command::Normalize(a) => normalize(a, &s)?,
        Command::Stats(a) => stats(a, &s)?,
        Command::TrainEmbed(a) => train_embed(a, &s)?,
        Command::Map(a) => map(a, &s)?,
        Command::TrainXlate(a) => train_xlate(a, &s)?,
        Command::Translate(a) => translate(a, &s)?,
        Command::Bleu(a) => bleu(a, &s)?,
        Command::Funcsim(a) => funcsim(a, &s)?,
        Command::VulnTrain(a) => vuln_train(a, &s)?,
        Command::VulnScan(a) => vuln_scan(a, &s)?,
        Command::Toygen(a) => toygen(a, &s)?,
        Command::E2eDemo(a) => e2e_demo(a, &s)?,
    };
    print!("{report}");
    Ok(())
}

fn flag_overrides(cmd: &Command) -> Result<Ini, CliError> {
    let mut ini = Ini::default();
    let mut put = |section: &str, key: &str, v: Option<String>| {
        if let Some(v) = v {
            ini.push(section, key, v);
        }
    };
    let s = |v: Option<usize>| v.map(|x| x.to_string());
    let f = |v: Option<f64>| v.map(|x| x.to_string());
    match cmd {
        Command::TrainEmbed(a) => {
            let mode = a.mode.as_deref().map(str::parse::<EmbedMode>).transpose()?;
            put("embed", "mode", mode.map(|m| m.to_string()));
            put("embed", "dim", s(a.dim));
            put("embed", "epochs", s(a.epochs));
            put("embed", "window", s(a.window));
            put("embed", "negatives", s(a.negatives));
            put("embed", "lr", f(a.lr));
            put("embed", "min_count", a.min_count.map(|x| x.to_string()));
        }
        Command::Map(a) => {
            put("map", "csls_k", s(a.csls_k));
            put("map", "keep_prob", f(a.keep_prob));
            put("map", "max_iter", s(a.max_iter));
        }
        Command::TrainXlate(a) => {
            put("xlate", "iterations", s(a.iterations));
            put("xlate", "batch_size", s(a.batch_size));
            put("xlate", "lr", f(a.lr));
            put("xlate", "hidden", s(a.hidden));
        }
        Command::Translate(a) => put("xlate", "beam", s(a.beam)),
        Command::Funcsim(a) => {
            put("funcsim", "tf", a.tf.clone());
            put("funcsim", "threshold", a.threshold.clone());
        }
        Command::VulnTrain(a) => {
            put("vuln", "method", a.method.clone());
            put("vuln", "k_neighbors", s(a.k_neighbors));
            put("vuln", "ratio", f(a.ratio));
            put("vuln", "lambda", f(a.lambda));
        }
        Command::Toygen(a) => {
            put("toy", "vocab_size", s(a.vocab_size));
            put("toy", "blocks", s(a.blocks));
            put("toy", "swap_p", f(a.swap_p));
        }
        _ => {}
    }
    Ok(ini)
}

/// Writes `report` to `out` (with a header) when given, and returns it.
fn emit(report: String, out: Option<&Path>, prov: &Provenance) -> Result<String, CliError> {
    if let Some(p) = out {
        write_text(p, prov, &report)?;
    }
    Ok(report)
}

fn binary<F>(write: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> bintrans_core::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn with_header(prov: &Provenance, body: &str) -> Vec<u8> {
    format!("{}\n{body}", prov.header()).into_bytes()
}

pub fn normalize(a: &NormalizeArgs, s: &Settings) -> Result<String, CliError> {
    let functions = parse_listing(&read_text(&a.input)?, a.arch)?;
    let prov = Provenance::new(s.seed, &("normalize", a.arch));
    save_functions(&a.out, a.arch, &functions, &prov)?;
    let st = corpus_stats(&functions);
    Ok(format!(
        "normalized {} functions, {} blocks, {} instructions into {}\n",
        st.function_count,
        functions.iter().map(|f| f.blocks.len()).sum::<usize>(),
        st.total_instruction_count,
        a.out.display()
    ))
}

pub fn stats(a: &StatsArgs, s: &Settings) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for spec in &a.corpora {
        let (level, dir) = match spec.split_once('=') {
            Some((l, d)) => (l.parse::<OptLevel>()?, PathBuf::from(d)),
            None => (OptLevel::O0, PathBuf::from(spec)),
        };
        require(&dir)?;
        for arch in [ArchId::X86, ArchId::Arm] {
            if corpus_path(&dir, arch).exists() {
                rows.push((level, arch, corpus_stats(&load_functions(&dir, arch)?)));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("no corpus files found".into()));
    }
    let prov = Provenance::new(s.seed, &"stats");
    emit(format_stats_table(&rows), a.out.as_deref(), &prov)
}

pub fn train_embed(a: &TrainEmbedArgs, s: &Settings) -> Result<String, CliError> {
    let blocks = load_blocks(&a.corpus_dir, a.arch)?;
    let corpus = MonoCorpus::from_word_blocks(a.arch, OptLevel::O0, &blocks, s.embed.min_count)?;
    let trained = train_maie(&corpus, &s.embed.train)?;
    let prov = Provenance::new(s.embed.train.seed, &("train-embed", a.arch, &s.embed));
    let e = &trained.embeddings;
    write_bytes(&a.out, &binary(|b| e.write_binary(b, &prov.header()))?)?;
    if let Some(t) = &a.text {
        write_text(t, &prov, &e.to_text())?;
    }
    let mut out = format!("{} embeddings: {} words, dim {}, mode {}\n", a.arch, e.len(), e.dim(), e.mode);
    for (i, l) in trained.epoch_losses.iter().enumerate() {
        let _ = writeln!(out, "epoch {}\tloss {}", i + 1, fmt_sig6(*l));
    }
    Ok(out)
}

fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix, CliError> {
    Ok(EmbeddingMatrix::read_binary(bytes)?)
}

pub fn map(a: &MapArgs, s: &Settings) -> Result<String, CliError> {
    let source = read_embeddings(&read_bytes(&a.source)?)?;
    let target = read_embeddings(&read_bytes(&a.target)?)?;
    let st = &a.store;
    let mut store = Store::open(&st.store, st.high, st.low, st.opt, true)?;
    let al = align(&source, &target, st.low, st.high, &s.map)?;
    let prov = Provenance::new(s.map.seed, &("map", st.high, st.low, st.opt, &s.map));
    store.write(&Store::caie_name(st.high), &binary(|b| al.target_caie.write_binary(b, &prov.header()))?, &prov)?;
    store.write(&Store::caie_name(st.low), &binary(|b| al.source_caie.write_binary(b, &prov.header()))?, &prov)?;
    store.write("transform.txt", &with_header(&prov, &al.transform.to_text()), &prov)?;
    let mut history = String::from("iteration\tobjective\n");
    for (i, v) in al.outcome.history.iter().enumerate() {
        let _ = writeln!(history, "{}\t{}", i + 1, fmt_sig6(*v));
    }
    store.write("map_history.tsv", &with_header(&prov, &history), &prov)?;
    Ok(format!(
        "mapped {} onto {}: {} iterations, converged {}, objective {}, orthogonality error {:.3e}\n",
        st.low,
        st.high,
        al.outcome.iterations,
        al.outcome.converged,
        fmt_sig6(al.outcome.history.last().copied().unwrap_or(0.0)),
        al.transform.orthogonality_error()
    ))
}

fn store_caie(store: &Store, arch: ArchId) -> Result<EmbeddingMatrix, CliError> {
    read_embeddings(&store.read(&Store::caie_name(arch))?)
}

fn corpus_for(dir: &Path, arch: ArchId, opt: OptLevel, caie: &EmbeddingMatrix) -> Result<MonoCorpus, CliError> {
    let blocks = load_blocks(dir, arch)?;
    let vocab = Vocab::with_words(caie.words().to_vec(), &blocks)?;
    Ok(MonoCorpus::with_vocab(arch, opt, vocab, &blocks))
}

pub fn train_xlate(a: &TrainXlateArgs, s: &Settings) -> Result<String, CliError> {
    let st = &a.store;
    let mut store = Store::open(&st.store, st.high, st.low, st.opt, false)?;
    let caie_high = store_caie(&store, st.high)?;
    let caie_low = store_caie(&store, st.low)?;
    let high = corpus_for(&a.corpus_dir, st.high, st.opt, &caie_high)?;
    let low = corpus_for(&a.corpus_dir, st.low, st.opt, &caie_low)?;
    let model = train_translator(&high, &low, &caie_high, &caie_low, &s.xlate.schedule, s.xlate.seed)?;
    let prov = Provenance::new(s.xlate.seed, &("train-xlate", st.high, st.low, st.opt, &s.xlate));
    store.write("translator.ubt", &binary(|b| model.write(b, &prov.header()))?, &prov)?;
    let mut curve = format!("iteration\t{}\n", bintrans_core::xlate::OBJECTIVES.join("\t"));
    for (i, l) in model.losses.iter().enumerate() {
        let cols: Vec<String> = l.iter().map(|v| fmt_sig6(*v)).collect();
        let _ = writeln!(curve, "{}\t{}", i + 1, cols.join("\t"));
    }
    store.write("losses.tsv", &with_header(&prov, &curve), &prov)?;
    let last = model.losses.last().map(|l| l.map(fmt_sig6).join(" ")).unwrap_or_default();
    Ok(format!(
        "trained {} iterations; final losses {last}; skipped backtranslation pairs {}\n",
        model.losses.len(),
        model.skipped_pairs
    ))
}

fn load_model(st: &StoreArgs) -> Result<TranslationModel, CliError> {
    let store = Store::open(&st.store, st.high, st.low, st.opt, false)?;
    Ok(TranslationModel::read(&store.read("translator.ubt")?[..])?)
}

fn other_side(st: &StoreArgs, arch: ArchId) -> Result<ArchId, CliError> {
    if arch == st.high {
        Ok(st.low)
    } else if arch == st.low {
        Ok(st.high)
    } else {
        Err(CliError::Config(format!("architecture {arch} is not part of the {}-{} store", st.high, st.low)))
    }
}

pub fn translate(a: &TranslateArgs, s: &Settings) -> Result<String, CliError> {
    let st = &a.store;
    let target = other_side(st, a.source)?;
    let model = load_model(st)?;
    let beam = s.xlate.beam;
    if let Some(block) = &a.block {
        let req = TranslationRequest { block: block.split_whitespace().map(str::to_string).collect(), source: a.source, target };
        return Ok(format!("{}\n", model.translate_block(&req, beam)?.words().join(" ")));
    }
    let (Some(dir), Some(out)) = (&a.corpus_dir, &a.out) else {
        return Err(CliError::Usage("translate needs --block or both --corpus-dir and --out".into()));
    };
    let functions = load_functions(dir, a.source)?;
    let translated = functions
        .iter()
        .map(|f| model.translate_function(f, target, beam))
        .collect::<Result<Vec<_>, _>>()?;
    let prov = Provenance::new(s.xlate.seed, &("translate", a.source, target, beam, model.embedding_hash()));
    save_functions(out, target, &translated, &prov)?;
    Ok(format!("translated {} {} functions into {}\n", translated.len(), a.source, target))
}

fn by_name(functions: Vec<FunctionRecord>) -> HashMap<String, FunctionRecord> {
    functions.into_iter().map(|f| (f.name.clone(), f)).collect()
}

fn read_name_pairs(path: &Path) -> Result<HashMap<String, String>, CliError> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('\t')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| CliError::Data(format!("{}: bad pair line `{l}`", path.display())))
        })
        .collect()
}

pub fn bleu(a: &BleuArgs, s: &Settings) -> Result<String, CliError> {
    let candidates = load_functions(&a.candidate, a.arch)?;
    let mut references = by_name(load_functions(&a.reference, a.arch)?);
    let pairs = a.pairs.as_deref().map(read_name_pairs).transpose()?;
    let mut refs = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let name = pairs.as_ref().and_then(|p| p.get(&c.name)).unwrap_or(&c.name);
        let r = references
            .remove(name)
            .ok_or_else(|| CliError::Data(format!("no reference function `{name}` for `{}`", c.name)))?;
        refs.push(r);
    }
    let report = bleu_report(&candidates, &refs)?;
    let mut text = report.to_text();
    if let Some(lex_path) = &a.oracle {
        let lexicon = Lexicon::from_tsv(&read_text_checked(lex_path, true)?)?;
        let source_arch = a.source_arch.unwrap_or(if a.arch == ArchId::X86 { ArchId::Arm } else { ArchId::X86 });
        let dir = a.source.as_deref().ok_or_else(|| CliError::Usage("--oracle needs --source".into()))?;
        let mut sources = by_name(load_functions(dir, source_arch)?);
        let srcs = candidates
            .iter()
            .map(|c| sources.remove(&c.name).ok_or_else(|| CliError::Data(format!("no source function `{}`", c.name))))
            .collect::<Result<Vec<_>, _>>()?;
        let acc = token_accuracy(&lexicon, &srcs, &candidates)?;
        let _ = writeln!(text, "token accuracy\t{acc:.4}");
    }
    let prov = Provenance::new(s.seed, &("bleu", a.arch, a.oracle.is_some()));
    emit(text, a.out.as_deref(), &prov)
}

fn parse_tf(text: &str) -> Result<TfWeighting, CliError> {
    match text {
        "raw" => Ok(TfWeighting::Raw),
        "normalized" => Ok(TfWeighting::LengthNormalized),
        other => Err(CliError::Config(format!("invalid value `{other}` for `funcsim.tf` (raw or normalized)"))),
    }
}

fn parse_threshold(text: &str, seed: u64) -> Result<ThresholdPolicy, CliError> {
    let bad = || CliError::Config(format!("invalid value `{text}` for `funcsim.threshold`"));
    match text.split_once(':') {
        None if text == "best" => Ok(ThresholdPolicy::Best),
        Some(("fixed", v)) => Ok(ThresholdPolicy::Fixed(v.parse().map_err(|_| bad())?)),
        Some(("validation", v)) => Ok(ThresholdPolicy::Validation { fraction: v.parse().map_err(|_| bad())?, seed }),
        _ => Err(bad()),
    }
}

/// Both CAIE tables of a store, keyed by architecture.
fn store_tables(st: &StoreArgs) -> Result<BTreeMap<ArchId, EmbeddingMatrix>, CliError> {
    let store = Store::open(&st.store, st.high, st.low, st.opt, false)?;
    Ok([(st.high, store_caie(&store, st.high)?), (st.low, store_caie(&store, st.low)?)].into_iter().collect())
}

fn embed_functions(functions: &[FunctionRecord], caie: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>, CliError> {
    functions
        .iter()
        .map(|f| Ok(function_embedding(f, caie, TfWeighting::Raw)?.vector))
        .collect()
}

pub fn funcsim(a: &FuncsimArgs, s: &Settings) -> Result<String, CliError> {
    let st = &a.store;
    let tf = parse_tf(&s.funcsim.tf)?;
    let policy = parse_threshold(&s.funcsim.threshold, s.seed)?;
    let tables = store_tables(st)?;
    let mut functions: HashMap<(ArchId, String), FunctionRecord> = HashMap::new();
    for &arch in tables.keys() {
        if corpus_path(&a.corpus_dir, arch).exists() {
            functions.extend(load_functions(&a.corpus_dir, arch)?.into_iter().map(|f| ((arch, f.name.clone()), f)));
        }
    }
    let pairs = read_pairs(&read_text(&a.pairs)?)?;
    let embed = |arch: ArchId, name: &str| -> Result<Vec<f64>, CliError> {
        let f = functions
            .get(&(arch, name.to_string()))
            .ok_or_else(|| CliError::Data(format!("no {arch} function `{name}`")))?;
        let caie = tables.get(&arch).ok_or_else(|| CliError::Config(format!("no embeddings for {arch}")))?;
        Ok(function_embedding(f, caie, tf)?.vector)
    };
    let scored = pairs
        .iter()
        .map(|p| Ok((cosine_similarity(&embed(p.arch1, &p.f1)?, &embed(p.arch2, &p.f2)?)?, p.label)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = pair_accuracy(&scored, policy)?;
    let table = format_accuracy_table(&[(format!("{}-{} {}", st.high, st.low, st.opt), s.funcsim.tf.clone(), report)]);
    let prov = Provenance::new(s.seed, &("funcsim", &s.funcsim));
    emit(table, a.out.as_deref(), &prov)
}

fn labeled(functions: &[FunctionRecord], vectors: Vec<Vec<f64>>, labels: &BTreeMap<String, bool>) -> Result<LabeledSet, CliError> {
    let ys = functions
        .iter()
        .map(|f| labels.get(&f.name).copied().ok_or_else(|| CliError::Data(format!("no label for `{}`", f.name))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledSet::new(vectors, ys)?)
}

pub fn vuln_train(a: &VulnTrainArgs, s: &Settings) -> Result<String, CliError> {
    let tables = store_tables(&a.store)?;
    let caie = tables.get(&a.arch).ok_or_else(|| CliError::Config(format!("no embeddings for {}", a.arch)))?;
    let functions = load_functions(&a.corpus_dir, a.arch)?;
    let set = labeled(&functions, embed_functions(&functions, caie)?, &read_labels(&a.labels)?)?;
    let v = &s.vuln;
    let over = oversample(&set, &v.oversample)?;
    let fit = train_linear_svm(&over, v.lambda, v.epochs, v.oversample.seed)?;
    let prov = Provenance::new(v.oversample.seed, &("vuln-train", a.arch, v));
    write_text(&a.out, &prov, &fit.model.to_text())?;
    let before = set.class_counts();
    let after = over.class_counts();
    let metrics = evaluate_detection(&fit.model, &set)?;
    let mut out = format!(
        "training set: {} vulnerable / {} benign; after oversampling {} / {}\nmodel sha256 {}\n",
        before.0,
        before.1,
        after.0,
        after.1,
        fit.model.hash()
    );
    out.push_str(&format_metrics_table(&[(a.arch.to_string(), "train".into(), metrics)]));
    Ok(out)
}

pub fn vuln_scan(a: &VulnScanArgs, s: &Settings) -> Result<String, CliError> {
    let model = LinearModel::from_text(&read_text(&a.model)?)?;
    let tables = store_tables(&a.store)?;
    let caie = tables.get(&a.arch).ok_or_else(|| CliError::Config(format!("no embeddings for {}", a.arch)))?;
    let functions = load_functions(&a.corpus_dir, a.arch)?;
    let vectors = embed_functions(&functions, caie)?;
    let mut out = format!("model sha256 {}\nfunction\tscore\tvulnerable\n", model.hash());
    for (f, x) in functions.iter().zip(&vectors) {
        let _ = writeln!(out, "{}\t{}\t{}", f.name, fmt_sig6(model.decision(x)), u8::from(model.predict(x)));
    }
    if let Some(path) = &a.labels {
        let set = labeled(&functions, vectors, &read_labels(path)?)?;
        let metrics = evaluate_detection(&model, &set)?;
        out.push_str(&format_metrics_table(&[(a.arch.to_string(), "scan".into(), metrics)]));
    }
    let prov = Provenance::new(s.seed, &("vuln-scan", a.arch, model.hash()));
    emit(out, a.out.as_deref(), &prov)
}

pub fn toygen(a: &ToygenArgs, s: &Settings) -> Result<String, CliError> {
    let twin = generate_twin_corpus(&s.toy)?;
    let prov = Provenance::new(s.toy.seed, &("toygen", &s.toy));
    save_functions(&a.out, ArchId::X86, &twin.a, &prov)?;
    save_functions(&a.out, ArchId::Arm, &twin.b, &prov)?;
    let n = twin.a.len();
    let mut twins = String::new();
    let mut pairs = Vec::with_capacity(2 * n);
    for (j, f) in twin.b.iter().enumerate() {
        let i = twin.b_to_a[j];
        let _ = writeln!(twins, "{}\t{}", f.name, twin.a[i].name);
        pairs.push(SimilarityPair { f1: f.name.clone(), arch1: ArchId::Arm, f2: twin.a[i].name.clone(), arch2: ArchId::X86, label: true });
        if n > 1 {
            let k = (i + 1 + (j * 7919) % (n - 1)) % n;
            pairs.push(SimilarityPair { f1: f.name.clone(), arch1: ArchId::Arm, f2: twin.a[k].name.clone(), arch2: ArchId::X86, label: false });
        }
    }
    write_text(&a.out.join("twins.tsv"), &prov, &twins)?;
    write_text(&a.out.join("similarity_pairs.tsv"), &prov, &write_pairs(&pairs))?;
    let labels_a = format_labels(twin.a.iter().map(|f| f.name.as_str()).zip(twin.motif_a.iter().copied()));
    write_text(&a.out.join("labels.x86.tsv"), &prov, &labels_a)?;
    let labels_b = format_labels(twin.b.iter().enumerate().map(|(j, f)| (f.name.as_str(), twin.motif_a[twin.b_to_a[j]])));
    write_text(&a.out.join("labels.arm.tsv"), &prov, &labels_b)?;
    write_text(&a.out.join("oracle").join(crate::artifacts::ORACLE_FILE), &prov, &twin.lexicon.to_tsv())?;
    let st = &twin.stats_a;
    let summary = format!(
        "functions\t{}\nunique instructions\t{}\ntotal instructions\t{}\nvulnerable functions\t{}\nswaps\t{} of {} adjacent pairs\n",
        st.function_count,
        st.unique_instruction_count,
        st.total_instruction_count,
        twin.motif_a.iter().filter(|&&m| m).count(),
        twin.swaps.0,
        twin.swaps.1
    );
    emit(summary, Some(&a.out.join("toygen.txt")), &prov)
}

/// `toygen`, then every training and evaluation stage, into one directory.
pub fn e2e_demo(a: &DemoArgs, s: &Settings) -> Result<String, CliError> {
    let out = &a.out;
    let data = out.join("data");
    let reports = out.join("reports");
    let translated = out.join("translated");
    let st = StoreArgs { store: out.join("store"), high: ArchId::X86, low: ArchId::Arm, opt: OptLevel::O0 };
    let maie = |arch: ArchId| out.join("maie").join(format!("{arch}.ube"));
    let mut summary = String::new();
    let mut section = |title: &str, body: String| {
        let _ = write!(summary, "== {title}\n{body}\n");
    };

    section("toygen", toygen(&ToygenArgs { out: data.clone(), vocab_size: None, blocks: None, swap_p: None }, s)?);
    for arch in [ArchId::X86, ArchId::Arm] {
        let args = TrainEmbedArgs {
            corpus_dir: data.clone(),
            arch,
            out: maie(arch),
            text: None,
            mode: None,
            dim: None,
            epochs: None,
            window: None,
            negatives: None,
            lr: None,
            min_count: None,
        };
        section(&format!("train-embed {arch}"), train_embed(&args, s)?);
    }
    let m = MapArgs { source: maie(ArchId::Arm), target: maie(ArchId::X86), store: st.clone(), csls_k: None, keep_prob: None, max_iter: None };
    section("map", map(&m, s)?);
    let tx = TrainXlateArgs { store: st.clone(), corpus_dir: data.clone(), iterations: None, batch_size: None, lr: None, hidden: None };
    section("train-xlate", train_xlate(&tx, s)?);
    let tr = TranslateArgs {
        store: st.clone(),
        source: ArchId::Arm,
        corpus_dir: Some(data.clone()),
        out: Some(translated.clone()),
        block: None,
        beam: None,
    };
    section("translate", translate(&tr, s)?);
    let b = BleuArgs {
        candidate: translated.clone(),
        reference: data.clone(),
        arch: ArchId::X86,
        pairs: Some(data.join("twins.tsv")),
        oracle: Some(data.join("oracle").join(crate::artifacts::ORACLE_FILE)),
        source: Some(data.clone()),
        source_arch: Some(ArchId::Arm),
        out: Some(reports.join("bleu.txt")),
    };
    let bleu_text = bleu(&b, s)?;
    let mean_line = bleu_text.lines().filter(|l| l.starts_with("mean") || l.starts_with("corpus") || l.starts_with("token")).collect::<Vec<_>>().join("\n");
    section("bleu", format!("{mean_line}\n"));
    let fs = FuncsimArgs {
        store: st.clone(),
        corpus_dir: data.clone(),
        pairs: data.join("similarity_pairs.tsv"),
        tf: None,
        threshold: None,
        out: Some(reports.join("funcsim.txt")),
    };
    section("funcsim", funcsim(&fs, s)?);
    let detector = out.join("detector.txt");
    let vt = VulnTrainArgs {
        store: st.clone(),
        corpus_dir: data.clone(),
        arch: ArchId::X86,
        labels: data.join("labels.x86.tsv"),
        out: detector.clone(),
        method: None,
        k_neighbors: None,
        ratio: None,
        lambda: None,
    };
    section("vuln-train", vuln_train(&vt, s)?);
    let vs = VulnScanArgs {
        store: st,
        model: detector,
        corpus_dir: translated,
        arch: ArchId::X86,
        labels: Some(data.join("labels.arm.tsv")),
        out: Some(reports.join("vuln.txt")),
    };
    let scan = vuln_scan(&vs, s)?;
    let table: String = scan.lines().skip_while(|l| !l.starts_with("level")).map(|l| format!("{l}\n")).collect();
    section("vuln-scan", format!("{}\n{table}", scan.lines().next().unwrap_or_default()));
    section("stats", stats(&StatsArgs { corpora: vec![data.display().to_string()], out: Some(reports.join("stats.txt")) }, s)?);
    let prov = Provenance::new(s.seed, s);
    emit(summary, Some(&reports.join("summary.txt")), &prov)
}
