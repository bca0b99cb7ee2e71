//! Vocabularies, integer-encoded block corpora, and corpus statistics.
//!
//! File formats:
//!
//! * corpus: one basic block per line, canonical words separated by single
//!   spaces;
//! * function index (`.funcs`): `name<TAB>first_block<TAB>block_count`, one
//!   function per line, referencing lines of the matching corpus file;
//! * vocabulary: first line `V`, then `word count` per line in id order.
//!
//! Readers skip leading lines that start with `#` so artifacts can carry a
//! provenance header.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asmtext::{ArchId, BasicBlock, FunctionRecord};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_WORDS: [&str; NUM_SPECIALS] = ["<PAD>", "<UNK>", "<BOS>", "<EOS>"];

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Dense word ↔ id mapping. Ids `0..4` are the reserved specials; the rest
/// are ordered by descending count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words, counts, index }
    }

    pub fn specials_only() -> Self {
        Self::from_parts(
            SPECIAL_WORDS.iter().map(|s| s.to_string()).collect(),
            vec![0; NUM_SPECIALS],
        )
    }

    /// Vocabulary over a fixed word list (specials first), with counts
    /// taken from `blocks`. Words outside the list are not counted.
    pub fn with_words<B, S>(words: Vec<String>, blocks: &[B]) -> Result<Self>
    where
        B: AsRef<[S]>,
        S: AsRef<str>,
    {
        if words.len() < NUM_SPECIALS || words[..NUM_SPECIALS] != SPECIAL_WORDS {
            return Err(Error::format("vocabulary", "specials missing from ids 0..4"));
        }
        let mut v = Self::from_parts(words, Vec::new());
        if v.index.len() != v.words.len() {
            return Err(Error::format("vocabulary", "duplicate word"));
        }
        v.counts = vec![0; v.words.len()];
        for b in blocks {
            for w in b.as_ref() {
                if let Some(id) = v.id(w.as_ref()) {
                    v.counts[id as usize] += 1;
                }
            }
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Ids of regular (non-special) words.
    pub fn regular_ids(&self) -> std::ops::Range<u32> {
        NUM_SPECIALS as u32..self.words.len() as u32
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.len());
        for (w, c) in self.words.iter().zip(&self.counts) {
            let _ = writeln!(out, "{w} {c}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let v: usize = lines
            .next()
            .ok_or_else(|| Error::format("vocabulary", "missing size line"))?
            .trim()
            .parse()
            .map_err(|e| Error::format("vocabulary", format!("bad size line: {e}")))?;
        let mut words = Vec::with_capacity(v);
        let mut counts = Vec::with_capacity(v);
        for line in lines {
            let (w, c) = line
                .rsplit_once(' ')
                .ok_or_else(|| Error::format("vocabulary", format!("bad entry `{line}`")))?;
            words.push(w.to_string());
            counts.push(
                c.parse()
                    .map_err(|e| Error::format("vocabulary", format!("bad count in `{line}`: {e}")))?,
            );
        }
        if words.len() != v {
            return Err(Error::format("vocabulary", format!("declared {v} entries, found {}", words.len())));
        }
        if words.len() < NUM_SPECIALS || words[..NUM_SPECIALS] != SPECIAL_WORDS {
            return Err(Error::format("vocabulary", "specials missing from ids 0..4"));
        }
        Ok(Self::from_parts(words, counts))
    }
}

/// Iterates non-blank lines after any leading `#` header lines.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .filter(|l| !l.trim().is_empty())
}

/// Builds a vocabulary from word sequences. Words seen fewer than
/// `min_count` times are left out and will encode as `<UNK>`.
pub fn build_vocab<B, S>(blocks: &[B], min_count: u64) -> Result<Vocab>
where
    B: AsRef<[S]>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(Error::config("min_count", "must be at least 1"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for block in blocks {
        for w in block.as_ref() {
            *counts.entry(w.as_ref()).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count && !SPECIAL_WORDS.contains(&w))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut words: Vec<String> = SPECIAL_WORDS.iter().map(|s| s.to_string()).collect();
    let mut cnts = vec![0u64; NUM_SPECIALS];
    for (w, c) in entries {
        words.push(w.to_string());
        cnts.push(c);
    }
    Ok(Vocab::from_parts(words, cnts))
}

pub fn encode_block<S: AsRef<str>>(block: &[S], vocab: &Vocab) -> Vec<u32> {
    block
        .iter()
        .map(|w| vocab.id(w.as_ref()).unwrap_or(UNK))
        .collect()
}

pub fn decode_block(ids: &[u32], vocab: &Vocab) -> Result<Vec<String>> {
    ids.iter()
        .map(|&id| {
            vocab.word(id).map(str::to_string).ok_or(Error::IdOutOfRange {
                id: id as usize,
                size: vocab.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptLevel {
    O0,
    O1,
    O2,
    O3,
}

impl OptLevel {
    pub const ALL: [OptLevel; 4] = [OptLevel::O0, OptLevel::O1, OptLevel::O2, OptLevel::O3];
}

impl fmt::Display for OptLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for OptLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "O0" => Ok(OptLevel::O0),
            "O1" => Ok(OptLevel::O1),
            "O2" => Ok(OptLevel::O2),
            "O3" => Ok(OptLevel::O3),
            _ => Err(Error::config("opt_level", format!("unknown optimization level `{s}`"))),
        }
    }
}

/// Integer-encoded basic blocks of one architecture at one optimization level.
#[derive(Debug, Clone)]
pub struct MonoCorpus {
    pub arch: ArchId,
    pub opt_level: OptLevel,
    pub vocab: Vocab,
    pub blocks: Vec<Vec<u32>>,
}

impl MonoCorpus {
    pub fn from_word_blocks<S: AsRef<str>>(
        arch: ArchId,
        opt_level: OptLevel,
        blocks: &[Vec<S>],
        min_count: u64,
    ) -> Result<Self> {
        let vocab = build_vocab(blocks, min_count)?;
        let blocks = blocks.iter().map(|b| encode_block(b, &vocab)).collect();
        Ok(MonoCorpus { arch, opt_level, vocab, blocks })
    }

    /// Encodes `blocks` against an existing vocabulary.
    pub fn with_vocab<S: AsRef<str>>(arch: ArchId, opt_level: OptLevel, vocab: Vocab, blocks: &[Vec<S>]) -> Self {
        let blocks = blocks.iter().map(|b| encode_block(b, &vocab)).collect();
        MonoCorpus { arch, opt_level, vocab, blocks }
    }

    pub fn token_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub function_count: usize,
    pub unique_instruction_count: usize,
    pub total_instruction_count: usize,
}

pub fn corpus_stats(functions: &[FunctionRecord]) -> CorpusStats {
    let mut unique = BTreeSet::new();
    let mut total = 0;
    for f in functions {
        for w in f.words() {
            unique.insert(w);
            total += 1;
        }
    }
    CorpusStats {
        function_count: functions.len(),
        unique_instruction_count: unique.len(),
        total_instruction_count: total,
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Renders statistics in the `Opt. Level / ISA / # of Functions / # of Unique
/// Instructions / Total # of Instructions` layout.
pub fn format_stats_table(rows: &[(OptLevel, ArchId, CorpusStats)]) -> String {
    let header = ["Opt. Level", "ISA", "# of Functions", "# of Unique Instructions", "Total # of Instructions"];
    let mut cells: Vec<[String; 5]> = vec![header.map(String::from)];
    let mut last_opt = None;
    for (opt, arch, s) in rows {
        let opt_cell = if last_opt == Some(*opt) { String::new() } else { opt.to_string() };
        last_opt = Some(*opt);
        cells.push([
            opt_cell,
            arch.to_string(),
            thousands(s.function_count),
            thousands(s.unique_instruction_count),
            thousands(s.total_instruction_count),
        ]);
    }
    let widths: Vec<usize> = (0..5).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| if c < 2 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn write_corpus<B, S>(blocks: &[B]) -> String
where
    B: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for b in blocks {
        let words: Vec<&str> = b.as_ref().iter().map(AsRef::as_ref).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_corpus(text: &str) -> Result<Vec<Vec<String>>> {
    let mut blocks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            continue;
        }
        if line.trim().is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty basic block".into() });
        }
        blocks.push(line.split(' ').map(str::to_string).collect());
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncIndexEntry {
    pub name: String,
    pub first_block: usize,
    pub block_count: usize,
}

/// Flattens functions into a block list plus the index that recovers them.
pub fn flatten_functions(functions: &[FunctionRecord]) -> (Vec<Vec<String>>, Vec<FuncIndexEntry>) {
    let mut blocks = Vec::new();
    let mut index = Vec::with_capacity(functions.len());
    for f in functions {
        index.push(FuncIndexEntry {
            name: f.name.clone(),
            first_block: blocks.len(),
            block_count: f.blocks.len(),
        });
        blocks.extend(f.blocks.iter().map(BasicBlock::words));
    }
    (blocks, index)
}

pub fn assemble_functions(
    blocks: &[Vec<String>],
    index: &[FuncIndexEntry],
    arch: ArchId,
) -> Result<Vec<FunctionRecord>> {
    index
        .iter()
        .map(|e| {
            let end = e.first_block + e.block_count;
            if e.block_count == 0 || end > blocks.len() {
                return Err(Error::format(
                    "function index",
                    format!("`{}` references blocks {}..{end} of {}", e.name, e.first_block, blocks.len()),
                ));
            }
            Ok(FunctionRecord {
                name: e.name.clone(),
                arch,
                blocks: blocks[e.first_block..end].iter().map(|b| BasicBlock::from_words(b.iter().cloned())).collect(),
            })
        })
        .collect()
}

pub fn write_func_index(index: &[FuncIndexEntry]) -> String {
    let mut out = String::new();
    for e in index {
        let _ = writeln!(out, "{}\t{}\t{}", e.name, e.first_block, e.block_count);
    }
    out
}

pub fn read_func_index(text: &str) -> Result<Vec<FuncIndexEntry>> {
    content_lines(text)
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::format("function index", format!("bad line `{line}`"));
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok(FuncIndexEntry {
                name: cols[0].to_string(),
                first_block: cols[1].parse().map_err(|_| bad())?,
                block_count: cols[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asmtext::parse_listing;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn fixed_word_list_vocabulary() {
        let blocks = vec![s(&["a", "b", "a"]), s(&["c"])];
        let mut words = s(&SPECIAL_WORDS);
        words.extend(s(&["b", "a"]));
        let v = Vocab::with_words(words.clone(), &blocks).unwrap();
        assert_eq!(v.counts(), &[0, 0, 0, 0, 1, 2]);
        let c = MonoCorpus::with_vocab(ArchId::X86, OptLevel::O1, v, &blocks);
        assert_eq!(c.blocks, vec![vec![5, 4, 5], vec![UNK]]);
        assert!(Vocab::with_words(s(&["a"]), &blocks).is_err());
        words.push("a".into());
        assert!(Vocab::with_words(words, &blocks).is_err());
    }

    #[test]
    fn vocab_sizes_and_thresholds() {
        let blocks = vec![s(&["a", "a", "b"])];
        let v = build_vocab(&blocks, 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));

        let v2 = build_vocab(&blocks, 2).unwrap();
        assert_eq!(v2.len(), 5);
        assert_eq!(encode_block(&["b"], &v2), vec![UNK]);
        assert!(build_vocab(&blocks, 0).is_err());
    }

    #[test]
    fn empty_input_gives_specials_only() {
        let v = build_vocab::<Vec<String>, String>(&[], 1).unwrap();
        assert_eq!(v, Vocab::specials_only());
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(&[s(&["z", "y", "x", "y"])], 1).unwrap();
        assert_eq!(&v.words()[4..], &s(&["y", "x", "z"])[..]);
    }

    #[test]
    fn vocab_matches_set_oracle_on_random_corpus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let blocks: Vec<Vec<String>> = (0..1000)
            .map(|_| (0..rng.random_range(1..12)).map(|_| format!("w{}", rng.random_range(0..500))).collect())
            .collect();
        let distinct: std::collections::HashSet<&String> = blocks.iter().flatten().collect();
        let v = build_vocab(&blocks, 1).unwrap();
        assert_eq!(v.len(), distinct.len() + NUM_SPECIALS);
        for b in &blocks {
            assert_eq!(&decode_block(&encode_block(b, &v), &v).unwrap(), b);
        }
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
        assert_eq!(v.to_text(), build_vocab(&blocks, 1).unwrap().to_text());
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let v = build_vocab(&[s(&["a"])], 1).unwrap();
        assert!(matches!(decode_block(&[5], &v), Err(Error::IdOutOfRange { id: 5, size: 5 })));
    }

    #[test]
    fn unseen_word_decodes_to_unk() {
        let v = build_vocab(&[s(&["a", "b"])], 1).unwrap();
        let ids = encode_block(&["a", "zzz", "b"], &v);
        assert_eq!(decode_block(&ids, &v).unwrap(), s(&["a", "<UNK>", "b"]));
    }

    #[test]
    fn stats_of_single_block() {
        let f = parse_listing("FUNC f\nNOP\nPUSH RBP\nPOP RBP\nENDFUNC\n", ArchId::X86).unwrap();
        assert_eq!(
            corpus_stats(&f),
            CorpusStats { function_count: 1, unique_instruction_count: 3, total_instruction_count: 3 }
        );
    }

    #[test]
    fn stats_with_known_duplication() {
        // 3 functions; word wK appears K+1 times in total.
        let mk = |name: &str, blocks: Vec<Vec<&str>>| FunctionRecord {
            name: name.into(),
            arch: ArchId::Arm,
            blocks: blocks.into_iter().map(BasicBlock::from_words).collect(),
        };
        let fns = vec![
            mk("a", vec![vec!["w0", "w1"], vec!["w2"]]),
            mk("b", vec![vec!["w1", "w2", "w2"]]),
            mk("c", vec![vec!["w3", "w3"], vec!["w3", "w3"]]),
        ];
        assert_eq!(
            corpus_stats(&fns),
            CorpusStats { function_count: 3, unique_instruction_count: 4, total_instruction_count: 10 }
        );
        let table = format_stats_table(&[(OptLevel::O0, ArchId::Arm, corpus_stats(&fns))]);
        assert!(table.lines().nth(1).unwrap().starts_with("O0"));
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(6_669_266), "6,669,266");
        assert_eq!(thousands(80_065), "80,065");
        assert_eq!(thousands(999), "999");
    }

    #[test]
    fn function_index_round_trip() {
        let text = "FUNC a\nCMP EAX, 1\nJZ L\nNOP\nLBL L:\nRET\nENDFUNC\nFUNC b\nRET\nENDFUNC\n";
        let fns = parse_listing(text, ArchId::X86).unwrap();
        let (blocks, index) = flatten_functions(&fns);
        let blocks2 = read_corpus(&write_corpus(&blocks)).unwrap();
        let index2 = read_func_index(&write_func_index(&index)).unwrap();
        let back = assemble_functions(&blocks2, &index2, ArchId::X86).unwrap();
        assert_eq!(back, fns);
        assert!(read_corpus("A B\n\nC\n").is_err());
    }

    proptest! {
        #[test]
        fn stats_are_additive(
            a in prop::collection::vec(prop::collection::vec(0u8..20, 1..6), 1..8),
            b in prop::collection::vec(prop::collection::vec(10u8..40, 1..6), 1..8),
        ) {
            let mk = |blocks: &Vec<Vec<u8>>, n: &str| vec![FunctionRecord {
                name: n.into(),
                arch: ArchId::X86,
                blocks: blocks.iter().map(|bl| BasicBlock::from_words(bl.iter().map(|x| format!("i{x}")))).collect(),
            }];
            let (fa, fb) = (mk(&a, "a"), mk(&b, "b"));
            let both: Vec<_> = fa.iter().chain(&fb).cloned().collect();
            let (sa, sb, sab) = (corpus_stats(&fa), corpus_stats(&fb), corpus_stats(&both));
            prop_assert_eq!(sab.function_count, sa.function_count + sb.function_count);
            prop_assert_eq!(sab.total_instruction_count, sa.total_instruction_count + sb.total_instruction_count);
            let union: BTreeSet<&str> = fa.iter().chain(&fb).flat_map(|f| f.words()).collect();
            prop_assert_eq!(sab.unique_instruction_count, union.len());
            prop_assert!(sab.unique_instruction_count <= sab.total_instruction_count);
        }
    }
}
