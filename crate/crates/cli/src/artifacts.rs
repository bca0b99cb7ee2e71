//! Reading and writing artifacts: provenance headers, corpus directories and
//! the model store.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bintrans_core::corpus::{assemble_functions, flatten_functions, read_corpus, read_func_index, write_corpus, write_func_index};
use bintrans_core::{ArchId, FunctionRecord, OptLevel};

use crate::CliError;

/// File name that only `--oracle` evaluation may read.
pub const ORACLE_FILE: &str = "lexicon.tsv";

/// `# bintrans <version> seed=<seed> config=<hash>` stamped on artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    /// Hashes the serialized configuration that produced an artifact.
    pub fn new<T: Serialize>(seed: u64, config: &T) -> Self {
        let json = serde_json::to_vec(config).unwrap_or_default();
        let digest = hex::encode(Sha256::digest(&json));
        Provenance { seed, config_hash: digest[..16].to_string() }
    }

    pub fn header(&self) -> String {
        format!("# bintrans {} seed={} config={}", bintrans_core::VERSION, self.seed, self.config_hash)
    }
}

/// Drops leading `#` lines.
pub fn strip_header(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, tail)| tail);
    }
    rest
}

fn check_oracle(path: &Path, oracle: bool) -> Result<(), CliError> {
    if !oracle && path.file_name().is_some_and(|n| n == ORACLE_FILE) {
        return Err(CliError::Config(format!("{} is ground truth; pass --oracle to evaluate against it", path.display())));
    }
    Ok(())
}

/// Fails with a configuration error when an input path is missing.
pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", path.display())))
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    check_oracle(path, false)?;
    require(path)?;
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads a text artifact, header removed.
pub fn read_text(path: &Path) -> Result<String, CliError> {
    read_text_checked(path, false)
}

pub fn read_text_checked(path: &Path, oracle: bool) -> Result<String, CliError> {
    check_oracle(path, oracle)?;
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(strip_header(&text).to_string())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes `body` under a provenance header.
pub fn write_text(path: &Path, prov: &Provenance, body: &str) -> Result<(), CliError> {
    write_bytes(path, format!("{}\n{body}", prov.header()).as_bytes())
}

pub fn corpus_path(dir: &Path, arch: ArchId) -> PathBuf {
    dir.join(format!("{arch}.corpus"))
}

pub fn index_path(dir: &Path, arch: ArchId) -> PathBuf {
    dir.join(format!("{arch}.funcs"))
}

/// Loads the functions of `arch` from `dir/<arch>.corpus` and `dir/<arch>.funcs`.
pub fn load_functions(dir: &Path, arch: ArchId) -> Result<Vec<FunctionRecord>, CliError> {
    let blocks = read_corpus(&read_text(&corpus_path(dir, arch))?)?;
    let index = read_func_index(&read_text(&index_path(dir, arch))?)?;
    Ok(assemble_functions(&blocks, &index, arch)?)
}

pub fn load_blocks(dir: &Path, arch: ArchId) -> Result<Vec<Vec<String>>, CliError> {
    Ok(read_corpus(&read_text(&corpus_path(dir, arch))?)?)
}

pub fn save_functions(dir: &Path, arch: ArchId, functions: &[FunctionRecord], prov: &Provenance) -> Result<(), CliError> {
    let (blocks, index) = flatten_functions(functions);
    write_text(&corpus_path(dir, arch), prov, &write_corpus(&blocks))?;
    write_text(&index_path(dir, arch), prov, &write_func_index(&index))
}

/// Two-column `name<TAB>label` file with labels `0`/`1`.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, bool>, CliError> {
    let mut out = BTreeMap::new();
    for line in read_text(path)?.lines().filter(|l| !l.trim().is_empty()) {
        let (name, label) = line
            .split_once('\t')
            .ok_or_else(|| CliError::Data(format!("{}: bad label line `{line}`", path.display())))?;
        let label = match label.trim() {
            "1" => true,
            "0" => false,
            other => return Err(CliError::Data(format!("{}: label `{other}` is not 0 or 1", path.display()))),
        };
        out.insert(name.to_string(), label);
    }
    Ok(out)
}

pub fn format_labels<'a>(labels: impl IntoIterator<Item = (&'a str, bool)>) -> String {
    labels.into_iter().map(|(n, l)| format!("{n}\t{}\n", u8::from(l))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub high: ArchId,
    pub low: ArchId,
    pub opt: OptLevel,
    /// File name → SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    /// Header of the most recent write, per file.
    pub provenance: BTreeMap<String, String>,
}

/// One directory per (high arch, low arch, optimization level).
pub struct Store {
    pub dir: PathBuf,
    pub manifest: StoreManifest,
}

impl Store {
    pub fn dir_name(high: ArchId, low: ArchId, opt: OptLevel) -> String {
        format!("{high}-{low}-{opt}")
    }

    /// Opens an existing store, or starts one when `create` is set.
    pub fn open(root: &Path, high: ArchId, low: ArchId, opt: OptLevel, create: bool) -> Result<Self, CliError> {
        if high == low {
            return Err(CliError::Config("the two architectures of a store must differ".into()));
        }
        let dir = root.join(Self::dir_name(high, low, opt));
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let manifest: StoreManifest = serde_json::from_slice(&read_bytes(&manifest_path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
            return Ok(Store { dir, manifest });
        }
        if !create {
            return Err(CliError::Config(format!("no model store at {}", dir.display())));
        }
        let manifest = StoreManifest { high, low, opt, files: BTreeMap::new(), provenance: BTreeMap::new() };
        Ok(Store { dir, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Reads a file the manifest lists, verifying its hash.
    pub fn read(&self, name: &str) -> Result<Vec<u8>, CliError> {
        let expected = self
            .manifest
            .files
            .get(name)
            .ok_or_else(|| CliError::Config(format!("model store {} has no `{name}`", self.dir.display())))?;
        let bytes = read_bytes(&self.path(name))?;
        if hex::encode(Sha256::digest(&bytes)) != *expected {
            return Err(CliError::Data(format!("{} does not match its manifest hash", self.path(name).display())));
        }
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], prov: &Provenance) -> Result<(), CliError> {
        write_bytes(&self.path(name), bytes)?;
        self.manifest.files.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        self.manifest.provenance.insert(name.to_string(), prov.header());
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Data(e.to_string()))?;
        write_bytes(&self.path("manifest.json"), format!("{json}\n").as_bytes())
    }

    pub fn caie_name(arch: ArchId) -> String {
        format!("caie.{arch}.ube")
    }
}
