//! Model file: one JSON manifest line, then little-endian `f32` tensors in
//! manifest order, then the two frozen embedding tables.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{TrainSchedule, TranslationModel};
use crate::asmtext::ArchId;
use crate::embed::{write_f32s, EmbeddingMatrix, F32Reader, MatrixManifest};
use crate::error::{Error, Result};

const MAGIC: &str = "UBT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    provenance: String,
    archs: [ArchId; 2],
    seed: u64,
    schedule: TrainSchedule,
    dim: usize,
    hidden: usize,
    trained: bool,
    skipped_pairs: usize,
    losses: Vec<[f64; 4]>,
    caie: [MatrixManifest; 2],
    tensors: Vec<TensorEntry>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::format("translation model", msg.into())
}

impl TranslationModel {
    pub fn write<W: Write>(&self, mut w: W, provenance: &str) -> Result<()> {
        let manifest = ModelManifest {
            format: MAGIC.into(),
            provenance: provenance.into(),
            archs: self.archs,
            seed: self.seed,
            schedule: self.schedule.clone(),
            dim: self.net.dim,
            hidden: self.net.hidden,
            trained: self.trained,
            skipped_pairs: self.skipped_pairs,
            losses: self.losses.clone(),
            caie: [self.caie[0].manifest(), self.caie[1].manifest()],
            tensors: self
                .net
                .specs
                .iter()
                .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone(), dtype: "f32".into() })
                .collect(),
        };
        let line = serde_json::to_string(&manifest).map_err(|e| fmt_err(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for s in &self.net.specs {
            write_f32s(&mut w, &self.params[s.offset..s.offset + s.len()])?;
        }
        for e in &self.caie {
            e.write_payload(&mut w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| fmt_err("missing manifest line"))?;
        let m: ModelManifest = serde_json::from_slice(&bytes[..nl]).map_err(|e| fmt_err(e.to_string()))?;
        if m.format != MAGIC {
            return Err(fmt_err(format!("unknown format `{}`", m.format)));
        }
        let mut payload = F32Reader { bytes: &bytes[nl + 1..] };
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for t in &m.tensors {
            if t.dtype != "f32" {
                return Err(fmt_err(format!("tensor `{}` has unsupported dtype `{}`", t.name, t.dtype)));
            }
            tensors.push(payload.take(t.shape.iter().product())?);
        }
        let [c0, c1] = m.caie;
        let high = EmbeddingMatrix::from_payload(c0, &mut payload)?;
        let low = EmbeddingMatrix::from_payload(c1, &mut payload)?;
        if !payload.bytes.is_empty() {
            return Err(fmt_err("trailing bytes after payload"));
        }
        let mut schedule = m.schedule;
        schedule.hidden = m.hidden;
        let mut model = TranslationModel::new(high, m.archs[0], low, m.archs[1], schedule, m.seed)?;
        if model.net.dim != m.dim || model.net.specs.len() != m.tensors.len() {
            return Err(fmt_err("tensor layout does not match the manifest"));
        }
        for (spec, (entry, values)) in model.net.specs.iter().zip(m.tensors.iter().zip(tensors)) {
            if spec.name != entry.name || spec.shape != entry.shape {
                return Err(fmt_err(format!("tensor `{}` does not match expected `{}`", entry.name, spec.name)));
            }
            model.params[spec.offset..spec.offset + spec.len()].copy_from_slice(&values);
        }
        model.trained = m.trained;
        model.skipped_pairs = m.skipped_pairs;
        model.losses = m.losses;
        Ok(model)
    }
}
