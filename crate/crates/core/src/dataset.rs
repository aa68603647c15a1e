//! Dataset of `(geometry vector, DSCS profile)` pairs: generation, train/validation
//! split, conditioning normalization and JSON Lines persistence.
//!
//! Every record's vector is drawn from its own ChaCha8 stream (`seed`, stream =
//! record id), so generation order and thread count never change the output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::geometry::{decode, GeometryVector, GridSpec};
use crate::scattering::{dscs, AngleGrid, Illumination};

pub const FORMAT_VERSION: u32 = 1;
pub const PRNG_NAME: &str = "chacha8";
/// Offset inside `log10(dscs + δ)`.
pub const LOG_OFFSET: f64 = 1e-12;
pub const DEFAULT_SPLIT: [f64; 2] = [0.95, 0.05];

const SPLIT_STREAM: u64 = 0x5e11;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: u64,
    pub vector: GeometryVector,
    /// Raw DSCS values, one per polar angle.
    pub dscs: Vec<f64>,
    /// Seed of the generator stream the vector was drawn from.
    pub seed: u64,
}

/// Draws the design vector of record `id` uniformly from the unit cube.
pub fn sample_vector(seed: u64, id: u64, grid: &GridSpec) -> GeometryVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    let values = (0..grid.dimension()).map(|_| rng.random::<f64>()).collect();
    GeometryVector::new(values, *grid).expect("uniform draws lie in [0, 1)")
}

/// Generates records with ids `0..count`, solving in parallel.
pub fn generate(
    count: usize,
    seed: u64,
    grid: &GridSpec,
    angles: &AngleGrid,
    ill: &Illumination,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    generate_range(0..count as u64, seed, grid, angles, ill)
}

pub fn generate_range(
    ids: std::ops::Range<u64>,
    seed: u64,
    grid: &GridSpec,
    angles: &AngleGrid,
    ill: &Illumination,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if ids.is_empty() {
        return Err(DatasetError::EmptyCount);
    }
    ids.into_par_iter()
        .map(|id| {
            let vector = sample_vector(seed, id, grid);
            let profile = dscs(&decode(&vector), ill, angles).map_err(|source| DatasetError::Solver { id, source })?;
            Ok(DatasetRecord {
                id,
                vector,
                dscs: profile.values,
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub delta: f64,
}

impl NormalizationStats {
    /// Per-angle mean and population standard deviation of `log10(s + δ)`.
    pub fn fit<'a>(profiles: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, DatasetError> {
        let logs: Vec<Vec<f64>> = profiles
            .into_iter()
            .map(|p| p.iter().map(|s| (s + LOG_OFFSET).log10()).collect())
            .collect();
        let first = logs.first().ok_or_else(|| DatasetError::Stats("no profiles".into()))?;
        let k = first.len();
        if logs.iter().any(|l| l.len() != k) {
            return Err(DatasetError::Stats("profiles differ in length".into()));
        }
        let n = logs.len() as f64;
        let mean: Vec<f64> = (0..k).map(|i| logs.iter().map(|l| l[i]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..k)
            .map(|i| (logs.iter().map(|l| (l[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let stats = Self {
            mean,
            std,
            delta: LOG_OFFSET,
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(DatasetError::Stats("mean/std length mismatch".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(DatasetError::Stats("non-finite mean".into()));
        }
        if let Some(i) = self.std.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(DatasetError::Stats(format!("degenerate spread at angle {i}")));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(DatasetError::Stats("offset must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Conditioning vector `c_k = (log10(s_k + δ) − mean_k) / std_k`.
    pub fn normalize(&self, dscs: &[f64]) -> Vec<f64> {
        dscs.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(s, (m, sd))| ((s + self.delta).log10() - m) / sd)
            .collect()
    }

    pub fn denormalize(&self, c: &[f64]) -> Vec<f64> {
        c.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(c, (m, sd))| 10f64.powf(c * sd + m) - self.delta)
            .collect()
    }
}

/// Partitions `ids` by `fractions` after a seeded shuffle. Each partition is
/// returned sorted by id. Boundaries are rounded and then nudged so that no
/// partition is empty when there are at least as many ids as partitions.
pub fn split(ids: &[u64], fractions: &[f64], seed: u64) -> Result<Vec<Vec<u64>>, DatasetError> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fractions.to_vec()));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    let mut cumulative = 0.0;
    for (index, f) in fractions.iter().enumerate() {
        cumulative += f;
        let remaining = fractions.len() - index - 1;
        let end = if remaining == 0 {
            n
        } else {
            ((cumulative * n as f64).round() as usize)
                .max(start + 1)
                .min(n.saturating_sub(remaining))
        };
        if end <= start {
            return Err(DatasetError::EmptyPartition { index, records: n });
        }
        let mut part = shuffled[start..end].to_vec();
        part.sort_unstable();
        parts.push(part);
        start = end;
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

/// Contents of `dataset.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub prng: String,
    pub seed: u64,
    pub count: usize,
    pub grid: GridSpec,
    pub angles: AngleGrid,
    pub illumination: Illumination,
    pub split: SplitSpec,
    /// Statistics of the first (training) partition only.
    pub stats: NormalizationStats,
}

impl DatasetMeta {
    pub fn build(
        records: &[DatasetRecord],
        seed: u64,
        grid: GridSpec,
        angles: AngleGrid,
        illumination: Illumination,
        split_spec: SplitSpec,
    ) -> Result<Self, DatasetError> {
        let mut meta = Self {
            format_version: FORMAT_VERSION,
            prng: PRNG_NAME.into(),
            seed,
            count: records.len(),
            grid,
            angles,
            illumination,
            split: split_spec,
            stats: NormalizationStats {
                mean: vec![],
                std: vec![],
                delta: LOG_OFFSET,
            },
        };
        meta.stats = meta.fit_stats(records)?;
        Ok(meta)
    }

    pub fn partitions(&self, records: &[DatasetRecord]) -> Result<Vec<Vec<u64>>, DatasetError> {
        let ids: Vec<u64> = records.iter().map(|r| r.id).collect();
        split(&ids, &self.split.fractions, self.split.seed)
    }

    pub fn train_ids(&self, records: &[DatasetRecord]) -> Result<Vec<u64>, DatasetError> {
        Ok(self.partitions(records)?.swap_remove(0))
    }

    /// Recomputes normalization statistics from the training partition.
    pub fn fit_stats(&self, records: &[DatasetRecord]) -> Result<NormalizationStats, DatasetError> {
        let train = self.train_ids(records)?;
        let by_id = index_by_id(records);
        NormalizationStats::fit(train.iter().map(|id| records[by_id[id]].dscs.as_slice()))
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let meta: Self = serde_json::from_str(text).map_err(|e| DatasetError::Meta(e.to_string()))?;
        meta.check()?;
        Ok(meta)
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.format_version != FORMAT_VERSION {
            return Err(DatasetError::Meta(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        self.grid.check().map_err(|e| DatasetError::Meta(e.to_string()))?;
        self.angles.check().map_err(|e| DatasetError::Meta(e.to_string()))?;
        self.illumination
            .check()
            .map_err(|e| DatasetError::Meta(e.to_string()))?;
        self.stats.check()?;
        if self.stats.len() != self.angles.len() {
            return Err(DatasetError::Meta("stats length differs from angle count".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| DatasetError::Meta(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn index_by_id(records: &[DatasetRecord]) -> std::collections::HashMap<u64, usize> {
    records.iter().enumerate().map(|(i, r)| (r.id, i)).collect()
}

/// Sidecar path for a dataset file: `x.jsonl` → `x.meta.json`.
pub fn meta_path(jsonl: &Path) -> PathBuf {
    let stem = jsonl
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_suffix(".jsonl").unwrap_or(s))
        .unwrap_or("dataset");
    jsonl.with_file_name(format!("{stem}.meta.json"))
}

fn write_reals(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // 17 significant digits: lossless for f64
        out.push_str(&format!("{v:.16e}"));
    }
    out.push(']');
}

pub fn format_record(record: &DatasetRecord) -> String {
    let mut line = format!("{{\"id\":{},\"vector\":", record.id);
    write_reals(&mut line, record.vector.values());
    line.push_str(",\"dscs\":");
    write_reals(&mut line, &record.dscs);
    line.push('}');
    line
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: u64,
    vector: Vec<f64>,
    dscs: Vec<f64>,
}

/// Parses one JSON Lines record against the dataset's grid and angle count.
pub fn parse_record(line: &str, line_no: usize, meta: &DatasetMeta) -> Result<DatasetRecord, DatasetError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let vector = GeometryVector::new(raw.vector, meta.grid).map_err(|e| DatasetError::InvalidRecord {
        id: raw.id,
        message: e.to_string(),
    })?;
    if raw.dscs.len() != meta.angles.len() {
        return Err(DatasetError::InvalidRecord {
            id: raw.id,
            message: format!("{} DSCS values for {} angles", raw.dscs.len(), meta.angles.len()),
        });
    }
    if raw.dscs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DatasetError::InvalidRecord {
            id: raw.id,
            message: "DSCS values must be finite and non-negative".into(),
        });
    }
    Ok(DatasetRecord {
        id: raw.id,
        vector,
        dscs: raw.dscs,
        seed: meta.seed,
    })
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()?;
    Ok(())
}

/// Streams records from a JSON Lines file without loading the whole set.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    meta: DatasetMeta,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path, meta: DatasetMeta) -> Result<Self, DatasetError> {
        Ok(Self::new(BufReader::new(File::open(path)?), meta))
    }
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, meta: DatasetMeta) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            meta,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            match line {
                Err(e) => return Some(Err(e.into())),
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Some(parse_record(&l, self.line_no, &self.meta)),
            }
        }
    }
}

/// A dataset loaded from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn load(jsonl: &Path) -> Result<Self, DatasetError> {
        let meta = DatasetMeta::load(&meta_path(jsonl))?;
        let records = RecordReader::open(jsonl, meta.clone())?.collect::<Result<Vec<_>, _>>()?;
        if records.len() != meta.count {
            return Err(DatasetError::Meta(format!(
                "metadata lists {} records, file has {}",
                meta.count,
                records.len()
            )));
        }
        Ok(Self { meta, records })
    }

    /// Writes `<dir>/dataset.jsonl` and its metadata sidecar.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("dataset.jsonl");
        write_records(&path, &self.records)?;
        self.meta.save(&meta_path(&path))?;
        Ok(path)
    }

    pub fn train_records(&self) -> Result<Vec<&DatasetRecord>, DatasetError> {
        let by_id = index_by_id(&self.records);
        Ok(self
            .meta
            .train_ids(&self.records)?
            .iter()
            .map(|id| &self.records[by_id[id]])
            .collect())
    }

    /// Recomputes a record's DSCS and compares it with the stored values.
    pub fn verify_record(&self, record: &DatasetRecord, rel_tol: f64) -> Result<(), DatasetError> {
        let fresh = dscs(&decode(&record.vector), &self.meta.illumination, &self.meta.angles)
            .map_err(|source| DatasetError::Solver { id: record.id, source })?;
        for (a, b) in fresh.values.iter().zip(&record.dscs) {
            if (a - b).abs() > rel_tol * a.abs().max(b.abs()) {
                return Err(DatasetError::InvalidRecord {
                    id: record.id,
                    message: format!("stored DSCS {b} differs from recomputed {a}"),
                });
            }
        }
        Ok(())
    }
}
