//! Chain persistence: a columnar CSV of retained draws (`chain, draw,
//! <parameters...>`) with a JSON sidecar carrying the state layout, the
//! training sites, the covariate transform, acceptance statistics, and the
//! dataset hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use esag::mcmc::{AcceptCount, ChainOutput, StateLayout};

use crate::config::Mode;
use crate::dataset::TransformRecord;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutMeta {
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub m_sites: usize,
    pub spatial: bool,
    pub baseline: Option<usize>,
}

impl From<&StateLayout> for LayoutMeta {
    fn from(l: &StateLayout) -> Self {
        Self { d: l.d, p: l.p, q: l.q, m_sites: l.m_sites, spatial: l.spatial, baseline: l.baseline }
    }
}

impl From<&LayoutMeta> for StateLayout {
    fn from(m: &LayoutMeta) -> Self {
        Self { d: m.d, p: m.p, q: m.q, m_sites: m.m_sites, spatial: m.spatial, baseline: m.baseline }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: usize,
    pub acceptance: std::collections::BTreeMap<String, (u64, u64)>,
    pub wall_seconds: f64,
    pub iterations_per_second: f64,
    pub mean_ess_iterations: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMeta {
    pub mode: Mode,
    pub spatial: bool,
    pub layout: LayoutMeta,
    pub sites: Vec<[f64; 2]>,
    pub transform: TransformRecord,
    pub dataset_hash: String,
    pub chains: Vec<ChainMeta>,
    pub mc_draws: usize,
    pub pred_mc_draws: usize,
}

/// Sidecar path: `<stem>.meta.json` next to the draws CSV.
pub fn meta_path(chain_csv: &Path) -> PathBuf {
    let stem = chain_csv.file_stem().and_then(|s| s.to_str()).unwrap_or("chains");
    chain_csv.with_file_name(format!("{stem}.meta.json"))
}

/// Writes the draws of all chains and the sidecar metadata.
pub fn write_chains(
    chain_csv: &Path,
    outputs: &[ChainOutput],
    meta: &FitMeta,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(chain_csv)
        .map_err(|e| CliError::Io(format!("cannot write chains {}: {e}", chain_csv.display())))?;
    let names = &outputs[0].names;
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(names.iter().cloned());
    writer.write_record(&header)?;
    for (ci, out) in outputs.iter().enumerate() {
        for (di, row) in out.draws.iter().enumerate() {
            let mut rec = Vec::with_capacity(row.len() + 2);
            rec.push(ci.to_string());
            rec.push(di.to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            writer.write_record(&rec)?;
        }
    }
    writer.flush()?;

    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(meta_path(chain_csv), json)?;
    Ok(())
}

/// Reads chains back: one `ChainOutput` per chain index, plus the metadata.
/// Acceptance counters and timing are restored from the sidecar.
pub fn read_chains(chain_csv: &Path) -> Result<(Vec<ChainOutput>, FitMeta)> {
    let meta_file = meta_path(chain_csv);
    let text = std::fs::read_to_string(&meta_file)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", meta_file.display())))?;
    let meta: FitMeta = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("invalid metadata {}: {e}", meta_file.display())))?;
    let layout = StateLayout::from(&meta.layout);
    let names = layout.names();

    let mut reader = csv::ReaderBuilder::new().from_path(chain_csv).map_err(|e| {
        CliError::Io(format!("cannot open chains {}: {e}", chain_csv.display()))
    })?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Io(format!("{}: {e}", chain_csv.display())))?
        .clone();
    if header.len() != names.len() + 2 {
        return Err(CliError::Io(format!(
            "{}: expected {} columns, found {}",
            chain_csv.display(),
            names.len() + 2,
            header.len()
        )));
    }

    let mut per_chain: Vec<Vec<Vec<f64>>> = vec![Vec::new(); meta.chains.len()];
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| CliError::Io(format!("line {line}: {e}")))?;
        let chain: usize = record[0]
            .parse()
            .map_err(|_| CliError::Io(format!("line {line}: bad chain index {:?}", &record[0])))?;
        if chain >= per_chain.len() {
            return Err(CliError::Io(format!(
                "line {line}: chain index {chain} out of range ({} chains)",
                per_chain.len()
            )));
        }
        let mut row = Vec::with_capacity(names.len());
        for v in record.iter().skip(2) {
            row.push(v.parse::<f64>().map_err(|_| {
                CliError::Io(format!("line {line}: cannot parse draw value {v:?}"))
            })?);
        }
        per_chain[chain].push(row);
    }

    let mut outputs = Vec::with_capacity(per_chain.len());
    for (ci, draws) in per_chain.into_iter().enumerate() {
        let cm = &meta.chains[ci];
        if draws.len() != cm.draws {
            return Err(CliError::Io(format!(
                "chain {ci}: metadata promises {} draws, file holds {}",
                cm.draws,
                draws.len()
            )));
        }
        let acceptance = cm
            .acceptance
            .iter()
            .map(|(k, (a, p))| (k.clone(), AcceptCount { accepted: *a, proposed: *p }))
            .collect();
        outputs.push(ChainOutput {
            layout: layout.clone(),
            names: names.clone(),
            draws,
            acceptance,
            ess_evaluations: 0,
            eta_updates: 0,
            iterations: cm.iterations,
            burn_in: cm.burn_in,
            thin: cm.thin,
            seed: cm.seed,
            wall_seconds: cm.wall_seconds,
            iterations_per_second: cm.iterations_per_second,
        });
    }
    Ok((outputs, meta))
}
