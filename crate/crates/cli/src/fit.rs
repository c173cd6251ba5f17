//! `simulate` and `fit`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stable_gvar::driver::{Chain, ChainDiagnostics, ChainState, Phase};
use stable_gvar::io::{
    read_draws, read_series_csv, standardize, truncate_draws, write_datasets, write_json,
    ChainMeta, DrawWriter, ManifestRow, Standardization,
};
use stable_gvar::simulate::run_experiment_grid;
use stable_gvar::{ChainDraw, ModelSpec, TimeSeries};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const META_FILE: &str = "meta.json";
pub const RUN_FILE: &str = "run.json";
pub const STANDARDIZATION_FILE: &str = "standardization.json";

pub fn chain_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.ndjson"))
}

pub fn state_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("state_{chain}.json"))
}

/// Writes every dataset of the configured grid plus a manifest.
pub fn cmd_simulate(cfg: &Config, out: &Path) -> CliResult<Vec<ManifestRow>> {
    let datasets = run_experiment_grid(&cfg.simulate)?;
    Ok(write_datasets(out, &datasets)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub chain: usize,
    pub draws: usize,
    pub duration_secs: f64,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub data: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub standardized: bool,
    pub total_divergences: usize,
    pub duration_secs: f64,
    pub chains: Vec<ChainReport>,
    pub config: Config,
}

/// Reads the data and applies the configured standardisation.
pub fn load_data(cfg: &Config, data: &Path) -> CliResult<(TimeSeries, Option<Standardization>)> {
    let raw = read_series_csv(data).map_err(CliError::data)?;
    if cfg.model.standardize {
        let (y, st) = standardize(&raw).map_err(CliError::data)?;
        Ok((y, Some(st)))
    } else {
        Ok((raw, None))
    }
}

fn save_state(path: &Path, state: &ChainState) -> CliResult<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(
        &tmp,
        serde_json::to_vec(state).map_err(|e| CliError::Numerical(e.to_string()))?,
    )?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn run_chain(
    y: &TimeSeries,
    spec: &ModelSpec,
    cfg: &Config,
    out: &Path,
    chain: usize,
    resume: bool,
    checkpoint_every: u64,
) -> CliResult<ChainReport> {
    let start = Instant::now();
    let chain_path = chain_file(out, chain);
    let state_path = state_file(out, chain);
    let (mut c, mut writer) = if resume && state_path.exists() {
        let text = std::fs::read_to_string(&state_path)?;
        let state: ChainState = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", state_path.display())))?;
        let last = match state.phase {
            Phase::Sampling => state.iteration,
            Phase::Adapting { .. } => 0,
        };
        if chain_path.exists() {
            truncate_draws(&chain_path, last).map_err(CliError::data)?;
        } else {
            std::fs::File::create(&chain_path)?;
        }
        (
            Chain::resume(y, spec, &cfg.run, state)?,
            DrawWriter::append(&chain_path)?,
        )
    } else {
        (
            Chain::new(y, spec, &cfg.run, chain)?,
            DrawWriter::create(&chain_path)?,
        )
    };
    while !c.is_finished() {
        if let Some(draw) = c.step()? {
            writer.write(&draw)?;
        }
        let st = c.state();
        if matches!(st.phase, Phase::Sampling)
            && checkpoint_every > 0
            && st.iteration % checkpoint_every == 0
        {
            writer.flush()?;
            save_state(&state_path, st)?;
        }
    }
    writer.flush()?;
    save_state(&state_path, c.state())?;
    let diagnostics = c.state().diagnostics.clone();
    Ok(ChainReport {
        chain,
        draws: diagnostics.draws_emitted,
        duration_secs: start.elapsed().as_secs_f64(),
        diagnostics,
    })
}

/// Fits the model and writes one chain file per chain, a metadata sidecar,
/// per-chain checkpoints and a run record.
pub fn cmd_fit(
    cfg: &Config,
    data: &Path,
    out: &Path,
    resume: bool,
    checkpoint_every: u64,
) -> CliResult<RunMetadata> {
    cfg.validate()?;
    let start = Instant::now();
    let (y, st) = load_data(cfg, data)?;
    let spec = cfg.model.spec(y.m())?;
    y.check_order(spec.p).map_err(CliError::data)?;
    let config_hash = cfg.hash();
    std::fs::create_dir_all(out)?;
    if resume {
        let prev: RunMetadata = serde_json::from_slice(&std::fs::read(out.join(RUN_FILE))?)
            .map_err(|e| CliError::Data(format!("cannot read the run record to resume: {e}")))?;
        if prev.config_hash != config_hash {
            return Err(CliError::Config(
                "configuration differs from the run being resumed".into(),
            ));
        }
    }
    ChainMeta::new(spec.m, spec.p, y.names().to_vec(), spec.hyper.random_mu())
        .write(&out.join(META_FILE))?;
    if let Some(st) = &st {
        write_json(&out.join(STANDARDIZATION_FILE), st)?;
    }
    let mut meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        seed: cfg.run.seed,
        data: data.display().to_string(),
        n: y.n(),
        m: spec.m,
        p: spec.p,
        standardized: st.is_some(),
        total_divergences: 0,
        duration_secs: 0.0,
        chains: Vec::new(),
        config: cfg.clone(),
    };
    // Record the run before sampling so an interrupted fit can be resumed.
    write_json(&out.join(RUN_FILE), &meta)?;

    let reports: Vec<CliResult<ChainReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.run.n_chains)
            .map(|c| {
                let (y, spec) = (&y, &spec);
                scope.spawn(move || run_chain(y, spec, cfg, out, c, resume, checkpoint_every))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    meta.chains = reports.into_iter().collect::<CliResult<_>>()?;
    meta.total_divergences = meta.chains.iter().map(|c| c.diagnostics.divergences).sum();
    meta.duration_secs = start.elapsed().as_secs_f64();
    write_json(&out.join(RUN_FILE), &meta)?;
    Ok(meta)
}

/// Chain files of a fit directory, in chain order.
pub fn chain_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    while chain_file(dir, files.len()).exists() {
        files.push(chain_file(dir, files.len()));
    }
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no chain files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Metadata and per-chain draws of a fit directory.
pub fn load_chains(dir: &Path) -> CliResult<(ChainMeta, Vec<Vec<ChainDraw>>)> {
    let meta = ChainMeta::read(&dir.join(META_FILE)).map_err(CliError::data)?;
    let chains = chain_files(dir)?
        .iter()
        .map(|f| read_draws(f, &meta).map_err(CliError::data))
        .collect::<CliResult<Vec<_>>>()?;
    if chains.iter().all(Vec::is_empty) {
        return Err(CliError::Data(format!(
            "chain files in {} hold no draws",
            dir.display()
        )));
    }
    Ok((meta, chains))
}
