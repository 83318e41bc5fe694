//! Running configured experiments and writing their result files.
//!
//! A run or matrix produces `prr_table.csv`, `throughput_cdf_safety.csv`,
//! `throughput_cdf_video.csv`, `summary.csv` and `run_meta.txt`; traced
//! single runs add `trace_*.csv`. CSVs depend only on (config, seeds).

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::config::{DataSource, SimConfig, Technology};
use crate::error::{Error, Result};
use crate::link::mcs::bundled_mcs_table_text;
use crate::link::mutual_info::bundled_mi_curves_text;
use crate::link::{BlerModel, LinkAbstraction, McsTable, MiCurves};
use crate::mac::TrafficKind;
use crate::metrics::{default_grid, fmt_g6, RunMetrics};
use crate::sim::{simulate, RunStats, Trace};

/// Target rates reported in `summary.csv`, in kbit/s.
pub const SAFETY_TARGET_KBPS: f64 = 128.0;
pub const VIDEO_TARGET_KBPS: f64 = 1000.0;

/// Every file name a run may write.
pub const OUTPUT_FILES: &[&str] = &[
    "prr_table.csv",
    "throughput_cdf_safety.csv",
    "throughput_cdf_video.csv",
    "summary.csv",
    "run_meta.txt",
    "trace_scenario.csv",
    "trace_sinr.csv",
    "trace_plans.csv",
    "trace_relays.csv",
    "trace_deliveries.csv",
];

/// Provenance of one data table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataHash {
    pub name: &'static str,
    pub source: String,
    pub sha256: String,
}

/// Link tables resolved from a config, with their hashes.
#[derive(Debug, Clone)]
pub struct LoadedTables {
    pub link: LinkAbstraction,
    pub hashes: Vec<DataHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_source(name: &'static str, source: &DataSource, bundled: &'static str, expected: Option<&str>) -> Result<(String, DataHash)> {
    let text = match source {
        DataSource::Bundled => bundled.to_string(),
        DataSource::File(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
    };
    let sha256 = sha256_hex(text.as_bytes());
    if let Some(want) = expected {
        if want != sha256 {
            return Err(Error::DataFile {
                name: name.to_string(),
                reason: format!("sha256 {sha256} does not match the expected {want}"),
            });
        }
    }
    let hash = DataHash {
        name,
        source: source.to_string(),
        sha256,
    };
    Ok((text, hash))
}

/// Load and hash-check the MCS table and MI curves named by `config`.
pub fn load_tables(config: &SimConfig) -> Result<LoadedTables> {
    let (mcs_text, mcs_hash) = read_source(
        "mcs_table",
        &config.mcs_table,
        bundled_mcs_table_text(),
        config.mcs_table_sha256.as_deref(),
    )?;
    let (mi_text, mi_hash) = read_source(
        "mi_curves",
        &config.mi_curves,
        bundled_mi_curves_text(),
        config.mi_curves_sha256.as_deref(),
    )?;
    let link = LinkAbstraction {
        mcs: McsTable::parse(&mcs_text)?,
        curves: MiCurves::parse(&mi_text)?,
        bler: BlerModel {
            slope_per_db: config.bler_slope_per_db,
        },
    };
    Ok(LoadedTables {
        link,
        hashes: vec![mcs_hash, mi_hash],
    })
}

/// One row of the result tables. Direct-RSU technologies ignore sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub scenario: u8,
    pub technology: Technology,
    pub sigma_m: Option<f64>,
}

impl CellKey {
    fn sigma_label(&self) -> String {
        self.sigma_m.map_or_else(|| "-".to_string(), fmt_g6)
    }

    fn csv_prefix(&self) -> String {
        format!("{},{},{}", self.scenario, self.technology, self.sigma_label())
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario {} / {} / sigma {}", self.scenario, self.technology, self.sigma_label())
    }
}

/// Axes of an experiment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSpec {
    pub scenarios: Vec<u8>,
    pub technologies: Vec<Technology>,
    pub sigmas_m: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl MatrixSpec {
    /// Cells in output order: scenario, then technology, then sigma.
    pub fn cells(&self) -> Result<Vec<CellKey>> {
        for (axis, empty) in [
            ("scenarios", self.scenarios.is_empty()),
            ("technologies", self.technologies.is_empty()),
            ("sigmas", self.sigmas_m.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidArgument(format!("matrix axis `{axis}` is empty")));
            }
        }
        let mut cells = Vec::new();
        for &scenario in &self.scenarios {
            for &technology in &self.technologies {
                if technology.slicing() {
                    for &s in &self.sigmas_m {
                        cells.push(CellKey {
                            scenario,
                            technology,
                            sigma_m: Some(s),
                        });
                    }
                } else {
                    cells.push(CellKey {
                        scenario,
                        technology,
                        sigma_m: None,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// Merged metrics of every seed of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub metrics: RunMetrics,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub base: SimConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub hashes: Vec<DataHash>,
    pub wall_time: Duration,
    /// Present only for traced single runs.
    pub trace: Option<Trace>,
}

impl MatrixResult {
    pub fn cell(&self, scenario: u8, technology: Technology, sigma_m: Option<f64>) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.key.scenario == scenario && c.key.technology == technology && (!technology.slicing() || c.key.sigma_m == sigma_m)
        })
    }
}

/// The config of one (cell, seed) run.
pub fn cell_config(base: &SimConfig, key: &CellKey, seed: u64) -> Result<SimConfig> {
    let mut c = base.clone();
    c.set_scenario(key.scenario)?;
    c.technology = key.technology;
    if let Some(s) = key.sigma_m {
        c.sigma_m = s;
    }
    c.seed = seed;
    c.validate()?;
    Ok(c)
}

fn cell_error(key: &CellKey, seed: u64, source: Error) -> Error {
    Error::Cell {
        cell: format!("{key}, seed {seed}"),
        source: Box::new(source),
    }
}

/// Run every (cell, seed) pair, spreading work over the available cores.
/// Results are merged in seed order, so output does not depend on timing.
pub fn run_matrix(base: &SimConfig, spec: &MatrixSpec, tables: &LoadedTables) -> Result<MatrixResult> {
    let start = std::time::Instant::now();
    let cells = spec.cells()?;
    let mut jobs = Vec::new();
    for (ci, key) in cells.iter().enumerate() {
        for &seed in &spec.seeds {
            jobs.push((ci, seed, cell_config(base, key, seed)?));
        }
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut outcomes: Vec<Option<Result<(RunMetrics, RunStats)>>> = (0..jobs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut outcomes);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((ci, seed, config)) = jobs.get(i) else { break };
                let out = simulate(config, &tables.link, false)
                    .map(|o| (o.metrics, o.stats))
                    .map_err(|e| cell_error(&cells[*ci], *seed, e));
                let failed = out.is_err();
                results.lock().expect("no worker panicked")[i] = Some(out);
                if failed {
                    // Later jobs are pointless once one cell has failed.
                    next.store(jobs.len(), std::sync::atomic::Ordering::Relaxed);
                }
            });
        }
    });

    let mut merged: Vec<Option<(RunMetrics, RunStats)>> = (0..cells.len()).map(|_| None).collect();
    for ((ci, _, _), out) in jobs.iter().zip(outcomes) {
        let Some(out) = out else { continue };
        let (metrics, stats) = out?;
        match &mut merged[*ci] {
            Some((m, s)) => {
                m.merge(metrics);
                s.add(&stats);
            }
            slot @ None => *slot = Some((metrics, stats)),
        }
    }
    let cells = cells
        .into_iter()
        .zip(merged)
        .map(|(key, m)| {
            let (metrics, stats) = m.expect("every job ran when none failed");
            CellResult { key, metrics, stats }
        })
        .collect();
    Ok(MatrixResult {
        base: base.clone(),
        seeds: spec.seeds.clone(),
        cells,
        hashes: tables.hashes.clone(),
        wall_time: start.elapsed(),
        trace: None,
    })
}

/// A single run of `config` as a one-cell matrix.
pub fn run_single(config: &SimConfig, tables: &LoadedTables, trace: bool) -> Result<MatrixResult> {
    let start = std::time::Instant::now();
    let key = CellKey {
        scenario: config.scenario,
        technology: config.technology,
        sigma_m: config.technology.slicing().then_some(config.sigma_m),
    };
    let out = simulate(config, &tables.link, trace).map_err(|e| cell_error(&key, config.seed, e))?;
    Ok(MatrixResult {
        base: config.clone(),
        seeds: vec![config.seed],
        cells: vec![CellResult {
            key,
            metrics: out.metrics,
            stats: out.stats,
        }],
        hashes: tables.hashes.clone(),
        wall_time: start.elapsed(),
        trace: out.trace,
    })
}

pub fn prr_table_csv(result: &MatrixResult) -> String {
    let mut out = String::from("scenario,technology,sigma,prr\n");
    for c in &result.cells {
        let prr = c.metrics.safety_prr().map_or_else(|| "nan".to_string(), fmt_g6);
        let _ = writeln!(out, "{},{prr}", c.key.csv_prefix());
    }
    out
}

pub fn throughput_cdf_csv(result: &MatrixResult, kind: TrafficKind) -> String {
    let grid = default_grid();
    let mut out = String::from("scenario,technology,sigma,kbps,cdf\n");
    for c in &result.cells {
        let cdf = c.metrics.cdf(kind, &grid);
        let prefix = c.key.csv_prefix();
        for (x, y) in cdf.grid_kbps.iter().zip(&cdf.cdf) {
            let _ = writeln!(out, "{prefix},{},{}", fmt_g6(*x), fmt_g6(*y));
        }
    }
    out
}

pub fn summary_csv(result: &MatrixResult) -> String {
    let mut out = String::from("scenario,technology,sigma,slice,target_kbps,vehicles,probability,median_aps\n");
    for c in &result.cells {
        let aps = c.metrics.median_ap_count().map_or_else(|| "-".to_string(), fmt_g6);
        for (kind, target, n) in [
            (TrafficKind::Safety, SAFETY_TARGET_KBPS, c.metrics.safety_rates_kbps.len()),
            (TrafficKind::Video, VIDEO_TARGET_KBPS, c.metrics.video_rates_kbps.len()),
        ] {
            let p = if n == 0 {
                "nan".to_string()
            } else {
                fmt_g6(c.metrics.target_probability(kind, target))
            };
            let _ = writeln!(
                out,
                "{},{},{},{n},{p},{aps}",
                c.key.csv_prefix(),
                kind.label(),
                fmt_g6(target)
            );
        }
    }
    out
}

pub fn run_meta(result: &MatrixResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# v2xsim {}", env!("CARGO_PKG_VERSION"));
    let seeds: Vec<String> = result.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "# seeds: {}", seeds.join(","));
    for h in &result.hashes {
        let _ = writeln!(out, "# data {}: {} sha256={}", h.name, h.source, h.sha256);
    }
    let _ = writeln!(out, "# wall_time_s: {:.3}", result.wall_time.as_secs_f64());
    for c in &result.cells {
        let s = &c.stats;
        let _ = writeln!(
            out,
            "# cell {}: runs={} vehicles={} video_vehicles={} transport_blocks={} first_tx_nacks={} harq_exhausted={} relayed_clients={} delivered_bits={} ledger_balanced={}",
            c.key,
            c.metrics.runs,
            s.vehicles,
            s.video_vehicles,
            s.transport_blocks,
            s.first_transmission_nacks,
            s.harq_exhausted,
            s.relayed_clients,
            s.delivered_bits,
            c.metrics.ledger_balanced
        );
    }
    out.push_str("# resolved base config\n");
    out.push_str(&result.base.echo());
    out
}

/// Every output file of `result`, by name.
pub fn render(result: &MatrixResult) -> Vec<(&'static str, String)> {
    let mut files = vec![
        ("prr_table.csv", prr_table_csv(result)),
        ("throughput_cdf_safety.csv", throughput_cdf_csv(result, TrafficKind::Safety)),
        ("throughput_cdf_video.csv", throughput_cdf_csv(result, TrafficKind::Video)),
        ("summary.csv", summary_csv(result)),
        ("run_meta.txt", run_meta(result)),
    ];
    if let Some(t) = &result.trace {
        files.push(("trace_scenario.csv", t.scenario.clone()));
        files.push(("trace_sinr.csv", t.sinr.clone()));
        if let Some(p) = &t.plans {
            files.push(("trace_plans.csv", p.clone()));
        }
        if let Some(r) = &t.relays {
            files.push(("trace_relays.csv", r.clone()));
        }
        files.push(("trace_deliveries.csv", t.deliveries.clone()));
    }
    files
}

/// Write all outputs into `dir`, creating it if needed. On failure nothing
/// written by this call is left behind.
pub fn write_outputs(dir: &Path, result: &MatrixResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, text) in render(result) {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, text) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(Error::io(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Remove any output a previous or partial run left in `dir`.
pub fn remove_outputs(dir: &Path) {
    for name in OUTPUT_FILES {
        let _ = std::fs::remove_file(dir.join(name));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_hash_and_check() {
        let mut c = SimConfig::default();
        let t = load_tables(&c).unwrap();
        assert_eq!(t.hashes.len(), 2);
        assert_eq!(t.hashes[0].sha256, sha256_hex(bundled_mcs_table_text().as_bytes()));
        c.mcs_table_sha256 = Some(t.hashes[0].sha256.clone());
        assert!(load_tables(&c).is_ok());
        c.mi_curves_sha256 = Some("0".repeat(64));
        assert!(matches!(load_tables(&c), Err(Error::DataFile { .. })));
    }

    #[test]
    fn missing_data_file_is_io_error() {
        let c = SimConfig {
            mi_curves: DataSource::File("/nonexistent/mi.csv".into()),
            ..SimConfig::default()
        };
        assert!(matches!(load_tables(&c), Err(Error::Io { .. })));
    }

    #[test]
    fn matrix_cells_follow_table_rows() {
        let spec = MatrixSpec {
            scenarios: vec![1, 2, 3],
            technologies: vec![Technology::Rsu, Technology::Ns],
            sigmas_m: vec![5.0, 50.0],
            seeds: vec![1],
        };
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[0].sigma_m, None);
        assert_eq!(cells[2].sigma_m, Some(50.0));
        let empty = MatrixSpec {
            technologies: vec![],
            ..spec
        };
        assert!(matches!(empty.cells(), Err(Error::InvalidArgument(_))));
    }
}
