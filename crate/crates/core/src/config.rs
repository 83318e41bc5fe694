//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Every key is
//! optional; [`SimConfig::echo`] prints the full resolved configuration in a
//! form that parses back to the same value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{ConfigError, Result};
use crate::scenario::{DensityBand, Layout};

/// Which of the four service architectures a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Technology {
    /// RSU serves safety and video.
    Rsu,
    /// RSU service, low-SINR video vehicles relayed.
    RsuRelay,
    /// Network slicing: APs carry safety on the V2V band.
    Ns,
    /// Network slicing plus relaying.
    NsRelay,
}

impl Technology {
    pub const ALL: [Technology; 4] = [Technology::Rsu, Technology::RsuRelay, Technology::Ns, Technology::NsRelay];

    pub fn label(self) -> &'static str {
        match self {
            Technology::Rsu => "rsu",
            Technology::RsuRelay => "rsu_relay",
            Technology::Ns => "ns",
            Technology::NsRelay => "ns_relay",
        }
    }

    pub fn slicing(self) -> bool {
        matches!(self, Technology::Ns | Technology::NsRelay)
    }

    pub fn relaying(self) -> bool {
        matches!(self, Technology::RsuRelay | Technology::NsRelay)
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Technology {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Technology::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| format!("expected one of rsu, rsu_relay, ns, ns_relay, got `{s}`"))
    }
}

/// Where a data table comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Bundled,
    File(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Bundled => f.write_str("bundled"),
            DataSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Fully resolved simulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub scenario: u8,
    pub technology: Technology,
    pub sigma_m: f64,
    pub highway_length_m: f64,
    pub gap_min_m: f64,
    pub gap_max_m: f64,
    pub duration_ms: u64,
    pub tti_ms: u64,
    pub reslice_period_ms: u64,
    pub speed_kmh: f64,
    pub lane_width_m: f64,
    pub rsu_spacing_m: f64,
    pub rsu_offset_m: f64,
    pub video_fraction: f64,
    pub v2i_tx_power_dbm: f64,
    pub v2v_tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub v2i_pl_intercept_db: f64,
    pub v2i_pl_slope_db: f64,
    pub v2v_pl_intercept_db: f64,
    pub v2v_pl_slope_db: f64,
    pub prb_count: usize,
    pub coherence_ttis: u32,
    pub cqi_backoff_db: f64,
    pub ap_threshold_db: f64,
    pub e_max_cap: usize,
    pub kmeans_restarts: usize,
    pub low_sinr_threshold_db: f64,
    pub relay_max_distance_m: f64,
    pub relay_max_clients: usize,
    pub relay_kappa_db_per_m: f64,
    pub pf_alpha: f64,
    pub tb_overhead: f64,
    pub harq_max_attempts: u8,
    pub harq_rtt_ttis: u64,
    pub bler_slope_per_db: f64,
    pub safety_packet_bits: u32,
    pub safety_period_ms: u64,
    pub safety_deadline_ms: u64,
    pub video_packet_bits: u32,
    pub video_period_ms: u64,
    /// Count a safety packet in the PRR only when its receiver lies within
    /// this distance of the serving transmitter; `None` counts every packet.
    pub locality_radius_m: Option<f64>,
    /// Safety packets arriving before this time are left out of the PRR.
    pub prr_warmup_ms: u64,
    pub mcs_table: DataSource,
    pub mi_curves: DataSource,
    /// Expected SHA-256 (hex) of the MCS table; `None` skips the check.
    pub mcs_table_sha256: Option<String>,
    pub mi_curves_sha256: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            scenario: 1,
            technology: Technology::Ns,
            sigma_m: 5.0,
            highway_length_m: 2000.0,
            gap_min_m: DensityBand::DENSE.min,
            gap_max_m: DensityBand::DENSE.max,
            duration_ms: 10_000,
            tti_ms: 1,
            reslice_period_ms: 100,
            speed_kmh: 140.0,
            lane_width_m: 4.0,
            rsu_spacing_m: 1732.0,
            rsu_offset_m: 35.0,
            video_fraction: 0.5,
            v2i_tx_power_dbm: 46.0,
            v2v_tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            v2i_pl_intercept_db: 100.7,
            v2i_pl_slope_db: 23.5,
            v2v_pl_intercept_db: 63.3,
            v2v_pl_slope_db: 20.0,
            prb_count: 50,
            coherence_ttis: 1,
            cqi_backoff_db: 0.0,
            ap_threshold_db: 3.0,
            e_max_cap: 256,
            kmeans_restarts: 10,
            low_sinr_threshold_db: 3.0,
            relay_max_distance_m: 150.0,
            relay_max_clients: 4,
            relay_kappa_db_per_m: 0.1,
            pf_alpha: 0.01,
            tb_overhead: 0.25,
            harq_max_attempts: 4,
            harq_rtt_ttis: 8,
            bler_slope_per_db: 2.0,
            safety_packet_bits: 12_800,
            safety_period_ms: 100,
            safety_deadline_ms: 100,
            video_packet_bits: 1000,
            video_period_ms: 1,
            locality_radius_m: None,
            prr_warmup_ms: 0,
            mcs_table: DataSource::Bundled,
            mi_curves: DataSource::Bundled,
            mcs_table_sha256: None,
            mi_curves_sha256: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// One entry per accepted key: how to set it and how to print it.
macro_rules! config_keys {
    ($($key:literal => $field:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$($key),*];

        impl SimConfig {
            fn set_plain(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
                match key {
                    $($key => self.$field = parse_value(key, value)?,)*
                    _ => return Ok(false),
                }
                Ok(true)
            }

            fn plain_entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$field.to_string())),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed,
    "scenario" => scenario,
    "technology" => technology,
    "sigma_m" => sigma_m,
    "highway_length_m" => highway_length_m,
    "gap_min_m" => gap_min_m,
    "gap_max_m" => gap_max_m,
    "duration_ms" => duration_ms,
    "tti_ms" => tti_ms,
    "reslice_period_ms" => reslice_period_ms,
    "speed_kmh" => speed_kmh,
    "lane_width_m" => lane_width_m,
    "rsu_spacing_m" => rsu_spacing_m,
    "rsu_offset_m" => rsu_offset_m,
    "video_fraction" => video_fraction,
    "v2i_tx_power_dbm" => v2i_tx_power_dbm,
    "v2v_tx_power_dbm" => v2v_tx_power_dbm,
    "noise_psd_dbm_hz" => noise_psd_dbm_hz,
    "noise_figure_db" => noise_figure_db,
    "v2i_pl_intercept_db" => v2i_pl_intercept_db,
    "v2i_pl_slope_db" => v2i_pl_slope_db,
    "v2v_pl_intercept_db" => v2v_pl_intercept_db,
    "v2v_pl_slope_db" => v2v_pl_slope_db,
    "prb_count" => prb_count,
    "coherence_ttis" => coherence_ttis,
    "cqi_backoff_db" => cqi_backoff_db,
    "ap_threshold_db" => ap_threshold_db,
    "e_max_cap" => e_max_cap,
    "kmeans_restarts" => kmeans_restarts,
    "low_sinr_threshold_db" => low_sinr_threshold_db,
    "relay_max_distance_m" => relay_max_distance_m,
    "relay_max_clients" => relay_max_clients,
    "relay_kappa_db_per_m" => relay_kappa_db_per_m,
    "pf_alpha" => pf_alpha,
    "tb_overhead" => tb_overhead,
    "harq_max_attempts" => harq_max_attempts,
    "harq_rtt_ttis" => harq_rtt_ttis,
    "bler_slope_per_db" => bler_slope_per_db,
    "safety_packet_bits" => safety_packet_bits,
    "safety_period_ms" => safety_period_ms,
    "safety_deadline_ms" => safety_deadline_ms,
    "video_packet_bits" => video_packet_bits,
    "video_period_ms" => video_period_ms,
    "prr_warmup_ms" => prr_warmup_ms,
}

const SPECIAL_KEYS: &[&str] = &[
    "locality_radius_m",
    "mcs_table",
    "mi_curves",
    "mcs_table_sha256",
    "mi_curves_sha256",
];

impl SimConfig {
    /// Parse and validate config text. Gap bounds default to the band of
    /// the chosen scenario unless set explicitly.
    pub fn parse(text: &str) -> Result<SimConfig> {
        let mut config = SimConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: line.to_string(),
                }
                .into());
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: line.to_string(),
                }
                .into());
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey(key.to_string()).into());
            }
            seen.push(key.to_string());
            config.set(key, value)?;
        }
        if let Some(band) = DensityBand::scenario(config.scenario) {
            if !seen.iter().any(|k| k == "gap_min_m") {
                config.gap_min_m = band.min;
            }
            if !seen.iter().any(|k| k == "gap_max_m") {
                config.gap_max_m = band.max;
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Read and parse a config file.
    pub fn from_path(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        SimConfig::parse(&text)
    }

    /// Set one key from its textual value (no validation across keys).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if self.set_plain(key, value)? {
            return Ok(());
        }
        match key {
            "locality_radius_m" => {
                self.locality_radius_m = match value {
                    "off" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "mcs_table" => self.mcs_table = data_source(value),
            "mi_curves" => self.mi_curves = data_source(value),
            "mcs_table_sha256" => self.mcs_table_sha256 = expected_hash(key, value)?,
            "mi_curves_sha256" => self.mi_curves_sha256 = expected_hash(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Switch to a numbered density scenario, resetting the gap band.
    pub fn set_scenario(&mut self, scenario: u8) -> Result<(), ConfigError> {
        let band = DensityBand::scenario(scenario).ok_or_else(|| invalid("scenario", "must be 1, 2 or 3"))?;
        self.scenario = scenario;
        self.gap_min_m = band.min;
        self.gap_max_m = band.max;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive and finite, got {v}")))
            }
        };
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, "must be finite"))
            }
        };
        if DensityBand::scenario(self.scenario).is_none() {
            return Err(invalid("scenario", "must be 1, 2 or 3"));
        }
        positive("sigma_m", self.sigma_m)?;
        positive("highway_length_m", self.highway_length_m)?;
        positive("gap_min_m", self.gap_min_m)?;
        positive("gap_max_m", self.gap_max_m)?;
        if self.gap_min_m >= self.gap_max_m {
            return Err(invalid("gap_min_m", "must be below gap_max_m"));
        }
        if self.highway_length_m < self.gap_max_m {
            return Err(invalid("highway_length_m", "shorter than one inter-vehicle gap"));
        }
        if self.tti_ms != 1 {
            return Err(invalid("tti_ms", "only 1 ms TTIs are supported"));
        }
        if self.reslice_period_ms == 0 {
            return Err(invalid("reslice_period_ms", "must be positive"));
        }
        if self.duration_ms == 0 || self.duration_ms % self.reslice_period_ms != 0 {
            return Err(invalid(
                "duration_ms",
                format!("must be a positive multiple of reslice_period_ms ({})", self.reslice_period_ms),
            ));
        }
        if !(self.speed_kmh.is_finite() && self.speed_kmh >= 0.0) {
            return Err(invalid("speed_kmh", "must be non-negative"));
        }
        positive("lane_width_m", self.lane_width_m)?;
        positive("rsu_spacing_m", self.rsu_spacing_m)?;
        finite("rsu_offset_m", self.rsu_offset_m)?;
        if !(self.video_fraction > 0.0 && self.video_fraction <= 1.0) {
            return Err(invalid("video_fraction", "must lie in (0, 1]"));
        }
        for (key, v) in [
            ("v2i_tx_power_dbm", self.v2i_tx_power_dbm),
            ("v2v_tx_power_dbm", self.v2v_tx_power_dbm),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("noise_figure_db", self.noise_figure_db),
            ("v2i_pl_intercept_db", self.v2i_pl_intercept_db),
            ("v2v_pl_intercept_db", self.v2v_pl_intercept_db),
            ("cqi_backoff_db", self.cqi_backoff_db),
            ("ap_threshold_db", self.ap_threshold_db),
            ("low_sinr_threshold_db", self.low_sinr_threshold_db),
        ] {
            finite(key, v)?;
        }
        positive("v2i_pl_slope_db", self.v2i_pl_slope_db)?;
        positive("v2v_pl_slope_db", self.v2v_pl_slope_db)?;
        if self.prb_count == 0 {
            return Err(invalid("prb_count", "must be positive"));
        }
        if self.coherence_ttis == 0 {
            return Err(invalid("coherence_ttis", "must be positive"));
        }
        if self.e_max_cap == 0 {
            return Err(invalid("e_max_cap", "must be positive"));
        }
        if self.kmeans_restarts == 0 {
            return Err(invalid("kmeans_restarts", "must be positive"));
        }
        positive("relay_max_distance_m", self.relay_max_distance_m)?;
        if self.relay_max_clients == 0 {
            return Err(invalid("relay_max_clients", "must be positive"));
        }
        if !(self.relay_kappa_db_per_m.is_finite() && self.relay_kappa_db_per_m >= 0.0) {
            return Err(invalid("relay_kappa_db_per_m", "must be non-negative"));
        }
        if !(self.pf_alpha > 0.0 && self.pf_alpha <= 1.0) {
            return Err(invalid("pf_alpha", "must lie in (0, 1]"));
        }
        if !(self.tb_overhead >= 0.0 && self.tb_overhead < 1.0) {
            return Err(invalid("tb_overhead", "must lie in [0, 1)"));
        }
        if self.harq_max_attempts == 0 {
            return Err(invalid("harq_max_attempts", "must be at least 1"));
        }
        if self.harq_rtt_ttis == 0 {
            return Err(invalid("harq_rtt_ttis", "must be positive"));
        }
        positive("bler_slope_per_db", self.bler_slope_per_db)?;
        if self.safety_packet_bits == 0 || self.video_packet_bits == 0 {
            return Err(invalid("safety_packet_bits", "packet sizes must be positive"));
        }
        if self.safety_period_ms == 0 || self.video_period_ms == 0 {
            return Err(invalid("safety_period_ms", "traffic periods must be positive"));
        }
        if self.safety_deadline_ms == 0 {
            return Err(invalid("safety_deadline_ms", "must be positive"));
        }
        if let Some(r) = self.locality_radius_m {
            positive("locality_radius_m", r)?;
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = self.plain_entries();
        out.push((
            "locality_radius_m",
            self.locality_radius_m.map_or_else(|| "off".to_string(), |r| r.to_string()),
        ));
        out.push(("mcs_table", self.mcs_table.to_string()));
        out.push(("mi_curves", self.mi_curves.to_string()));
        let hash = |h: &Option<String>| h.clone().unwrap_or_else(|| "unchecked".to_string());
        out.push(("mcs_table_sha256", hash(&self.mcs_table_sha256)));
        out.push(("mi_curves_sha256", hash(&self.mi_curves_sha256)));
        out
    }

    /// The resolved configuration as parseable config text.
    pub fn echo(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// All accepted keys.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().chain(SPECIAL_KEYS).copied()
    }

    pub fn layout(&self) -> Layout {
        Layout {
            highway_length: self.highway_length_m,
            band: DensityBand {
                min: self.gap_min_m,
                max: self.gap_max_m,
            },
            lane_width: self.lane_width_m,
            rsu_spacing: self.rsu_spacing_m,
            rsu_offset: self.rsu_offset_m,
            speed_kmh: self.speed_kmh,
            video_fraction: self.video_fraction,
        }
    }

    /// Thermal noise per PRB, in milliwatts.
    pub fn noise_power_mw(&self) -> f64 {
        crate::channel::noise_power_mw(self.noise_psd_dbm_hz, self.noise_figure_db, crate::channel::PRB_BANDWIDTH_HZ)
    }
}

fn data_source(value: &str) -> DataSource {
    if value == "bundled" {
        DataSource::Bundled
    } else {
        DataSource::File(PathBuf::from(value))
    }
}

fn expected_hash(key: &str, value: &str) -> Result<Option<String>, ConfigError> {
    if value == "unchecked" {
        return Ok(None);
    }
    let hex = value.to_ascii_lowercase();
    if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected 64 hex digits or `unchecked`".to_string(),
        });
    }
    Ok(Some(hex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn config_err(text: &str) -> ConfigError {
        match SimConfig::parse(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = SimConfig::parse("seed = 7\nscenario = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!((c.gap_min_m, c.gap_max_m), (200.0, 300.0));
        assert_eq!(c.v2i_tx_power_dbm, 46.0);
        assert_eq!(c.v2v_tx_power_dbm, 20.0);
        assert_eq!(c.prb_count, 50);
        assert_eq!(c.reslice_period_ms, 100);
        assert_eq!(c.duration_ms, 10_000);
        assert_eq!(c.highway_length_m, 2000.0);
        assert_eq!(c.rsu_spacing_m, 1732.0);
        assert_eq!(c.speed_kmh, 140.0);
    }

    #[test]
    fn rejects_bad_files() {
        assert_eq!(config_err("bogus = 1"), ConfigError::UnknownKey("bogus".into()));
        assert_eq!(config_err("seed = 1\nseed = 2"), ConfigError::DuplicateKey("seed".into()));
        assert!(matches!(config_err("duration_ms = 150"), ConfigError::Invalid { key, .. } if key == "duration_ms"));
        assert!(matches!(config_err("seed = x"), ConfigError::BadValue { key, .. } if key == "seed"));
        assert!(matches!(config_err("technology = wifi"), ConfigError::BadValue { key, .. } if key == "technology"));
        assert!(matches!(config_err("just words"), ConfigError::Syntax { line: 1, .. }));
        assert!(matches!(config_err("scenario = 4"), ConfigError::Invalid { key, .. } if key == "scenario"));
    }

    #[test]
    fn echo_round_trips() {
        let c = SimConfig::parse(&format!(
            "technology = ns_relay\nsigma_m = 50\nlocality_radius_m = 120\n# note\nmi_curves_sha256 = {}\n",
            "AB".repeat(32)
        ))
        .unwrap();
        let again = SimConfig::parse(&c.echo()).unwrap();
        assert_eq!(c, again);
        assert_eq!(SimConfig::keys().count(), c.entries().len());
    }

    #[test]
    fn technology_flags() {
        assert!(!Technology::Rsu.slicing() && !Technology::Rsu.relaying());
        assert!(Technology::NsRelay.slicing() && Technology::NsRelay.relaying());
        assert_eq!("rsu_relay".parse::<Technology>(), Ok(Technology::RsuRelay));
    }
}
