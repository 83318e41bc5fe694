//! MCS table, logistic BLER curves and CQI-driven MCS selection.

use std::fmt::Write as _;

use super::mutual_info::Modulation;
use crate::error::{Error, Result};

pub const MCS_TABLE_HEADER: &str = "# v2xsim mcs-table v1";

/// BLER targeted by link adaptation.
pub const TARGET_BLER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct McsEntry {
    pub index: u8,
    pub modulation: Modulation,
    pub code_rate: f64,
    /// Information bits per modulation symbol.
    pub spectral_efficiency: f64,
    /// SINR at which the reference curve crosses 10% BLER.
    pub bler_ref_sinr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

/// LTE-A CQI spectral efficiencies.
const EFFICIENCIES: [f64; 15] = [
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152,
    5.5547,
];

impl McsTable {
    /// Default 15-entry table: references start at -6.5 dB, 1.9 dB apart.
    pub fn standard() -> McsTable {
        let entries = EFFICIENCIES
            .iter()
            .enumerate()
            .map(|(i, &eff)| {
                let modulation = match i {
                    0..=5 => Modulation::Qpsk,
                    6..=8 => Modulation::Qam16,
                    _ => Modulation::Qam64,
                };
                McsEntry {
                    index: i as u8,
                    modulation,
                    code_rate: eff / f64::from(modulation.order()),
                    spectral_efficiency: eff,
                    bler_ref_sinr_db: -6.5 + 1.9 * i as f64,
                }
            })
            .collect();
        McsTable { entries }
    }

    pub fn bundled() -> McsTable {
        McsTable::parse(BUNDLED_MCS_TABLE).expect("bundled MCS table is valid")
    }

    pub fn new(entries: Vec<McsEntry>) -> Result<McsTable> {
        let fail = |reason: &str| {
            Err(Error::DataFile {
                name: "mcs table".into(),
                reason: reason.into(),
            })
        };
        if entries.is_empty() {
            return fail("table is empty");
        }
        if entries.iter().enumerate().any(|(i, e)| usize::from(e.index) != i) {
            return fail("indices must run 0, 1, 2, ...");
        }
        if entries
            .windows(2)
            .any(|w| w[1].spectral_efficiency <= w[0].spectral_efficiency || w[1].bler_ref_sinr_db <= w[0].bler_ref_sinr_db)
        {
            return fail("efficiency and reference SINR must strictly increase with index");
        }
        if entries.iter().any(|e| !(e.code_rate > 0.0 && e.code_rate < 1.0)) {
            return fail("code rates must lie in (0, 1)");
        }
        Ok(McsTable { entries })
    }

    pub fn parse(text: &str) -> Result<McsTable> {
        let fail = |reason: String| Error::DataFile {
            name: "mcs table".into(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(MCS_TABLE_HEADER) {
            return Err(fail(format!("missing `{MCS_TABLE_HEADER}` header")));
        }
        if lines.next().map(str::trim) != Some("index,modulation_order,code_rate,spectral_efficiency,bler_ref_sinr_db") {
            return Err(fail("bad column header".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(fail(format!("row {}: expected 5 fields", n + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| fail(format!("row {}: {e}", n + 1)));
            let index = f[0].parse::<u8>().map_err(|e| fail(format!("row {}: {e}", n + 1)))?;
            let order = f[1].parse::<u32>().map_err(|e| fail(format!("row {}: {e}", n + 1)))?;
            let modulation =
                Modulation::from_order(order).ok_or_else(|| fail(format!("row {}: unsupported order {order}", n + 1)))?;
            entries.push(McsEntry {
                index,
                modulation,
                code_rate: num(f[2])?,
                spectral_efficiency: num(f[3])?,
                bler_ref_sinr_db: num(f[4])?,
            });
        }
        McsTable::new(entries)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{MCS_TABLE_HEADER}\nindex,modulation_order,code_rate,spectral_efficiency,bler_ref_sinr_db\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.4},{:.2}",
                e.index,
                e.modulation.order(),
                e.code_rate,
                e.spectral_efficiency,
                e.bler_ref_sinr_db
            );
        }
        out
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn get(&self, index: u8) -> &McsEntry {
        &self.entries[usize::from(index)]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-index entry whose BLER at `sinr_db` stays within 10%, i.e.
    /// whose reference point does not exceed the reported SINR. Falls back
    /// to index 0.
    pub fn select(&self, sinr_db: f64) -> &McsEntry {
        let qualifying = self.entries.partition_point(|e| e.bler_ref_sinr_db <= sinr_db);
        &self.entries[qualifying.saturating_sub(1)]
    }
}

/// Logistic BLER curve `1 / (1 + exp(slope * (g - centre)))`, with the centre
/// placed so each entry hits exactly 10% at its reference SINR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlerModel {
    /// Steepness per dB.
    pub slope_per_db: f64,
}

impl Default for BlerModel {
    fn default() -> Self {
        BlerModel { slope_per_db: 2.0 }
    }
}

impl BlerModel {
    pub fn bler(&self, effective_sinr_db: f64, mcs: &McsEntry) -> f64 {
        let offset = (1.0 / TARGET_BLER - 1.0).ln() / self.slope_per_db;
        let centre = mcs.bler_ref_sinr_db - offset;
        let z = self.slope_per_db * (effective_sinr_db - centre);
        if z.is_nan() {
            return 1.0;
        }
        1.0 / (1.0 + z.exp())
    }
}

/// Free-function form of [`McsTable::select`].
pub fn select_mcs(table: &McsTable, cqi_effective_sinr_db: f64) -> &McsEntry {
    table.select(cqi_effective_sinr_db)
}

const BUNDLED_MCS_TABLE: &str = include_str!("../../data/mcs_table_v1.csv");

pub fn bundled_mcs_table_text() -> &'static str {
    BUNDLED_MCS_TABLE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_standard() {
        let bundled = McsTable::bundled();
        let standard = McsTable::standard();
        assert_eq!(bundled.len(), 15);
        for (a, b) in bundled.entries().iter().zip(standard.entries()) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.modulation, b.modulation);
            assert!((a.spectral_efficiency - b.spectral_efficiency).abs() < 1e-9);
            assert!((a.bler_ref_sinr_db - b.bler_ref_sinr_db).abs() < 1e-9);
            assert!((a.code_rate - b.code_rate).abs() < 1e-6);
        }
        assert_eq!(bundled.to_csv(), standard.to_csv());
    }

    #[test]
    fn bler_calibration_and_shape() {
        let model = BlerModel::default();
        for e in McsTable::standard().entries() {
            assert!((model.bler(e.bler_ref_sinr_db, e) - 0.1).abs() < 1e-6);
            assert!(model.bler(e.bler_ref_sinr_db + 60.0, e) < 1e-40);
            let mut prev = 1.0;
            for k in -100..=100 {
                let b = model.bler(e.bler_ref_sinr_db + f64::from(k) * 0.2, e);
                assert!(b <= prev);
                prev = b;
            }
        }
        let e = McsTable::standard().get(3).clone();
        assert_eq!(model.bler(f64::INFINITY, &e), 0.0);
        assert_eq!(model.bler(f64::NEG_INFINITY, &e), 1.0);
    }

    #[test]
    fn selection_examples() {
        let table = McsTable::standard();
        assert_eq!(table.select(-40.0).index, 0);
        assert_eq!(table.select(f64::NEG_INFINITY).index, 0);
        for e in table.entries() {
            assert_eq!(table.select(e.bler_ref_sinr_db).index, e.index);
        }
        assert_eq!(table.select(100.0).index, 14);
        let mut prev = 0;
        for k in -200..=300 {
            let idx = select_mcs(&table, f64::from(k) / 10.0).index;
            assert!(idx >= prev);
            prev = idx;
        }
    }

    #[test]
    fn table_validation() {
        let mut entries = McsTable::standard().entries().to_vec();
        entries[4].bler_ref_sinr_db = entries[3].bler_ref_sinr_db;
        assert!(McsTable::new(entries).is_err());
        assert!(McsTable::new(Vec::new()).is_err());
        assert!(McsTable::parse("garbage").is_err());
    }
}
