//! Per-modulation mutual-information curves and the MIESM compression.
//!
//! Curves hold the BICM capacity of Gray-labelled square QAM on an AWGN
//! channel, tabulated on a 0.1 dB grid. The shipped table is generated by
//! [`MiCurves::generate`] and loaded from a versioned CSV so every consumer
//! uses the same numbers.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const MI_TABLE_HEADER: &str = "# v2xsim mi-curves v1";
pub const GRID_START_DB: f64 = -20.0;
pub const GRID_STEP_DB: f64 = 0.1;
pub const GRID_POINTS: usize = 601;

/// Modulations used by the MCS table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub const ALL: [Modulation; 3] = [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64];

    /// Bits per symbol.
    pub fn order(self) -> u32 {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    pub fn from_order(bits: u32) -> Option<Modulation> {
        match bits {
            2 => Some(Modulation::Qpsk),
            4 => Some(Modulation::Qam16),
            6 => Some(Modulation::Qam64),
            _ => None,
        }
    }

    fn column(self) -> usize {
        match self {
            Modulation::Qpsk => 0,
            Modulation::Qam16 => 1,
            Modulation::Qam64 => 2,
        }
    }
}

/// BICM capacity (bits per complex symbol) of Gray-labelled square QAM at a
/// linear SNR, with unit average symbol energy.
///
/// Square QAM with Gray labels splits into two independent PAM dimensions,
/// so the capacity is twice the per-dimension PAM value. The Gaussian noise
/// expectation is a trapezoid sum, which converges geometrically for this
/// smooth, Gaussian-weighted integrand.
pub fn bicm_capacity(modulation: Modulation, snr: f64) -> f64 {
    if snr <= 0.0 {
        return 0.0;
    }
    let bits = modulation.order() / 2;
    let levels = 1usize << bits;
    let scale = (3.0 / (2.0 * ((levels * levels) as f64 - 1.0))).sqrt();
    let amplitude: Vec<f64> = (0..levels)
        .map(|j| scale * (2.0 * j as f64 - (levels as f64 - 1.0)))
        .collect();
    let label: Vec<usize> = (0..levels).map(|j| j ^ (j >> 1)).collect();
    let root_snr = snr.sqrt();

    const HALF_WIDTH: f64 = 12.0;
    const STEP: f64 = 0.01;
    let nodes = (2.0 * HALF_WIDTH / STEP).round() as usize;

    let mut exponents = vec![0.0; levels];
    let mut deficit = 0.0;
    for sent in 0..levels {
        let mut acc = 0.0;
        for node in 0..=nodes {
            let t = -HALF_WIDTH + node as f64 * STEP;
            // y = x_sent + sqrt(N0) t with N0 = 1 / snr; exponent of p(y | x').
            let mut peak = f64::NEG_INFINITY;
            for (k, e) in exponents.iter_mut().enumerate() {
                let u = (amplitude[sent] - amplitude[k]) * root_snr + t;
                *e = -u * u;
                peak = peak.max(*e);
            }
            let total: f64 = exponents.iter().map(|e| (e - peak).exp()).sum();
            let mut term = 0.0;
            for bit in 0..bits {
                let want = (label[sent] >> bit) & 1;
                let same: f64 = exponents
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| (label[*k] >> bit) & 1 == want)
                    .map(|(_, e)| (e - peak).exp())
                    .sum();
                term += (total / same).log2();
            }
            let weight = if node == 0 || node == nodes { 0.5 } else { 1.0 };
            acc += weight * (-t * t).exp() * term;
        }
        deficit += acc * STEP / std::f64::consts::PI.sqrt();
    }
    deficit /= levels as f64;
    (2.0 * (f64::from(bits) - deficit)).clamp(0.0, f64::from(modulation.order()))
}

/// Tabulated mutual-information curves for QPSK, 16QAM and 64QAM.
#[derive(Debug, Clone, PartialEq)]
pub struct MiCurves {
    start_db: f64,
    step_db: f64,
    /// Column per modulation, non-decreasing along the grid.
    values: [Vec<f64>; 3],
}

impl MiCurves {
    pub fn generate() -> MiCurves {
        let grid = (0..GRID_POINTS).map(|i| GRID_START_DB + i as f64 * GRID_STEP_DB);
        let mut values: [Vec<f64>; 3] = Default::default();
        for db in grid {
            let snr = 10f64.powf(db / 10.0);
            for m in Modulation::ALL {
                values[m.column()].push(bicm_capacity(m, snr));
            }
        }
        // Quadrature noise can leave sub-1e-12 wiggles near saturation.
        for column in &mut values {
            for i in 1..column.len() {
                if column[i] < column[i - 1] {
                    column[i] = column[i - 1];
                }
            }
        }
        MiCurves {
            start_db: GRID_START_DB,
            step_db: GRID_STEP_DB,
            values,
        }
    }

    pub fn bundled() -> MiCurves {
        MiCurves::parse(BUNDLED_MI_CURVES).expect("bundled MI table is valid")
    }

    pub fn parse(text: &str) -> Result<MiCurves> {
        let fail = |reason: String| Error::DataFile {
            name: "mi curves".into(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(MI_TABLE_HEADER) {
            return Err(fail(format!("missing `{MI_TABLE_HEADER}` header")));
        }
        if lines.next().map(str::trim) != Some("sinr_db,qpsk,qam16,qam64") {
            return Err(fail("bad column header".into()));
        }
        let mut grid = Vec::new();
        let mut values: [Vec<f64>; 3] = Default::default();
        for (n, line) in lines.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fail(format!("row {}: {e}", n + 1)))?;
            if fields.len() != 4 {
                return Err(fail(format!("row {}: expected 4 fields", n + 1)));
            }
            grid.push(fields[0]);
            for c in 0..3 {
                values[c].push(fields[c + 1]);
            }
        }
        if grid.len() < 2 {
            return Err(fail("need at least two rows".into()));
        }
        let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
        if !(step > 0.0) || grid.iter().enumerate().any(|(i, g)| (g - (grid[0] + i as f64 * step)).abs() > 1e-6) {
            return Err(fail("SINR grid must be uniform and increasing".into()));
        }
        for (m, column) in Modulation::ALL.iter().zip(&values) {
            let top = f64::from(m.order());
            if column[0] <= 0.0 || column.iter().any(|v| !(v.is_finite() && *v <= top)) {
                return Err(fail(format!("{m:?} column must lie in (0, {top}]")));
            }
            if column.windows(2).any(|w| w[1] < w[0]) {
                return Err(fail(format!("{m:?} column is not monotone")));
            }
        }
        Ok(MiCurves {
            start_db: grid[0],
            step_db: step,
            values,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{MI_TABLE_HEADER}\nsinr_db,qpsk,qam16,qam64\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{:.1},{:.12},{:.12},{:.12}",
                self.grid_db(i),
                self.values[0][i],
                self.values[1][i],
                self.values[2][i]
            );
        }
        out
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.values[0].is_empty()
    }

    pub fn grid_db(&self, i: usize) -> f64 {
        self.start_db + i as f64 * self.step_db
    }

    pub fn table(&self, modulation: Modulation) -> &[f64] {
        &self.values[modulation.column()]
    }

    /// Mutual information in bits at a linear SINR.
    ///
    /// Linear in SINR between 0 and the first grid point; past the last grid
    /// point it approaches the modulation order as `1 - g_max / g`.
    pub fn mi(&self, modulation: Modulation, sinr: f64) -> f64 {
        if !(sinr > 0.0) {
            return 0.0;
        }
        let table = self.table(modulation);
        let top = f64::from(modulation.order());
        let last = table.len() - 1;
        let db = 10.0 * sinr.log10();
        let pos = (db - self.start_db) / self.step_db;
        if pos <= 0.0 {
            let first = 10f64.powf(self.start_db / 10.0);
            return table[0] * sinr / first;
        }
        if pos >= last as f64 {
            if sinr.is_infinite() {
                return top;
            }
            let edge = 10f64.powf(self.grid_db(last) / 10.0);
            return table[last] + (top - table[last]) * (1.0 - edge / sinr);
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        table[i] + frac * (table[i + 1] - table[i])
    }

    /// Smallest linear SINR whose mutual information reaches `bits`.
    pub fn inverse(&self, modulation: Modulation, bits: f64) -> f64 {
        let table = self.table(modulation);
        let top = f64::from(modulation.order());
        let last = table.len() - 1;
        if !(bits > 0.0) {
            return 0.0;
        }
        if bits >= top {
            return f64::INFINITY;
        }
        if bits <= table[0] {
            let first = 10f64.powf(self.start_db / 10.0);
            return first * bits / table[0];
        }
        if bits > table[last] {
            let edge = 10f64.powf(self.grid_db(last) / 10.0);
            return edge / (1.0 - (bits - table[last]) / (top - table[last]));
        }
        // First grid index whose value reaches `bits`; table[0] < bits here.
        let hi = table.partition_point(|&v| v < bits);
        let lo = hi - 1;
        let span = table[hi] - table[lo];
        let frac = if span > 0.0 { (bits - table[lo]) / span } else { 0.0 };
        let db = self.grid_db(lo) + frac * self.step_db;
        10f64.powf(db / 10.0)
    }

    /// MIESM: map each PRB SINR through the modulation's MI curve, average,
    /// and map back. The result is clamped into `[min, max]` of the input,
    /// which only matters on saturated stretches where the preimage is an
    /// interval.
    pub fn effective_sinr(&self, per_prb_sinr: &[f64], modulation: Modulation) -> f64 {
        assert!(!per_prb_sinr.is_empty(), "MIESM needs at least one PRB");
        let (lo, hi) = per_prb_sinr
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if lo == hi {
            return lo;
        }
        let mean = per_prb_sinr.iter().map(|&s| self.mi(modulation, s)).sum::<f64>() / per_prb_sinr.len() as f64;
        self.inverse(modulation, mean).clamp(lo, hi)
    }
}

const BUNDLED_MI_CURVES: &str = include_str!("../../data/mi_curves_v1.csv");

pub fn bundled_mi_curves_text() -> &'static str {
    BUNDLED_MI_CURVES
}
