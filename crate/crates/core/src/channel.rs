//! Path loss, block Rayleigh fading and post-MRC SINR for the two carriers.
//!
//! V2I runs on 2 GHz, V2V on 5.9 GHz. The bands never interfere with each
//! other: every interference sum in this crate is taken over transmitters of
//! the receiver's own band only.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Physical resource blocks in a 10 MHz carrier.
pub const PRB_COUNT: usize = 50;
/// Receive antennas per node (1 Tx x 2 Rx).
pub const RX_ANTENNAS: usize = 2;
pub const PRB_BANDWIDTH_HZ: f64 = 180e3;

/// Carrier band of a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    /// Infrastructure-to-vehicle, 2 GHz.
    V2i,
    /// Vehicle-to-vehicle, 5.9 GHz.
    V2v,
}

impl Band {
    pub fn carrier_hz(self) -> f64 {
        match self {
            Band::V2i => 2.0e9,
            Band::V2v => 5.9e9,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::V2i => "v2i",
            Band::V2v => "v2v",
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// Log-distance path loss `intercept + slope * log10(d / reference)`, with
/// distances below 1 m clamped to 1 m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDistance {
    pub intercept_db: f64,
    pub slope_db_per_decade: f64,
    pub reference_m: f64,
}

impl LogDistance {
    /// Macro-to-relay LOS form at 2 GHz.
    pub const V2I: LogDistance = LogDistance {
        intercept_db: 100.7,
        slope_db_per_decade: 23.5,
        reference_m: 1000.0,
    };

    /// Free-space-like V2V LOS form at 5.9 GHz.
    pub const V2V: LogDistance = LogDistance {
        intercept_db: 63.3,
        slope_db_per_decade: 20.0,
        reference_m: 1.0,
    };

    pub fn loss_db(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(1.0);
        self.intercept_db + self.slope_db_per_decade * (d / self.reference_m).log10()
    }
}

pub fn pathloss_v2i(distance_m: f64) -> f64 {
    LogDistance::V2I.loss_db(distance_m)
}

pub fn pathloss_v2v(distance_m: f64) -> f64 {
    LogDistance::V2V.loss_db(distance_m)
}

/// Large-scale budget of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub pathloss_db: f64,
    pub band: Band,
    /// Log-normal shadowing term; zero unless enabled in the config.
    pub shadowing_db: f64,
}

impl LinkBudget {
    pub fn rx_power_dbm(&self) -> f64 {
        self.tx_power_dbm - self.pathloss_db - self.shadowing_db
    }

    pub fn rx_power_mw(&self) -> f64 {
        dbm_to_mw(self.rx_power_dbm())
    }
}

/// Thermal noise power per PRB in milliwatts.
pub fn noise_power_mw(noise_psd_dbm_hz: f64, noise_figure_db: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_mw(noise_psd_dbm_hz + 10.0 * bandwidth_hz.log10() + noise_figure_db)
}

/// Small-scale fading of one link: complex gains per (rx antenna, PRB).
#[derive(Debug, Clone, PartialEq)]
pub struct FadingRealization {
    n_rx: usize,
    n_prb: usize,
    /// Antenna-major: `gains[a * n_prb + p]`.
    gains: Vec<Complex64>,
    /// TTIs this realization stays valid before a redraw.
    pub coherence: u32,
}

impl FadingRealization {
    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_prb(&self) -> usize {
        self.n_prb
    }

    pub fn gain(&self, antenna: usize, prb: usize) -> Complex64 {
        self.gains[antenna * self.n_prb + prb]
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    /// `sum_a |h_a|^2` on one PRB: the MRC array gain.
    pub fn combined_power(&self, prb: usize) -> f64 {
        (0..self.n_rx).map(|a| self.gain(a, prb).norm_sqr()).sum()
    }
}

/// i.i.d. circularly-symmetric complex Gaussian gains with unit mean power.
pub fn draw_fading<R: Rng + ?Sized>(rng: &mut R, n_rx: usize, n_prb: usize, coherence: u32) -> FadingRealization {
    let n_rx = n_rx.max(1);
    let n_prb = n_prb.max(1);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let gains = (0..n_rx * n_prb)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    FadingRealization {
        n_rx,
        n_prb,
        gains,
        coherence,
    }
}

/// Post-MRC SINR on one PRB.
///
/// `desired` holds the received desired power on each antenna. Each entry of
/// `interferers` holds one co-band, co-PRB interferer's received power per
/// antenna; after combining, an interferer contributes its antenna-average
/// power. Zero desired power gives SINR 0.
pub fn sinr_mrc(desired: &[f64], interferers: &[&[f64]], noise_power: f64) -> f64 {
    let signal: f64 = desired.iter().sum();
    let interference: f64 = interferers
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| p.iter().sum::<f64>() / p.len() as f64)
        .sum();
    combine(signal, interference, noise_power)
}

#[inline]
pub(crate) fn combine(signal: f64, interference: f64, noise_power: f64) -> f64 {
    if signal <= 0.0 {
        return 0.0;
    }
    signal / (interference + noise_power)
}
