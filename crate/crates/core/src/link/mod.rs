//! Link-to-system abstraction: per-PRB SINR to decode outcome.
//!
//! The chain is CQI -> MCS selection, MIESM compression of the per-PRB SINRs
//! of a transport block, a logistic BLER curve per MCS, a Bernoulli decode
//! draw, and chase-combining HARQ on failure.

pub mod harq;
pub mod mcs;
pub mod mutual_info;

pub use harq::{decode_attempt, harq_combine, DecodeOutcome, HarqExhausted, HarqProcess};
pub use mcs::{select_mcs, BlerModel, McsEntry, McsTable};
pub use mutual_info::{bicm_capacity, MiCurves, Modulation};

use crate::channel::linear_to_db;

/// The tables and curve parameters shared by every link.
#[derive(Debug, Clone)]
pub struct LinkAbstraction {
    pub mcs: McsTable,
    pub curves: MiCurves,
    pub bler: BlerModel,
}

impl Default for LinkAbstraction {
    fn default() -> Self {
        LinkAbstraction {
            mcs: McsTable::bundled(),
            curves: MiCurves::bundled(),
            bler: BlerModel::default(),
        }
    }
}

impl LinkAbstraction {
    /// MIESM effective SINR (linear) of a block sent with `mcs`.
    pub fn effective_sinr(&self, per_prb_sinr: &[f64], mcs: &McsEntry) -> f64 {
        self.curves.effective_sinr(per_prb_sinr, mcs.modulation)
    }

    /// Block error probability of a block given its per-PRB SINRs.
    pub fn block_error(&self, per_prb_sinr: &[f64], mcs: &McsEntry) -> f64 {
        let eff = self.effective_sinr(per_prb_sinr, mcs);
        self.bler.bler(linear_to_db(eff), mcs)
    }
}

/// Free-function MIESM over the bundled-or-supplied curves.
pub fn miesm_effective_sinr(curves: &MiCurves, per_prb_sinr: &[f64], modulation: Modulation) -> f64 {
    curves.effective_sinr(per_prb_sinr, modulation)
}
