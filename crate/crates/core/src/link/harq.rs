//! Chase-combining HARQ processes and Bernoulli decode draws.

use rand::Rng;

use thiserror::Error;

pub const DEFAULT_MAX_ATTEMPTS: u8 = 4;
pub const DEFAULT_RTT_TTIS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeOutcome {
    Ack,
    Nack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("transport block {tb_id} exhausted {attempts} HARQ attempts")]
pub struct HarqExhausted {
    pub tb_id: u64,
    pub attempts: u8,
}

/// Retransmission state of one transport block. The accumulated SINR is the
/// per-PRB linear sum over all received copies.
#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub tb_id: u64,
    pub mcs_index: u8,
    pub attempt: u8,
    pub max_attempts: u8,
    accumulated: Vec<f64>,
}

impl HarqProcess {
    /// Process after the first transmission.
    pub fn new(tb_id: u64, mcs_index: u8, first_per_prb_sinr: &[f64], max_attempts: u8) -> Self {
        HarqProcess {
            tb_id,
            mcs_index,
            attempt: 1,
            max_attempts: max_attempts.max(1),
            accumulated: first_per_prb_sinr.to_vec(),
        }
    }

    pub fn accumulated(&self) -> &[f64] {
        &self.accumulated
    }

    pub fn can_retransmit(&self) -> bool {
        self.attempt < self.max_attempts
    }
}

/// Chase-combine a retransmission into the process. Returns the exhausted
/// error (the block must be dropped) once the attempt budget is spent.
pub fn harq_combine(mut process: HarqProcess, new_per_prb_sinr: &[f64]) -> Result<HarqProcess, HarqExhausted> {
    if !process.can_retransmit() {
        return Err(HarqExhausted {
            tb_id: process.tb_id,
            attempts: process.attempt,
        });
    }
    assert_eq!(
        process.accumulated.len(),
        new_per_prb_sinr.len(),
        "retransmission must occupy the same number of PRBs"
    );
    for (acc, new) in process.accumulated.iter_mut().zip(new_per_prb_sinr) {
        *acc += new.max(0.0);
    }
    process.attempt += 1;
    Ok(process)
}

/// NACK with probability `bler`.
pub fn decode_attempt<R: Rng + ?Sized>(rng: &mut R, bler: f64) -> DecodeOutcome {
    if rng.random::<f64>() < bler {
        DecodeOutcome::Nack
    } else {
        DecodeOutcome::Ack
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn chase_addition() {
        let p = HarqProcess::new(1, 3, &[2.0, 2.0], 4);
        let p = harq_combine(p, &[2.0, 2.0]).unwrap();
        assert_eq!(p.accumulated(), &[4.0, 4.0]);
        assert_eq!(p.attempt, 2);
    }

    #[test]
    fn attempts_are_bounded() {
        let mut p = HarqProcess::new(9, 0, &[1.0], 4);
        for _ in 0..3 {
            p = harq_combine(p, &[1.0]).unwrap();
        }
        assert_eq!(p.attempt, 4);
        assert_eq!(harq_combine(p, &[1.0]), Err(HarqExhausted { tb_id: 9, attempts: 4 }));
    }

    #[test]
    fn decode_extremes_and_frequency() {
        let mut rng = RngStream::new(5, "harq");
        assert!((0..1000).all(|_| decode_attempt(&mut rng, 0.0) == DecodeOutcome::Ack));
        assert!((0..1000).all(|_| decode_attempt(&mut rng, 1.0) == DecodeOutcome::Nack));
        let n = 100_000;
        let nacks = (0..n).filter(|_| decode_attempt(&mut rng, 0.3) == DecodeOutcome::Nack).count();
        assert!((nacks as f64 / n as f64 - 0.3).abs() < 0.01);
    }
}
