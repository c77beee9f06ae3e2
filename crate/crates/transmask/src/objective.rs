//! Scale-invariant SNR loss with utterance-level permutation-invariant
//! training.

use thiserror::Error;

use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Numerical guard in the SI-SNR projection and log ratio; caps the value
/// at roughly +/- 80 dB for unit-energy signals.
pub const SI_SNR_EPS: f64 = 1e-8;

/// Exhaustive permutation search is enforced up to this many speakers.
pub const MAX_SPEAKERS: usize = 4;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("si_snr needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("reference signal is identically zero")]
    DegenerateReference,
    #[error("estimate and reference shapes differ: {est:?} vs {reference:?}")]
    ShapeMismatch {
        est: Vec<usize>,
        reference: Vec<usize>,
    },
    #[error("permutation search is exhaustive; {0} speakers exceed the limit of {MAX_SPEAKERS}")]
    TooManySpeakers(usize),
}

/// Per-speaker reference (or estimated) waveforms [n_speakers, N].
#[derive(Debug, Clone)]
pub struct SourceSet<E: Scalar> {
    pub waveforms: Tensor<E>,
}

impl<E: Scalar> SourceSet<E> {
    pub fn new(waveforms: Tensor<E>) -> Result<Self, ObjectiveError> {
        let shape = waveforms.shape();
        if shape.len() != 2 || shape[0] < 2 {
            return Err(ObjectiveError::ShapeMismatch {
                est: shape.to_vec(),
                reference: vec![2, 0],
            });
        }
        Ok(SourceSet { waveforms })
    }

    pub fn n_speakers(&self) -> usize {
        self.waveforms.shape()[0]
    }

    pub fn speaker(&self, i: usize) -> Tensor<E> {
        self.waveforms.index0(i)
    }
}

/// Scale-invariant SNR in dB, differentiable with respect to the estimate.
///
/// Both signals are mean-centered; the reference is scaled to the
/// projection of the estimate onto it and the residual forms the error
/// term: 10*log10((|s_t|^2 + eps) / (|e|^2 + eps)).
pub fn si_snr<E: Scalar>(
    estimate: &Tensor<E>,
    reference: &Tensor<E>,
) -> Result<Tensor<E>, ObjectiveError> {
    if estimate.shape() != reference.shape() {
        return Err(ObjectiveError::ShapeMismatch {
            est: estimate.shape().to_vec(),
            reference: reference.shape().to_vec(),
        });
    }
    let n = estimate.numel();
    if n < 2 {
        return Err(ObjectiveError::TooShort(n));
    }
    if reference.data().iter().all(|&v| v == E::zero()) {
        return Err(ObjectiveError::DegenerateReference);
    }
    let eps = Tensor::scalar(lit::<E>(SI_SNR_EPS));
    let est_c = estimate.sub(&estimate.mean_all());
    let ref_c = reference.sub(&reference.mean_all());
    let dot = est_c.mul(&ref_c).sum_all();
    let ref_energy = ref_c.mul(&ref_c).sum_all();
    let scale = dot.div(&ref_energy.add(&eps));
    let target = ref_c.mul(&scale);
    let residual = est_c.sub(&target);
    let num = target.mul(&target).sum_all().add(&eps);
    let den = residual.mul(&residual).sum_all().add(&eps);
    let db_per_ln: E = lit(10.0 / std::f64::consts::LN_10);
    Ok(num.div(&den).ln().scale(db_per_ln))
}

/// Lexicographic permutations of 0..n.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn recurse(remaining: &mut Vec<usize>, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        for i in 0..remaining.len() {
            let v = remaining.remove(i);
            current.push(v);
            recurse(remaining, current, out);
            current.pop();
            remaining.insert(i, v);
        }
    }
    let mut out = Vec::new();
    recurse(&mut (0..n).collect(), &mut Vec::new(), &mut out);
    out
}

/// Utterance-level permutation-invariant loss: the negated mean pairwise
/// SI-SNR of the best speaker assignment, and that assignment (estimate
/// index -> reference index). Ties resolve to the lexicographically
/// smallest permutation. Gradients flow through the selected branch only.
pub fn upit_loss<E: Scalar>(
    estimates: &SourceSet<E>,
    references: &SourceSet<E>,
) -> Result<(Tensor<E>, Vec<usize>), ObjectiveError> {
    if estimates.waveforms.shape() != references.waveforms.shape() {
        return Err(ObjectiveError::ShapeMismatch {
            est: estimates.waveforms.shape().to_vec(),
            reference: references.waveforms.shape().to_vec(),
        });
    }
    let n = estimates.n_speakers();
    if n > MAX_SPEAKERS {
        return Err(ObjectiveError::TooManySpeakers(n));
    }
    let mut pairwise: Vec<Vec<Tensor<E>>> = Vec::with_capacity(n);
    for i in 0..n {
        let est = estimates.speaker(i);
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            row.push(si_snr(&est, &references.speaker(j))?);
        }
        pairwise.push(row);
    }
    let inv_n: E = lit(1.0 / n as f64);
    let mut best: Option<(Tensor<E>, Vec<usize>)> = None;
    for perm in permutations(n) {
        let mut sum = pairwise[0][perm[0]].clone();
        for (i, &j) in perm.iter().enumerate().skip(1) {
            sum = sum.add(&pairwise[i][j]);
        }
        let score = sum.scale(inv_n);
        let better = match &best {
            None => true,
            Some((cur, _)) => score.item() > cur.item(),
        };
        if better {
            best = Some((score, perm));
        }
    }
    let (score, perm) = best.expect("at least one permutation");
    Ok((score.neg(), perm))
}

/// SI-SNR improvement of the estimates over the unprocessed mixture,
/// averaged over speakers under the best permutation.
pub fn si_snr_improvement<E: Scalar>(
    estimates: &SourceSet<E>,
    references: &SourceSet<E>,
    mixture: &Tensor<E>,
) -> Result<f64, ObjectiveError> {
    let (loss, _) = upit_loss(estimates, references)?;
    let separated_db = -loss.item().to_f64().unwrap();
    let n = references.n_speakers();
    let mut mix_db = 0.0;
    for j in 0..n {
        mix_db += si_snr(mixture, &references.speaker(j))?
            .item()
            .to_f64()
            .unwrap();
    }
    mix_db /= n as f64;
    Ok(separated_db - mix_db)
}
