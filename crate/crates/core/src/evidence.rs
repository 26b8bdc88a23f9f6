//! Dempster-Shafer evidence calculus over finite frames of discernment.
//!
//! Focal sets are restricted to the singletons of the frame plus the frame
//! itself (`Ω`). Every mass function used by the grid map has this shape:
//! occupancy is `{occupied, free}` and the semantic frame carries its own
//! `unknown` singleton. The restriction is closed under the conjunctive
//! combination, so a BBA is fully described by one mass per hypothesis plus
//! the mass on `Ω`.

use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;
use thiserror::Error;

/// Tolerance for the normalization check `Σ m = 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Conflict at or above `1 - TOTAL_CONFLICT_EPS` cannot be renormalized.
pub const TOTAL_CONFLICT_EPS: f64 = 1e-12;
/// Largest supported frame; subsets are stored as 64-bit masks.
pub const MAX_HYPOTHESES: usize = 64;

pub(crate) type MassVec = SmallVec<[f64; 4]>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("a frame needs at least two hypotheses, got {0}")]
    FrameTooSmall(usize),
    #[error("a frame supports at most {MAX_HYPOTHESES} hypotheses, got {0}")]
    FrameTooLarge(usize),
    #[error("duplicate hypothesis label `{0}`")]
    DuplicateHypothesis(String),
    #[error("unknown hypothesis `{0}`")]
    UnknownHypothesis(String),
    #[error("expected {expected} masses, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("mass {value} for hypothesis {index} is negative or not finite")]
    NegativeMass { index: usize, value: f64 },
    #[error("singleton masses sum to {0}, which exceeds 1")]
    MassOverflow(f64),
    #[error("BBAs are defined on different frames")]
    FrameMismatch,
    #[error("total conflict (K = {0}); the combination is undefined")]
    TotalConflict(f64),
    #[error("reliability factor {0} is outside [0, 1]")]
    InvalidReliability(f64),
}

/// Ordered set of mutually exclusive hypotheses.
///
/// Cloning is cheap; frames compare equal when their labels match in order.
#[derive(Clone)]
pub struct Frame {
    labels: Arc<[String]>,
}

impl Frame {
    pub fn new<I, S>(labels: I) -> Result<Self, EvidenceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(EvidenceError::FrameTooSmall(labels.len()));
        }
        if labels.len() > MAX_HYPOTHESES {
            return Err(EvidenceError::FrameTooLarge(labels.len()));
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].contains(label) {
                return Err(EvidenceError::DuplicateHypothesis(label.clone()));
            }
        }
        Ok(Self {
            labels: labels.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Subset made of the named hypotheses.
    pub fn subset(&self, labels: &[&str]) -> Result<HypothesisSet, EvidenceError> {
        let mut bits = 0u64;
        for label in labels {
            let i = self
                .index_of(label)
                .ok_or_else(|| EvidenceError::UnknownHypothesis((*label).to_string()))?;
            bits |= 1 << i;
        }
        Ok(HypothesisSet(bits))
    }

    pub fn singleton(&self, index: usize) -> HypothesisSet {
        assert!(index < self.len(), "hypothesis index out of range");
        HypothesisSet(1 << index)
    }

    /// The whole frame `Ω`.
    pub fn full(&self) -> HypothesisSet {
        HypothesisSet(full_mask(self.len()))
    }

    pub fn complement(&self, set: HypothesisSet) -> HypothesisSet {
        HypothesisSet(!set.0 & full_mask(self.len()))
    }

    fn check_set(&self, set: HypothesisSet) -> Result<(), EvidenceError> {
        let stray = set.0 & !full_mask(self.len());
        if stray != 0 {
            return Err(EvidenceError::UnknownHypothesis(format!(
                "#{}",
                stray.trailing_zeros()
            )));
        }
        Ok(())
    }
}

fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.labels, &other.labels) || self.labels == other.labels
    }
}

impl Eq for Frame {}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.labels.iter()).finish()
    }
}

/// Subset of a frame, as a bit mask over hypothesis indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct HypothesisSet(pub u64);

impl HypothesisSet {
    pub const EMPTY: Self = Self(0);

    pub fn contains(self, index: usize) -> bool {
        index < 64 && self.0 & (1 << index) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
}

/// Source reliability `α ∈ [0, 1]` used for discounting.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ReliabilityFactor(f64);

impl ReliabilityFactor {
    pub const FULL: Self = Self(1.0);

    pub fn new(alpha: f64) -> Result<Self, EvidenceError> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(EvidenceError::InvalidReliability(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Basic belief assignment with support on singletons and `Ω`.
#[derive(Clone, PartialEq)]
pub struct Bba {
    frame: Frame,
    singletons: MassVec,
    omega: f64,
}

impl Bba {
    /// Builds a BBA from per-hypothesis masses; the remainder goes to `Ω`.
    pub fn new(frame: Frame, singleton_masses: &[f64]) -> Result<Self, EvidenceError> {
        if singleton_masses.len() != frame.len() {
            return Err(EvidenceError::DimensionMismatch {
                expected: frame.len(),
                actual: singleton_masses.len(),
            });
        }
        let mut sum = 0.0;
        for (index, &value) in singleton_masses.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(EvidenceError::NegativeMass { index, value });
            }
            sum += value;
        }
        if sum > 1.0 + NORMALIZATION_TOLERANCE {
            return Err(EvidenceError::MassOverflow(sum));
        }
        Ok(Self {
            frame,
            singletons: singleton_masses.iter().copied().collect(),
            omega: (1.0 - sum).clamp(0.0, 1.0),
        })
    }

    /// The "no information" BBA, `m(Ω) = 1`.
    pub fn vacuous(frame: Frame) -> Self {
        let n = frame.len();
        Self {
            frame,
            singletons: smallvec::smallvec![0.0; n],
            omega: 1.0,
        }
    }

    /// Simple support function: `m({h}) = mass`, `m(Ω) = 1 - mass`.
    pub fn simple_support(frame: Frame, index: usize, mass: f64) -> Result<Self, EvidenceError> {
        let mut masses: MassVec = smallvec::smallvec![0.0; frame.len()];
        if index >= masses.len() {
            return Err(EvidenceError::UnknownHypothesis(format!("#{index}")));
        }
        masses[index] = mass;
        Self::new(frame, &masses)
    }

    /// Lenient constructor for stored (possibly single precision) masses:
    /// negatives clamp to zero and an overshooting sum is rescaled to one.
    pub fn from_stored(frame: Frame, stored: impl IntoIterator<Item = f64>) -> Self {
        let mut singletons: MassVec = stored.into_iter().map(|m| m.max(0.0)).collect();
        debug_assert_eq!(singletons.len(), frame.len());
        let sum: f64 = singletons.iter().sum();
        let omega = if sum > 1.0 {
            singletons.iter_mut().for_each(|m| *m /= sum);
            0.0
        } else {
            1.0 - sum
        };
        Self {
            frame,
            singletons,
            omega,
        }
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn singletons(&self) -> &[f64] {
        &self.singletons
    }

    pub fn singleton(&self, index: usize) -> f64 {
        self.singletons[index]
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn mass_of(&self, label: &str) -> Result<f64, EvidenceError> {
        self.frame
            .index_of(label)
            .map(|i| self.singletons[i])
            .ok_or_else(|| EvidenceError::UnknownHypothesis(label.to_string()))
    }

    pub fn is_vacuous(&self) -> bool {
        self.singletons.iter().all(|&m| m == 0.0)
    }

    /// `Σ m` over all stored focal sets; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.singletons.iter().sum::<f64>() + self.omega
    }

    /// `Bel(A)`: mass of focal sets contained in `A`.
    pub fn belief(&self, set: HypothesisSet) -> Result<f64, EvidenceError> {
        self.frame.check_set(set)?;
        let mut bel: f64 = self
            .singletons
            .iter()
            .enumerate()
            .filter(|(i, _)| set.contains(*i))
            .map(|(_, m)| m)
            .sum();
        if set == self.frame.full() {
            bel += self.omega;
        }
        Ok(bel)
    }

    /// `Pl(A)`: mass of focal sets intersecting `A`.
    pub fn plausibility(&self, set: HypothesisSet) -> Result<f64, EvidenceError> {
        self.frame.check_set(set)?;
        if set.is_empty() {
            return Ok(0.0);
        }
        let pl: f64 = self
            .singletons
            .iter()
            .enumerate()
            .filter(|(i, _)| set.contains(*i))
            .map(|(_, m)| m)
            .sum();
        Ok(pl + self.omega)
    }

    /// Dempster's rule of combination. Returns the normalized result and the
    /// conflict mass `K`.
    pub fn combine(&self, other: &Bba) -> Result<(Bba, f64), EvidenceError> {
        if self.frame != other.frame {
            return Err(EvidenceError::FrameMismatch);
        }
        let mut out: MassVec = smallvec::smallvec![0.0; self.frame.len()];
        let (omega, conflict) = combine_masses(
            &self.singletons,
            self.omega,
            &other.singletons,
            other.omega,
            &mut out,
        )?;
        Ok((
            Bba {
                frame: self.frame.clone(),
                singletons: out,
                omega,
            },
            conflict,
        ))
    }

    /// Pignistic probability `BetP(h) = m({h}) + m(Ω) / |Ω|`.
    pub fn pignistic(&self) -> Vec<f64> {
        let share = self.omega / self.frame.len() as f64;
        self.singletons.iter().map(|m| m + share).collect()
    }

    /// Reliability discounting: committed mass scales by `α`, the rest moves to `Ω`.
    pub fn discount(&self, alpha: ReliabilityFactor) -> Bba {
        let a = alpha.value();
        Bba {
            frame: self.frame.clone(),
            singletons: self.singletons.iter().map(|m| a * m).collect(),
            omega: 1.0 - a + a * self.omega,
        }
    }
}

impl fmt::Debug for Bba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for (label, m) in self.frame.labels().iter().zip(&self.singletons) {
            map.entry(label, m);
        }
        map.entry(&"Ω", &self.omega).finish()
    }
}

/// Dempster combination on raw mass slices (singletons plus explicit `Ω`).
///
/// Writes the combined singleton masses into `out` and returns
/// `(m(Ω), K)`. The result is renormalized so that it sums to one exactly
/// up to rounding.
pub fn combine_masses(
    a: &[f64],
    a_omega: f64,
    b: &[f64],
    b_omega: f64,
    out: &mut [f64],
) -> Result<(f64, f64), EvidenceError> {
    debug_assert!(a.len() == b.len() && a.len() == out.len());
    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    let mut agree = 0.0;
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        agree += x * y;
        *o = x * y + x * b_omega + a_omega * y;
    }
    // Singletons only intersect when equal, so every other pair conflicts.
    let conflict = (sum_a * sum_b - agree).max(0.0);
    if conflict >= 1.0 - TOTAL_CONFLICT_EPS {
        return Err(EvidenceError::TotalConflict(conflict));
    }
    let mut omega = a_omega * b_omega;
    let total: f64 = out.iter().sum::<f64>() + omega;
    if total <= 0.0 {
        return Err(EvidenceError::TotalConflict(conflict));
    }
    out.iter_mut().for_each(|m| *m /= total);
    omega /= total;
    Ok((omega, conflict))
}
