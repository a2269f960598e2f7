//! Per-gate sample vectors.
//!
//! Every stage of the pipeline speaks the same dialect: one `f64` per
//! detector gate. Depending on the stage the samples are optical powers in
//! watts (before the detector) or self-differencer-referred millivolts
//! (after it). [`GateTrace`] is a thin wrapper that keeps those vectors
//! from being confused with unrelated `Vec<f64>`s.

use std::ops::{Deref, Index};
use std::slice::SliceIndex;

/// A contiguous run of per-gate samples (optical watts or SD-referred mV,
/// depending on pipeline stage).
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace(pub Vec<f64>);

impl GateTrace {
    /// A trace of `gates` samples all equal to `value`.
    pub fn constant(gates: usize, value: f64) -> Self {
        GateTrace(vec![value; gates])
    }

    /// Number of gates in the trace.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when the trace holds no gates at all.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The samples as a plain slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Iterator over the per-gate samples.
    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl Deref for GateTrace {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<I: SliceIndex<[f64]>> Index<I> for GateTrace {
    type Output = I::Output;

    fn index(&self, i: I) -> &I::Output {
        &self.0[i]
    }
}

impl From<Vec<f64>> for GateTrace {
    fn from(v: Vec<f64>) -> Self {
        GateTrace(v)
    }
}

impl FromIterator<f64> for GateTrace {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        GateTrace(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trace_has_requested_length_and_value() {
        let t = GateTrace::constant(5, 1.5e-3);
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(|&x| x == 1.5e-3));
        assert!(!t.is_empty());
        assert!(GateTrace::constant(0, 0.0).is_empty());
    }

    #[test]
    fn deref_and_index_reach_the_samples() {
        let t: GateTrace = vec![1.0, 2.0, 3.0].into();
        assert_eq!(t[1], 2.0);
        assert_eq!(t.as_slice(), &[1.0, 2.0, 3.0]);
        let doubled: GateTrace = t.iter().map(|x| 2.0 * x).collect();
        assert_eq!(doubled.as_slice(), &[2.0, 4.0, 6.0]);
    }
}
