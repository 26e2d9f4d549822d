//! Result record shared by every recovery routine.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub what: String,
    /// One label per recovered value, e.g. `s0:x12` or `s0:m3:x12`.
    pub labels: Vec<String>,
    pub recovered: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// True where the division guard masked the value.
    pub guard_mask: Vec<bool>,
    pub rel_l2_error: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub residual_norms: BTreeMap<String, f64>,
    pub lambda: Option<f64>,
    pub gram_condition: Option<f64>,
    /// Scalars specific to one routine (fitted orders, misfits, lattices).
    pub extra: BTreeMap<String, f64>,
}

impl ReconstructionReport {
    pub fn new(what: &str) -> Self {
        ReconstructionReport { what: what.to_string(), ..Default::default() }
    }

    pub fn push(&mut self, label: String, value: f64, masked: bool) {
        self.labels.push(label);
        self.recovered.push(value);
        self.guard_mask.push(masked);
    }

    /// Attaches a truth vector aligned with `recovered` and fills the error
    /// scalars over unmasked entries.
    pub fn with_truth(mut self, truth: Vec<f64>) -> Self {
        assert_eq!(truth.len(), self.recovered.len(), "truth length");
        let mut num = 0.0;
        let mut den = 0.0;
        let mut max = 0.0f64;
        for ((&r, &t), &m) in self.recovered.iter().zip(&truth).zip(&self.guard_mask) {
            if m {
                continue;
            }
            num += (r - t) * (r - t);
            den += t * t;
            max = max.max((r - t).abs());
        }
        self.rel_l2_error = Some(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() });
        self.max_abs_error = Some(max);
        self.truth = Some(truth);
        self
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.guard_mask.is_empty() {
            return 0.0;
        }
        self.guard_mask.iter().filter(|&&m| m).count() as f64 / self.guard_mask.len() as f64
    }

    /// Largest |recovered| over unmasked entries.
    pub fn max_abs_unmasked(&self) -> f64 {
        self.recovered
            .iter()
            .zip(&self.guard_mask)
            .filter(|(_, &m)| !m)
            .fold(0.0, |a, (v, _)| a.max(v.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `label,recovered,truth,masked` rows.
    pub fn values_csv(&self) -> String {
        let mut out = String::from("label,recovered,truth,masked\n");
        for (k, label) in self.labels.iter().enumerate() {
            let truth = self.truth.as_ref().map(|t| format!("{:.16e}", t[k])).unwrap_or_default();
            let _ = writeln!(out, "{label},{:.16e},{truth},{}", self.recovered[k], self.guard_mask[k] as u8);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_skip_masked_entries() {
        let mut r = ReconstructionReport::new("t");
        r.push("a".into(), 1.0, false);
        r.push("b".into(), 100.0, true);
        r.push("c".into(), 2.0, false);
        let r = r.with_truth(vec![1.0, 0.0, 1.0]);
        assert!((r.rel_l2_error.unwrap() - (0.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(r.max_abs_error, Some(1.0));
        assert!((r.masked_fraction() - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.values_csv().lines().count() == 4);
        let back: ReconstructionReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
