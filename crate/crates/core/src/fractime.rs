//! Caputo derivatives on a uniform time grid (L1 scheme), their time-mirrored
//! counterparts for backward problems, and a numerical Laplace transform.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracTerm {
    pub beta: f64,
    pub b: f64,
}

/// Per species, the terms Σ_j b_j ₀D_t^{β_j}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracOrderSpec {
    pub species: Vec<Vec<FracTerm>>,
}

impl FracOrderSpec {
    pub fn new(species: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let spec = FracOrderSpec {
            species: species
                .into_iter()
                .map(|ts| ts.into_iter().map(|(beta, b)| FracTerm { beta, b }).collect())
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same single-term order for `m` species.
    pub fn uniform(m: usize, beta: f64) -> Result<Self> {
        Self::new(vec![vec![(beta, 1.0)]; m])
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::FracOrder("no species".into()));
        }
        for (i, ts) in self.species.iter().enumerate() {
            if ts.is_empty() {
                return Err(Error::FracOrder(format!("species {i} has no terms")));
            }
            for t in ts {
                check_beta(t.beta)?;
                if !(t.b > 0.0 && t.b.is_finite()) {
                    return Err(Error::FracOrder(format!("weight b = {} must be positive", t.b)));
                }
            }
            for w in ts.windows(2) {
                if w[0].beta >= w[1].beta {
                    return Err(Error::FracOrder(format!("orders of species {i} must increase")));
                }
            }
        }
        Ok(())
    }

    /// Convolution weights Σ_j b_j a_k^{(β_j)}, k = 0..n.
    pub fn combined_weights(&self, species: usize, dt: f64, n: usize) -> Result<Vec<f64>> {
        let ts = self
            .species
            .get(species)
            .ok_or_else(|| Error::FracOrder(format!("species {species} out of range")))?;
        let mut out = vec![0.0; n];
        for t in ts {
            for (o, a) in out.iter_mut().zip(l1_weights(t.beta, dt, n)) {
                *o += t.b * a;
            }
        }
        Ok(out)
    }

    /// Σ_j b_j s^{β_j} for one species.
    pub fn symbol(&self, species: usize, s: f64) -> f64 {
        self.species[species].iter().map(|t| t.b * s.powf(t.beta)).sum()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::FracOrder(format!("order {beta} outside (0,1)")))
    }
}

/// a_k = ((k+1)^{1-β} − k^{1-β}) dt^{-β} / Γ(2−β), k = 0..n−1.
pub fn l1_weights(beta: f64, dt: f64, n: usize) -> Vec<f64> {
    let c = dt.powf(-beta) / gamma(2.0 - beta);
    let e = 1.0 - beta;
    (0..n).map(|k| c * ((k as f64 + 1.0).powf(e) - (k as f64).powf(e))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableSide {
    /// ₀D_t^β, uses the past.
    Left,
    /// ₜD_T^β, uses the future.
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaputoTable {
    pub beta: f64,
    pub dt: f64,
    pub n_time: usize,
    pub side: TableSide,
    weights: Vec<f64>,
}

pub fn build_l1_table(beta: f64, dt: f64, n_time: usize) -> Result<CaputoTable> {
    check_beta(beta)?;
    if n_time == 0 || !(dt > 0.0) {
        return Err(Error::FracOrder("need n_time >= 1 and dt > 0".into()));
    }
    Ok(CaputoTable { beta, dt, n_time, side: TableSide::Left, weights: l1_weights(beta, dt, n_time) })
}

pub fn build_right_table(beta: f64, dt: f64, n_time: usize) -> Result<CaputoTable> {
    let mut t = build_l1_table(beta, dt, n_time)?;
    t.side = TableSide::Right;
    Ok(t)
}

impl CaputoTable {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coefficient of v_k in row m, rows and columns 0..=n_time.
    pub fn entry(&self, m: usize, k: usize) -> f64 {
        let a = |j: i64| -> f64 {
            if j >= 0 && (j as usize) < self.weights.len() {
                self.weights[j as usize]
            } else {
                0.0
            }
        };
        let n = self.n_time;
        let (m, k) = match self.side {
            TableSide::Left => (m as i64, k as i64),
            TableSide::Right => ((n - m) as i64, (n - k) as i64),
        };
        if k > m {
            return 0.0;
        }
        let mut c = 0.0;
        if k >= 1 {
            c += a(m - k);
        }
        if k < m {
            c -= a(m - k - 1);
        }
        c
    }

    /// Applies the table to v_0..v_L (L ≤ n_time). The left table returns 0
    /// at level 0; the right table measures against the last sample.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() > self.n_time + 1 {
            return Err(Error::Input(format!(
                "series of length {} exceeds table size {}",
                v.len(),
                self.n_time + 1
            )));
        }
        match self.side {
            TableSide::Left => Ok(left_apply(&self.weights, v)),
            TableSide::Right => {
                let r: Vec<f64> = v.iter().rev().copied().collect();
                let mut out = left_apply(&self.weights, &r);
                out.reverse();
                Ok(out)
            }
        }
    }
}

fn left_apply(a: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for m in 1..v.len() {
        out[m] = (1..=m).map(|k| a[m - k] * (v[k] - v[k - 1])).sum();
    }
    out
}

/// Σ_j b_j (L1 table of β_j) applied to one species' series.
pub fn apply_multiterm(spec: &FracOrderSpec, species: usize, series: &[f64], dt: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = series.len().max(1);
    let a = spec.combined_weights(species, dt, n)?;
    Ok(left_apply(&a, series))
}

/// ∫₀^∞ e^{-st} v(t) dt from samples v_k = v(k dt): trapezoid over the record
/// plus an exponential tail A e^{-λt} fitted to its last quarter.
pub fn laplace_numeric(series: &[f64], dt: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Input(format!("Laplace variable must be positive, got {s}")));
    }
    if series.len() < 8 {
        return Err(Error::Input("series needs at least 8 samples for the tail fit".into()));
    }
    let n = series.len() - 1;
    let t_end = n as f64 * dt;
    let f = |k: usize| (-s * k as f64 * dt).exp() * series[k];
    let mut body = 0.5 * (f(0) + f(n));
    for k in 1..n {
        body += f(k);
    }
    body *= dt;
    Ok(body + exponential_tail(series, dt, s, t_end))
}

fn exponential_tail(series: &[f64], dt: f64, s: f64, t_end: f64) -> f64 {
    let n = series.len() - 1;
    let start = (3 * n) / 4;
    let window = &series[start..];
    let sign = if window.iter().all(|&v| v > 0.0) {
        1.0
    } else if window.iter().all(|&v| v < 0.0) {
        -1.0
    } else {
        return 0.0;
    };
    let pts: Vec<(f64, f64)> = window
        .iter()
        .enumerate()
        .map(|(i, &v)| ((start + i) as f64 * dt, (sign * v).ln()))
        .collect();
    let m = pts.len() as f64;
    let tx: f64 = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ty: f64 = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tx).powi(2)).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum();
    let slope = sxy / sxx;
    let lambda = -slope;
    let ln_a = ty - slope * tx;
    let rate = lambda + s;
    if !(rate > 0.0) || !ln_a.is_finite() {
        return 0.0;
    }
    sign * (ln_a - rate * t_end).exp() / rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let dt = 1.0 / n as f64;
        (0..=n).map(|k| f(k as f64 * dt)).collect()
    }

    #[test]
    fn constant_has_zero_derivative() {
        let t = build_l1_table(0.4, 0.1, 10).unwrap();
        assert!(t.apply(&[5.0; 11]).unwrap().iter().all(|&v| v == 0.0));
        let r = build_right_table(0.4, 0.1, 10).unwrap();
        assert!(r.apply(&[5.0; 11]).unwrap().iter().all(|&v| v == 0.0));
        for m in 0..=10 {
            let s: f64 = (0..=10).map(|k| t.entry(m, k)).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn linear_series_is_exact() {
        let n = 64;
        let t = build_l1_table(0.5, 1.0 / n as f64, n).unwrap();
        let d = t.apply(&grid(n, |x| x)).unwrap();
        assert!((d[n] - 1.0 / gamma(1.5)).abs() < 1e-12);
        assert!((1.0 / gamma(1.5) - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-12);
    }

    #[test]
    fn quadratic_converges_to_monomial_formula() {
        let beta = 0.3;
        let exact = 2.0 / gamma(3.0 - beta);
        let err = |n: usize| {
            let t = build_l1_table(beta, 1.0 / n as f64, n).unwrap();
            (t.apply(&grid(n, |x| x * x)).unwrap()[n] - exact).abs()
        };
        assert!(err(512) < 1e-3);
        assert!(err(256) > err(512));
    }

    #[test]
    fn multiterm_matches_linearity_oracle() {
        let spec = FracOrderSpec::new(vec![vec![(0.3, 1.0), (0.7, 2.0)]]).unwrap();
        let n = 128;
        let v = grid(n, |x| x);
        let d = apply_multiterm(&spec, 0, &v, 1.0 / n as f64).unwrap();
        let exact = 1.0 / gamma(1.7) + 2.0 / gamma(1.3);
        // reference values from an independent Gamma implementation
        assert!((exact - 3.3290324226182686).abs() < 1e-12);
        assert!((2.0 / gamma(2.7) - 1.2947616535572537).abs() < 1e-12);
        assert!((d[n] - exact).abs() < 1e-11);
        assert!(apply_multiterm(&spec, 1, &v, 0.1).is_err());
        assert!(apply_multiterm(&spec, 0, &[0.0; 9], 0.1).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(build_l1_table(0.0, 0.1, 4).is_err());
        assert!(build_l1_table(1.0, 0.1, 4).is_err());
        assert!(FracOrderSpec::new(vec![vec![(0.7, 1.0), (0.3, 1.0)]]).is_err());
        assert!(FracOrderSpec::new(vec![vec![(0.5, 0.0)]]).is_err());
    }

    #[test]
    fn laplace_examples() {
        let dt = 0.01;
        let v: Vec<f64> = (0..=3000).map(|k| (-(k as f64) * dt).exp()).collect();
        assert!((laplace_numeric(&v, dt, 1.0).unwrap() - 0.5).abs() < 1e-4);
        // Short record: the fitted tail carries the rest.
        let v: Vec<f64> = (0..=400).map(|k| (-(k as f64) * dt).exp()).collect();
        assert!((laplace_numeric(&v, dt, 1.0).unwrap() - 0.5).abs() < 1e-4);
        let v: Vec<f64> = (0..=1000).map(|k| k as f64 * dt).collect();
        let exact = (1.0 - (-20.0f64).exp() * 21.0) / 4.0;
        assert!((laplace_numeric(&v, dt, 2.0).unwrap() - exact).abs() < 1e-4);
        assert_eq!(laplace_numeric(&[0.0; 20], dt, 1.0).unwrap(), 0.0);
        assert!(laplace_numeric(&[1.0; 20], dt, 0.0).is_err());
        assert!(laplace_numeric(&[1.0; 5], dt, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn right_table_is_reversed_left(beta in 0.05f64..0.95, v in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let n = v.len() - 1;
            let left = build_l1_table(beta, 0.05, n).unwrap();
            let right = build_right_table(beta, 0.05, n).unwrap();
            let rev: Vec<f64> = v.iter().rev().copied().collect();
            let mut expect = left.apply(&rev).unwrap();
            expect.reverse();
            prop_assert_eq!(right.apply(&v).unwrap(), expect);
            for m in 0..=n { for k in 0..=n {
                prop_assert_eq!(right.entry(m, k), left.entry(n - m, n - k));
            }}
        }

        #[test]
        fn left_and_right_are_adjoint(beta in 0.05f64..0.95,
                                       u in proptest::collection::vec(-2.0f64..2.0, 16),
                                       w in proptest::collection::vec(-2.0f64..2.0, 16)) {
            let n = u.len() - 1;
            let mut u = u; u[0] = 0.0;
            let mut w = w; w[n] = 0.0;
            let l = build_l1_table(beta, 0.03, n).unwrap().apply(&u).unwrap();
            let r = build_right_table(beta, 0.03, n).unwrap().apply(&w).unwrap();
            let lhs: f64 = l.iter().zip(&w).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn multiterm_is_linear(a in proptest::collection::vec(-1.0f64..1.0, 10),
                               b in proptest::collection::vec(-1.0f64..1.0, 10)) {
            let spec = FracOrderSpec::new(vec![vec![(0.25, 0.5), (0.6, 1.5)]]).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let da = apply_multiterm(&spec, 0, &a, 0.1).unwrap();
            let db = apply_multiterm(&spec, 0, &b, 0.1).unwrap();
            let ds = apply_multiterm(&spec, 0, &sum, 0.1).unwrap();
            for k in 0..10 {
                prop_assert!((ds[k] - da[k] - db[k]).abs() <= 1e-12 * (1.0 + ds[k].abs()));
            }
        }
    }
}
