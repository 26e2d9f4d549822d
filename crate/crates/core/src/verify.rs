//! Invariant suite at desk scale, plus the random admissible instances used by
//! the maximum-principle checks.

use crate::domain::{build_layout, DomainLayout, Selector, Side};
use crate::error::Result;
use crate::forward::{
    solve_space_with, solve_time_fractional, solve_time_fractional_direct, Interaction, Potential, SourceTerm,
    SpaceOperators, SystemSpec,
};
use crate::fractime::{build_l1_table, FracOrderSpec};
use crate::inverse::{
    interaction_data, recover_interaction, recover_potential_space, recover_potential_time, solve_adjoint_space,
    solve_adjoint_time, space_potential_data, time_potential_data, AdjointForm,
    LambdaChoice, SourceBasis, NOISELESS_LAMBDA,
};
use crate::inverse::adjoint::staggered_pairing;
use crate::linearize::{fd_first_order_error, fitted_slope, solve_nonlinear};
use crate::measure::{pair_lambda1, pair_lambda2, synthesize_data, MeasureKind, MeasurementWeight, Region};
use crate::models::{build_preset, GrayScottParams, PresetId, SchnakenbergParams};
use crate::nonlocal_op::{assemble_nonlocal, green_identity_residual, KernelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Measured quantity compared against `threshold`.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn at_most(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        CheckOutcome { name: name.into(), passed: value <= threshold, value, threshold, detail }
    }

    fn at_least(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        CheckOutcome { name: name.into(), passed: value >= threshold, value, threshold, detail }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        CheckOutcome { name: name.into(), passed: false, value: f64::NAN, threshold: f64::NAN, detail: err.to_string() }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<32} value {:.3e} threshold {:.3e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

/// Which solver a random instance targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstanceKind {
    Space,
    Time,
}

/// One or two (order, weight) pairs with strictly increasing orders.
fn increasing_terms(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let a = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        return vec![(a, rng.random_range(0.2..2.0))];
    }
    let b = rng.random_range(lo..hi);
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    let b = b.max(a + 0.02).min(hi);
    if b <= a {
        return vec![(a, rng.random_range(0.2..2.0))];
    }
    vec![(a, rng.random_range(0.2..2.0)), (b, rng.random_range(0.2..2.0))]
}

/// Random admissible instance: p ≤ 0, q ≥ 0, a small admissible F, random
/// kernel or orders, and a random drift.
pub fn random_instance(kind: InstanceKind, layout: &DomainLayout, rng: &mut ChaCha8Rng) -> Result<(SystemSpec, SourceTerm)> {
    let m = rng.random_range(1..=2usize);
    let mut spec = match kind {
        InstanceKind::Space => {
            let terms = increasing_terms(rng, 0.1, 0.9);
            SystemSpec::space(m, KernelSpec::new(&terms)?, layout)
        }
        InstanceKind::Time => {
            let orders = (0..m)
                .map(|_| increasing_terms(rng, 0.1, 0.95))
                .collect();
            let d = (0..m).map(|_| rng.random_range(0.2..2.0)).collect();
            SystemSpec::time(m, FracOrderSpec::new(orders)?, d, layout)
        }
    };
    let mut f = Interaction::new(m);
    for i in 0..m {
        let c = rng.random_range(-0.5..0.5);
        let mut k = vec![0u32; m];
        k[i] = 2;
        f.insert(i, k, c)?;
        if m == 2 {
            let mut k = vec![1u32; 2];
            k[i] = 1;
            f.insert(i, k, rng.random_range(-0.5..0.5))?;
        }
    }
    spec = spec.with_interaction(f);
    for i in 0..m {
        let (a0, a1, a2): (f64, f64, f64) = (rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let p = if rng.random_bool(0.5) {
            Potential::from_fn(layout, move |x| -(a0 + a1.abs() * x[0]))
        } else {
            Potential::transient_from_fn(layout, move |x, t| -(a0 + a2 * (x[0] * t)))
        };
        spec = spec.with_potential(i, p);
        let alpha: Vec<f64> = (0..layout.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        spec = spec.with_alpha(i, alpha);
    }
    let amp: Vec<(f64, f64, f64)> =
        (0..m).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.5..8.0), rng.random_range(0.0..2.0))).collect();
    let q = SourceTerm::from_fn(layout, m, |s, x, t| {
        let (a, k, w) = amp[s];
        (a * ((k * x[0]).sin() + 1.0) * (1.0 + (w * t).cos())).max(0.0)
    });
    Ok((spec, q))
}

/// Smallest value over `count` random instances.
pub fn maximum_principle_min(kind: InstanceKind, layout: &DomainLayout, count: usize, seed: u64) -> Result<f64> {
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
            let (spec, q) = random_instance(kind, layout, &mut rng)?;
            let u = match kind {
                InstanceKind::Space => solve_space_with(&SpaceOperators::new(layout, &spec)?, &spec, &q, layout)?.u,
                InstanceKind::Time => solve_time_fractional(&spec, &q, layout)?.u,
            };
            Ok(u.min())
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(f64::INFINITY, f64::min))
}

fn check(name: &str, f: impl FnOnce() -> Result<CheckOutcome>) -> CheckOutcome {
    f().unwrap_or_else(|e| CheckOutcome::failed(name, e))
}

/// Runs every invariant check at small size.
pub fn run_suite(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(check("green_identity", || {
        let l = build_layout(1, 16, 0.25, &Selector::All, &Selector::All, 1.0, 4)?;
        let op = assemble_nonlocal(&l, &KernelSpec::new(&[(0.3, 1.0), (0.7, 1.0)])?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let u: Vec<f64> = (0..l.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..l.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.max(green_identity_residual(&l, &op, &u, &v)?);
        }
        Ok(CheckOutcome::at_most("green_identity", worst, 1e-10, "10 random pairs".into()))
    }));
    out.push(check("caputo_l1_order", || {
        let beta = 0.5;
        let exact = 2.0 / gamma(3.0 - beta);
        let errs: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let dt = 1.0 / n as f64;
                let v: Vec<f64> = (0..=n).map(|k| (k as f64 * dt).powi(2)).collect();
                let d = build_l1_table(beta, dt, n)?.apply(&v)?;
                Ok((d[n] - exact).abs())
            })
            .collect::<Result<_>>()?;
        let order = (errs[1] / errs[2]).log2();
        Ok(CheckOutcome::at_least("caputo_l1_order", order, 2.0 - beta - 0.2, format!("errors {:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2])))
    }));
    for (name, kind) in [("maximum_principle_space", InstanceKind::Space), ("maximum_principle_time", InstanceKind::Time)] {
        out.push(check(name, || {
            let l = build_layout(1, 12, 0.25, &Selector::All, &Selector::All, 1.0, 16)?;
            let min = maximum_principle_min(kind, &l, 20, seed)?;
            Ok(CheckOutcome::at_least(name, min, -1e-12, "20 random instances".into()))
        }));
    }
    out.push(check("linearization_slope", || {
        let l = build_layout(1, 12, 0.25, &Selector::All, &Selector::All, 1.0, 8)?;
        let f = Interaction::new(1).with(0, &[2], 0.5)?;
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.5, 1.0)])?, &l)
            .with_potential(0, Potential::constant(&l, -0.5))
            .with_interaction(f);
        let g = SourceTerm::from_fn(&l, 1, |_, x, t| 1.0 + x[0] * t);
        let eps = [1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = eps.iter().map(|&e| fd_first_order_error(&spec, &g, &l, e)).collect::<Result<_>>()?;
        let slope = fitted_slope(&eps, &errs);
        Ok(CheckOutcome { name: "linearization_slope".into(), passed: (slope - 1.0).abs() <= 0.2, value: slope, threshold: 1.0, detail: "slope 1 ± 0.2".into() })
    }));
    out.push(check("adjoint_duality_space", || {
        let l = build_layout(1, 12, 0.25, &Selector::Side(Side::Right), &Selector::All, 1.0, 8)?;
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.4, 1.0)])?, &l).with_potential(0, Potential::constant(&l, -0.3));
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, t| t);
        let q = SourceTerm::from_fn(&l, 1, |_, x, t| 1.0 + x[0] * t);
        let u = solve_nonlinear(&spec, &q, &l)?;
        let op = assemble_nonlocal(&l, spec.kernel.as_ref().expect("kernel"))?;
        let lhs = pair_lambda1(&u, &h, &l, &op, &spec.alpha)?[0];
        let w = solve_adjoint_space(&spec, &h, &l, AdjointForm::Discrete)?;
        let rhs = -staggered_pairing(&q.q, &w, &l)[0];
        let positive = w.positive_slice(&l, 0).is_some();
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        Ok(CheckOutcome {
            passed: rel <= 1e-9 && positive,
            ..CheckOutcome::at_most("adjoint_duality_space", rel, 1e-9, format!("positive slice {positive}"))
        })
    }));
    out.push(check("adjoint_duality_time", || {
        let l = build_layout(1, 12, 0.25, &Selector::All, &Selector::Side(Side::Left), 1.0, 8)?;
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.6)?, vec![1.0], &l).with_potential(0, Potential::constant(&l, -0.3));
        let h = MeasurementWeight::from_fn(&l, 1, Region::Gamma, |_, _, _| 1.0);
        let q = SourceTerm::from_fn(&l, 1, |_, x, t| 1.0 + x[0] * t);
        let u = solve_nonlinear(&spec, &q, &l)?;
        let lhs = pair_lambda2(&u, &h, &l)?[0];
        let w = solve_adjoint_time(&spec, &h, &l, AdjointForm::Discrete)?;
        let rhs = -staggered_pairing(&q.q, &w, &l)[0];
        let min = w.interior_min(&l, 0);
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        Ok(CheckOutcome {
            passed: rel <= 1e-9 && min > 0.0,
            ..CheckOutcome::at_most("adjoint_duality_time", rel, 1e-9, format!("interior min {min:.2e}"))
        })
    }));
    out.push(check("drift_round_trip", || {
        let l = build_layout(1, 16, 0.25, &Selector::All, &Selector::All, 1.0, 16)?;
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5)?, vec![1.0], &l)
            .with_alpha(0, vec![1.0])
            .with_potential(0, Potential::constant(&l, -0.2));
        let q = SourceTerm::from_fn(&l, 1, |_, x, t| (1.0 + x[0]) * t);
        let a = solve_time_fractional(&spec, &q, &l)?.u;
        let b = solve_time_fractional_direct(&spec, &q, &l)?.u;
        let rel = a.max_abs_diff(&b) / a.max_abs();
        Ok(CheckOutcome::at_most("drift_round_trip", rel, 1e-8, String::new()))
    }));
    out.push(check("potential_space_noiseless", || {
        let l = build_layout(1, 15, 0.25, &Selector::All, &Selector::All, 1.0, 16)?;
        let p = Potential::from_fn(&l, |x| -(1.0 + x[0]) / 2.0);
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.5, 0.1)])?, &l).with_potential(0, p.clone());
        let v: Vec<f64> = (0..l.n_levels()).map(|m| l.time(m)).collect();
        let basis = SourceBasis::hats(&l, l.n_interior, &v)?;
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, _| 1.0);
        let (d1, d2) = space_potential_data(&spec, &basis, &v, &h, &l, 0.0, seed)?;
        let r = recover_potential_space(&spec, &basis, &v, &d1, &d2, &h, &l, LambdaChoice::Fixed(NOISELESS_LAMBDA), Some(&[p]))?;
        Ok(CheckOutcome::at_most("potential_space_noiseless", r.rel_l2_error.unwrap_or(f64::NAN), 0.05, String::new()))
    }));
    out.push(check("potential_time_noiseless", || {
        let l = build_layout(1, 15, 0.25, &Selector::All, &Selector::Side(Side::Left), 1.0, 4)?;
        let p = Potential::transient_from_fn(&l, |x, t| -x[0] * (1.0 - x[0]) * (1.0 + t) / 4.0);
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5)?, vec![1.0], &l).with_potential(0, p.clone());
        let basis = SourceBasis::space_time_hats(&l, l.n_interior, l.n_time)?;
        let h = MeasurementWeight::from_fn(&l, 1, Region::Gamma, |_, _, _| 1.0);
        let data = time_potential_data(&spec, &basis, &h, &l, 0.0, seed)?;
        let r = recover_potential_time(&spec, &basis, &data, &h, &l, LambdaChoice::Fixed(NOISELESS_LAMBDA), Some(&[p]))?;
        Ok(CheckOutcome {
            passed: r.rel_l2_error.unwrap_or(f64::NAN) <= 0.05 && r.masked_fraction() <= 0.1,
            ..CheckOutcome::at_most("potential_time_noiseless", r.rel_l2_error.unwrap_or(f64::NAN), 0.05, format!("masked {:.3}", r.masked_fraction()))
        })
    }));
    out.push(check("interaction_recovery", || {
        let l = build_layout(1, 10, 0.25, &Selector::Side(Side::Right), &Selector::All, 1.0, 8)?;
        let preset = build_preset(&PresetId::GrayScott(GrayScottParams { gamma: 0.04, c: 0.06, m: 0.04, diffusion: [1.0, 1.0], beta: [0.5, 0.5] }), &l)?;
        let f = preset.spec.interaction.clone();
        let mut spec = SystemSpec::space(2, KernelSpec::new(&[(0.5, 1.0)])?, &l).with_interaction(f.clone());
        spec.potential = preset.spec.potential.clone();
        let h = MeasurementWeight::from_fn(&l, 2, Region::Accessible, |_, _, _| 1.0);
        let sources = vec![
            SourceTerm::from_fn(&l, 2, |s, _, t| t * (1.0 + s as f64)),
            SourceTerm::from_fn(&l, 2, |_, x, t| t * t * (1.0 + x[0])),
            SourceTerm::from_fn(&l, 2, |s, x, t| t * (3.0 * x[0]).sin().abs() * (2.0 - s as f64 * t)),
        ];
        let data = interaction_data(&spec, &sources, &h, &l, MeasureKind::Lambda1, 3)?;
        let (_, r) = recover_interaction(&spec, &data, &h, &l, 3, Some(&f))?;
        Ok(CheckOutcome::at_most("interaction_recovery", r.max_abs_error.unwrap_or(f64::NAN), 1e-6, String::new()))
    }));
    out.push(check("preset_admissibility", || {
        let l = build_layout(1, 8, 0.25, &Selector::All, &Selector::All, 1.0, 4)?;
        let gs = build_preset(&PresetId::GrayScott(GrayScottParams { gamma: 0.04, c: 0.06, m: 1.0, diffusion: [1.0, 1.0], beta: [0.5, 0.5] }), &l)?;
        let sk = build_preset(&PresetId::Schnakenberg(SchnakenbergParams { gamma: 1.0, c: 0.5, diffusion: [1.0, 1.0], beta: [0.5, 0.5] }), &l)?;
        let mut bad = 0usize;
        for p in [&gs, &sk] {
            bad += usize::from(p.spec.interaction.validate(p.spec.max_order).is_err());
        }
        let exchange = gs.spec.interaction.coefficient(0, &[1, 2]) + gs.spec.interaction.coefficient(1, &[1, 2]);
        Ok(CheckOutcome::at_most("preset_admissibility", bad as f64 + exchange.abs(), 0.0, "Gray–Scott exchange cancels".into()))
    }));
    out.push(check("data_determinism", || {
        let l = build_layout(1, 8, 0.25, &Selector::All, &Selector::All, 1.0, 4)?;
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.5, 1.0)])?, &l).with_potential(0, Potential::constant(&l, -0.5));
        let basis = SourceBasis::hats(&l, 4, &(0..l.n_levels()).map(|m| l.time(m)).collect::<Vec<_>>())?.sources(&l, 1);
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, _| 1.0);
        let a = synthesize_data(&spec, &basis, &h, &l, MeasureKind::Lambda1, 1e-2, seed)?;
        let b = synthesize_data(&spec, &basis, &h, &l, MeasureKind::Lambda1, 1e-2, seed)?;
        let same = a.to_csv() == b.to_csv() && a.series_csv(l.dt) == b.series_csv(l.dt);
        Ok(CheckOutcome::at_most("data_determinism", if same { 0.0 } else { 1.0 }, 0.0, "identical seed, identical CSV".into()))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_defaults() {
        let out = run_suite(7);
        for o in &out {
            assert!(o.passed, "{}", o.line());
        }
        assert_eq!(out.len(), 13);
    }

    #[test]
    fn random_instances_are_admissible() {
        let l = build_layout(1, 8, 0.25, &Selector::All, &Selector::All, 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [InstanceKind::Space, InstanceKind::Time] {
            for _ in 0..10 {
                let (spec, q) = random_instance(kind, &l, &mut rng).unwrap();
                spec.validate(&l).unwrap();
                assert!(q.min() >= 0.0);
            }
        }
    }
}
