//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails.

use nonlocal_inverse::domain::{build_layout, DomainLayout, Selector, Side};
use nonlocal_inverse::forward::{
    solve_time_fractional, solve_time_fractional_direct, Interaction, Potential, SourceTerm, SystemSpec,
};
use nonlocal_inverse::fractime::{build_l1_table, FracOrderSpec};
use nonlocal_inverse::inverse::adjoint::trapezoid_pairing;
use nonlocal_inverse::inverse::{
    admissible_indices, discriminate_orders, interaction_data, lambda3_discrimination, order_discrimination_diagnostic,
    probe_series, recover_interaction, recover_orders, recover_potential_space, recover_potential_time,
    solve_adjoint_space, solve_adjoint_time, space_potential_data, time_potential_data, AdjointForm, LambdaChoice,
    OrderCandidate, OrderProbeSpec, SourceBasis, NOISELESS_LAMBDA,
};
use nonlocal_inverse::linearize::{fd_first_order_error, fd_second_order_error, fitted_slope, solve_nonlinear};
use nonlocal_inverse::measure::{pair_lambda1, pair_lambda2, MeasureKind, MeasurementWeight, Region};
use nonlocal_inverse::models::{build_preset, GrayScottParams, PresetId};
use nonlocal_inverse::nonlocal_op::{assemble_nonlocal, green_identity_residual, KernelSpec};
use nonlocal_inverse::verify::{maximum_principle_min, InstanceKind};
use nonlocal_inverse::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;
use std::time::Instant;

struct Outcome {
    id: usize,
    passed: bool,
    summary: String,
}

fn report(id: usize, passed: bool, summary: String) -> Outcome {
    Outcome { id, passed, summary }
}

fn layout_1d(n: usize, acc: Selector, gamma: Selector, t: f64, nt: usize) -> DomainLayout {
    build_layout(1, n, 0.25, &acc, &gamma, t, nt).unwrap()
}

fn c1_green_identity() -> Result<Outcome> {
    let start = Instant::now();
    let l = layout_1d(32, Selector::All, Selector::All, 1.0, 4);
    let op = assemble_nonlocal(&l, &KernelSpec::new(&[(0.3, 1.0), (0.7, 1.0)])?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u: Vec<f64> = (0..l.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..l.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(green_identity_residual(&l, &op, &u, &v)?);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(report(1, worst <= 1e-10 && secs < 1.0, format!("Green identity residual {worst:.2e} (≤ 1e-10), {secs:.3} s (< 1 s)")))
}

fn c2_caputo_order() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for beta in [0.3, 0.5, 0.8] {
        let exact = 2.0 / gamma(3.0 - beta);
        let errs: Vec<f64> = [64usize, 128, 256]
            .iter()
            .map(|&n| {
                let dt = 1.0 / n as f64;
                let v: Vec<f64> = (0..=n).map(|k| (k as f64 * dt).powi(2)).collect();
                Ok((build_l1_table(beta, dt, n)?.apply(&v)?[n] - exact).abs())
            })
            .collect::<Result<_>>()?;
        let orders = [(errs[0] / errs[1]).log2(), (errs[1] / errs[2]).log2()];
        let need = 2.0 - beta - 0.2;
        pass &= orders.iter().all(|&o| o >= need);
        parts.push(format!("β={beta}: {:.3}, {:.3} (≥ {need:.1})", orders[0], orders[1]));
    }
    Ok(report(2, pass, format!("L1 orders {}", parts.join("; "))))
}

fn c3_maximum_principle() -> Result<Outcome> {
    let l = layout_1d(32, Selector::All, Selector::All, 1.0, 128);
    let start = Instant::now();
    let space = maximum_principle_min(InstanceKind::Space, &l, 200, 11)?;
    let time = maximum_principle_min(InstanceKind::Time, &l, 200, 12)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(report(
        3,
        space >= -1e-12 && time >= -1e-12 && secs < 60.0,
        format!("min u space {space:.3e}, time {time:.3e} (≥ -1e-12), 400 instances in {secs:.1} s (< 60 s)"),
    ))
}

fn c4_linearization() -> Result<Outcome> {
    let l = layout_1d(16, Selector::All, Selector::All, 1.0, 16);
    let f = Interaction::new(1).with(0, &[2], 0.5)?.with(0, &[3], -0.2)?;
    let spec = SystemSpec::space(1, KernelSpec::new(&[(0.5, 1.0)])?, &l)
        .with_potential(0, Potential::constant(&l, -0.5))
        .with_interaction(f);
    let g1 = SourceTerm::from_fn(&l, 1, |_, x, t| 1.0 + x[0] * t);
    let g2 = SourceTerm::from_fn(&l, 1, |_, x, t| t * (3.0 * x[0]).cos().abs());
    let eps = [1e-2, 5e-3, 2.5e-3];
    let e1: Vec<f64> = eps.iter().map(|&e| fd_first_order_error(&spec, &g1, &l, e)).collect::<Result<_>>()?;
    let e2: Vec<f64> = eps.iter().map(|&e| fd_second_order_error(&spec, &g1, &g2, &l, e)).collect::<Result<_>>()?;
    let (s1, s2) = (fitted_slope(&eps, &e1), fitted_slope(&eps, &e2));
    Ok(report(
        4,
        (s1 - 1.0).abs() <= 0.2 && (s2 - 1.0).abs() <= 0.2,
        format!("FD slopes first order {s1:.3}, second order {s2:.3} (1 ± 0.2)"),
    ))
}

/// Gap between the measured pairing and the quadrature of q·w with the
/// directly discretized adjoint.
fn duality_gap(n: usize, space: bool) -> Result<f64> {
    let q = |_: usize, x: [f64; 2], t: f64| (1.0 + x[0]) * (1.0 + t);
    if space {
        let l = layout_1d(n, Selector::Side(Side::Right), Selector::All, 1.0, n);
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.4, 1.0)])?, &l).with_potential(0, Potential::constant(&l, -0.5));
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, t| t);
        let src = SourceTerm::from_fn(&l, 1, q);
        let u = solve_nonlinear(&spec, &src, &l)?;
        let op = assemble_nonlocal(&l, spec.kernel.as_ref().unwrap())?;
        let lhs = pair_lambda1(&u, &h, &l, &op, &spec.alpha)?[0];
        let w = solve_adjoint_space(&spec, &h, &l, AdjointForm::Pde)?;
        Ok((lhs + trapezoid_pairing(&src.q, &w, &l)[0]).abs())
    } else {
        let l = layout_1d(n, Selector::All, Selector::Side(Side::Left), 1.0, n);
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.6)?, vec![1.0], &l).with_potential(0, Potential::constant(&l, -0.5));
        let h = MeasurementWeight::from_fn(&l, 1, Region::Gamma, |_, _, t| t);
        let src = SourceTerm::from_fn(&l, 1, q);
        let u = solve_nonlinear(&spec, &src, &l)?;
        let lhs = pair_lambda2(&u, &h, &l)?[0];
        let w = solve_adjoint_time(&spec, &h, &l, AdjointForm::Pde)?;
        Ok((lhs + trapezoid_pairing(&src.q, &w, &l)[0]).abs())
    }
}

fn c5_duality() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, space) in [("Λ¹", true), ("Λ²", false)] {
        let gaps: Vec<f64> = [32usize, 64, 128].iter().map(|&n| duality_gap(n, space)).collect::<Result<_>>()?;
        let orders = [(gaps[0] / gaps[1]).log2(), (gaps[1] / gaps[2]).log2()];
        pass &= orders.iter().all(|&o| o >= 1.0);
        parts.push(format!(
            "{name} gaps {:.2e} {:.2e} {:.2e} orders {:.3} {:.3}",
            gaps[0], gaps[1], gaps[2], orders[0], orders[1]
        ));
    }
    Ok(report(5, pass, format!("duality (order ≥ 1) {}", parts.join("; "))))
}

fn space_potential_error(kernel: (f64, f64), noise: f64, choice: LambdaChoice) -> Result<f64> {
    let l = layout_1d(32, Selector::All, Selector::All, 1.0, 32);
    let p = Potential::from_fn(&l, |x| -(1.0 + x[0]) / 2.0);
    let spec = SystemSpec::space(1, KernelSpec::new(&[kernel])?, &l).with_potential(0, p.clone());
    let v: Vec<f64> = (0..l.n_levels()).map(|m| l.time(m)).collect();
    let basis = SourceBasis::hats(&l, 32, &v)?;
    let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, _| 1.0);
    let (d1, d2) = space_potential_data(&spec, &basis, &v, &h, &l, noise, 2024)?;
    let r = recover_potential_space(&spec, &basis, &v, &d1, &d2, &h, &l, choice, Some(&[p]))?;
    Ok(r.rel_l2_error.unwrap_or(f64::NAN))
}

fn c6_space_potential() -> Result<Outcome> {
    let start = Instant::now();
    let kernel = (0.5, 0.1);
    let clean = space_potential_error(kernel, 0.0, LambdaChoice::Fixed(NOISELESS_LAMBDA))?;
    let noisy = space_potential_error(kernel, 1e-3, LambdaChoice::LCurve)?;
    let strong = space_potential_error((0.5, 1.0), 1e-3, LambdaChoice::LCurve)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(report(
        6,
        clean <= 0.05 && noisy <= 0.15 && secs < 300.0,
        format!(
            "space potential rel-L² noiseless {clean:.2e} (≤ 5%), 0.1% noise {noisy:.3} (≤ 15%), kernel s=0.5 c=0.1, {secs:.1} s; \
             sensitivity: c=1 gives {strong:.3}"
        ),
    ))
}

fn c7_time_potential() -> Result<Outcome> {
    let l = layout_1d(32, Selector::All, Selector::Side(Side::Left), 1.0, 8);
    let p = Potential::transient_from_fn(&l, |x, t| -x[0] * (1.0 - x[0]) * (1.0 + t) / 4.0);
    let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5)?, vec![1.0], &l).with_potential(0, p.clone());
    let basis = SourceBasis::space_time_hats(&l, 32, 8)?;
    let h = MeasurementWeight::from_fn(&l, 1, Region::Gamma, |_, _, _| 1.0);
    let data = time_potential_data(&spec, &basis, &h, &l, 0.0, 7)?;
    let r = recover_potential_time(&spec, &basis, &data, &h, &l, LambdaChoice::Fixed(NOISELESS_LAMBDA), Some(&[p]))?;
    let err = r.rel_l2_error.unwrap_or(f64::NAN);
    let masked = r.masked_fraction();
    Ok(report(7, err <= 0.05 && masked <= 0.1, format!("time potential rel-L² off mask {err:.2e} (≤ 5%), mask {masked:.3} (≤ 10%)")))
}

fn c8_interaction() -> Result<Outcome> {
    let l = layout_1d(32, Selector::All, Selector::All, 1.0, 16);
    let preset = build_preset(
        &PresetId::GrayScott(GrayScottParams { gamma: 0.04, c: 0.06, m: 1.0, diffusion: [1.0, 1.0], beta: [0.5, 0.5] }),
        &l,
    )?;
    let spec = preset.spec;
    let truth = spec.interaction.clone();
    let h = MeasurementWeight::from_fn(&l, 2, Region::Gamma, |s, _, t| 1.0 + 0.5 * s as f64 * t);
    let sources = vec![
        SourceTerm::from_fn(&l, 2, |s, x, t| t * (1.0 + s as f64 * x[0])),
        SourceTerm::from_fn(&l, 2, |s, x, t| t * t * (2.0 - x[0]) * (1.0 + 0.5 * s as f64)),
        SourceTerm::from_fn(&l, 2, |s, x, t| t.sqrt() * (std::f64::consts::PI * x[0]).sin() * (1.0 + s as f64 * t)),
    ];
    let data = interaction_data(&spec, &sources, &h, &l, MeasureKind::Lambda2, 3)?;
    let (got, _) = recover_interaction(&spec, &data, &h, &l, 3, Some(&truth))?;
    let mut cubic = 0.0f64;
    let mut quad = 0.0f64;
    for i in 0..2 {
        for k in admissible_indices(2, i, 3) {
            cubic = cubic.max((got.coefficient(i, &k) - truth.coefficient(i, &k)).abs());
        }
        for k in admissible_indices(2, i, 2) {
            quad = quad.max(got.coefficient(i, &k).abs());
        }
    }
    Ok(report(
        8,
        cubic <= 1e-3 && quad <= 1e-6,
        format!(
            "Gray–Scott cubic error {cubic:.2e} (≤ 1e-3), degree-2 max {quad:.2e} (≤ 1e-6), F1:(1,2) = {:.6}, F2:(1,2) = {:.6}",
            got.coefficient(0, &[1, 2]),
            got.coefficient(1, &[1, 2])
        ),
    ))
}

fn c9_orders() -> Result<Outcome> {
    let l = layout_1d(32, Selector::All, Selector::All, 4.0, 3200);
    let probe = OrderProbeSpec::new(&l, 1.0, |_| 1.0, vec![0.5, 1.0, 2.0, 4.0, 8.0])?;
    let single = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5)?, vec![1.0], &l).with_potential(0, Potential::constant(&l, -1.0));
    let series = probe_series(&single, &probe, &l, 0.0, 0)?;
    let (fits, _) = recover_orders(&single, &series, &probe, &l, &[OrderCandidate::Free(1)], None)?;
    let beta = fits[0].betas[0];

    let two = SystemSpec::time(1, FracOrderSpec::new(vec![vec![(0.3, 1.0), (0.7, 1.0)]])?, vec![1.0], &l)
        .with_potential(0, Potential::constant(&l, -1.0));
    let series = probe_series(&two, &probe, &l, 0.0, 0)?;
    let candidates = [OrderCandidate::Fixed(vec![0.3, 0.7]), OrderCandidate::Fixed(vec![0.5])];
    let (fits, _) = discriminate_orders(&two, 0, &series[0], &probe, &l, &candidates)?;
    let ratio = fits[1].misfit / fits[0].misfit;

    let coarse = layout_1d(32, Selector::All, Selector::All, 1.0, 8);
    let probe_c = OrderProbeSpec::new(&coarse, 1.0, |_| 1.0, vec![1.0])?;
    let spec_c = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5)?, vec![1.0], &coarse)
        .with_potential(0, Potential::constant(&coarse, -1.0));
    let diag = order_discrimination_diagnostic(0.3, 0.7, 1.0, &spec_c, 0, &probe_c, &coarse, &[1e-1, 1e-2, 1e-3])?;
    let w0 = diag.extra["w0_x0"];
    Ok(report(
        9,
        (beta - 0.5).abs() <= 1e-2 && ratio >= 10.0 && w0 < 0.0,
        format!(
            "β̂ = {beta:.5} (|β̂−0.5| ≤ 1e-2), misfit ratio [0.5] vs [0.3,0.7] = {ratio:.2} (≥ 10), w₀(x₀) = {w0:.3e} (< 0)"
        ),
    ))
}

fn c10_drift() -> Result<Outcome> {
    let l = layout_1d(32, Selector::All, Selector::All, 1.0, 32);
    let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5)?, vec![1.0], &l)
        .with_alpha(0, vec![1.0])
        .with_potential(0, Potential::constant(&l, -0.2));
    let q = SourceTerm::from_fn(&l, 1, |_, x, t| (1.0 + x[0]) * t);
    let a = solve_time_fractional(&spec, &q, &l)?.u;
    let b = solve_time_fractional_direct(&spec, &q, &l)?.u;
    let diff = a.max_abs_diff(&b);
    Ok(report(10, diff <= 1e-8, format!("drift removal vs direct max difference {diff:.2e} (≤ 1e-8)")))
}

fn c11_lambda3() -> Result<Outcome> {
    let l = layout_1d(32, Selector::All, Selector::All, 1.0, 128);
    let a = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.3)?, vec![1.0], &l).with_potential(0, Potential::constant(&l, -1.0));
    let b = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.7)?, vec![1.0], &l).with_potential(0, Potential::constant(&l, -1.0));
    let r = lambda3_discrimination(&a, &b, |_, x, t| (1.0 + t) * (1.0 + x[0]), &l)?;
    let ratio = r.extra["ratio"];
    Ok(report(
        11,
        ratio >= 10.0,
        format!(
            "Λ³ sup difference {:.3e}, noise floor {:.3e}, ratio {ratio:.2} (≥ 10)",
            r.extra["sup_difference"], r.extra["noise_floor"]
        ),
    ))
}

#[test]
fn acceptance_criteria() {
    type Criterion = (usize, fn() -> Result<Outcome>);
    let criteria: [Criterion; 11] = [
        (1, c1_green_identity),
        (2, c2_caputo_order),
        (3, c3_maximum_principle),
        (4, c4_linearization),
        (5, c5_duality),
        (6, c6_space_potential),
        (7, c7_time_potential),
        (8, c8_interaction),
        (9, c9_orders),
        (10, c10_drift),
        (11, c11_lambda3),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        let o = run().unwrap_or_else(|e| report(id, false, format!("error: {e}")));
        println!("criterion {:>2} {} {}", o.id, if o.passed { "PASS" } else { "FAIL" }, o.summary);
        if !o.passed {
            failed.push(o.id);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
