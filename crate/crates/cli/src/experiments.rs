//! One driver per experiment kind. Each writes its data files and returns a
//! summary plus a flag that is false when the run found a violation.

use crate::config::{eval_poly, BasisKind, Kind, RunConfig, Setup};
use crate::output::Output;
use anyhow::{bail, Context, Result};
use nonlocal_inverse::domain::DomainLayout;
use nonlocal_inverse::field::Field;
use nonlocal_inverse::forward::{solve_space_nonlocal, solve_time_fractional, SourceTerm, SystemKind, SystemSpec};
use nonlocal_inverse::inverse::{
    discriminate_orders, interaction_data, probe_series, recover_interaction, recover_orders, recover_potential_space,
    recover_potential_time, solve_adjoint_space, solve_adjoint_time, space_potential_data, time_potential_data,
    CandidateFit, OrderCandidate, OrderProbeSpec, ReconstructionReport, SourceBasis,
};
use nonlocal_inverse::linearize::{fd_first_order_error, fd_second_order_error, fitted_slope};
use nonlocal_inverse::measure::{add_noise, observe_point, pair};
use nonlocal_inverse::nonlocal_op::assemble_nonlocal;
use nonlocal_inverse::verify::run_suite;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fmt::Write as _;

pub struct RunResult {
    pub summary: Value,
    pub ok: bool,
}

/// `setup` is required for every kind except verify.
pub fn run(kind: Kind, cfg: &RunConfig, setup: Option<&Setup>, out: &mut Output) -> Result<RunResult> {
    let Some(setup) = setup else {
        return verify(cfg, out);
    };
    let mut r = match kind {
        Kind::Forward => forward(setup, out),
        Kind::Adjoint => adjoint(cfg, setup, out),
        Kind::Linearize => linearize(cfg, setup, out),
        Kind::InvertPotential => invert_potential(cfg, setup, out),
        Kind::InvertInteraction => invert_interaction(cfg, setup, out),
        Kind::InvertOrder => invert_order(cfg, setup, out),
        Kind::Verify => verify(cfg, out),
    }
    .with_context(|| format!("{} experiment", kind.name()))?;
    r.summary["warnings"] = json!(setup.warnings);
    Ok(r)
}

fn system_kind(spec: &SystemSpec) -> SystemKind {
    spec.kind().expect("validated spec")
}

/// species,level,t,node,x,y,class,value for every stored entry.
fn field_csv(u: &Field, layout: &DomainLayout) -> String {
    let mut s = String::from("species,level,t,node,x,y,class,value\n");
    for sp in 0..u.n_species {
        for m in 0..u.n_levels {
            let t = layout.time(m);
            for node in 0..u.n_nodes {
                let x = layout.coords(node);
                let _ = writeln!(
                    s,
                    "{sp},{m},{t:.16e},{node},{:.16e},{:.16e},{},{:.16e}",
                    x[0],
                    x[1],
                    layout.node_class[node].tag(),
                    u.get(sp, m, node)
                );
            }
        }
    }
    s
}

fn series_csv(series: &[Vec<f64>], layout: &DomainLayout) -> String {
    let mut s = String::from("species,level,t,value\n");
    for (sp, ser) in series.iter().enumerate() {
        for (m, v) in ser.iter().enumerate() {
            let _ = writeln!(s, "{sp},{m},{:.16e},{v:.16e}", layout.time(m));
        }
    }
    s
}

fn report_summary(r: &ReconstructionReport) -> Value {
    json!({
        "what": r.what,
        "rel_l2_error": r.rel_l2_error,
        "max_abs_error": r.max_abs_error,
        "masked_fraction": r.masked_fraction(),
        "lambda": r.lambda,
        "gram_condition": r.gram_condition,
        "residual_norms": r.residual_norms,
        "extra": r.extra,
    })
}

fn forward(s: &Setup, out: &mut Output) -> Result<RunResult> {
    let l = &s.layout;
    let (state, op) = match system_kind(&s.spec) {
        SystemKind::Space => {
            let op = assemble_nonlocal(l, s.spec.kernel.as_ref().expect("space kernel"))?;
            (solve_space_nonlocal(&s.spec, &s.source, l)?, Some(op))
        }
        SystemKind::Time => (solve_time_fractional(&s.spec, &s.source, l)?, None),
    };
    let values = pair(s.measure, &state.u, &s.weight, l, op.as_ref(), &s.spec.alpha)?;
    let series = observe_point(&state.u, l);
    out.write("state.csv", &field_csv(&state.u, l))?;
    out.write("point_series.csv", &series_csv(&series, l))?;
    let mut m = String::from("species,value\n");
    for (sp, v) in values.iter().enumerate() {
        let _ = writeln!(m, "{sp},{v:.16e}");
    }
    out.write("measurements.csv", &m)?;
    let min = state.min();
    let summary = json!({
        "min_u": min,
        "max_abs_u": state.u.max_abs(),
        "max_picard_iterations": state.picard_iterations.iter().max(),
        "measurement_kind": s.measure,
        "measurements": values,
        "observation_point": l.coords(l.obs_point_index),
    });
    Ok(RunResult { summary, ok: min.is_finite() })
}

fn adjoint(cfg: &RunConfig, s: &Setup, out: &mut Output) -> Result<RunResult> {
    let l = &s.layout;
    let form = cfg.inverse.adjoint_form;
    let w = match system_kind(&s.spec) {
        SystemKind::Space => solve_adjoint_space(&s.spec, &s.weight, l, form)?,
        SystemKind::Time => solve_adjoint_time(&s.spec, &s.weight, l, form)?,
    };
    out.write("adjoint.csv", &field_csv(&w.w, l))?;
    let mins: Vec<f64> = (0..s.spec.n_species).map(|sp| w.interior_min(l, sp)).collect();
    let slices: Vec<Option<usize>> = (0..s.spec.n_species).map(|sp| w.positive_slice(l, sp)).collect();
    let summary = json!({ "form": form, "interior_min": mins, "first_positive_level": slices });
    Ok(RunResult { summary, ok: mins.iter().all(|v| v.is_finite()) })
}

fn linearize(cfg: &RunConfig, s: &Setup, out: &mut Output) -> Result<RunResult> {
    let l = &s.layout;
    let eps = &cfg.inverse.eps;
    if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
        bail!("inverse.eps: need at least two positive amplitudes");
    }
    if s.spec.interaction.is_empty() {
        bail!("system.interaction: F = 0 makes the expansion exact; linearize needs a nonlinear system");
    }
    let g1 = &s.source;
    let mut g2 = SourceTerm::from_fn(l, s.spec.n_species, |_, x, t| (1.0 + x[0]) * t);
    for (a, b) in g2.q.data.iter_mut().zip(&g1.q.data) {
        *a *= b;
    }
    let mut csv = String::from("eps,first_order_error,second_order_error\n");
    let (mut e1, mut e2) = (Vec::new(), Vec::new());
    for &e in eps {
        e1.push(fd_first_order_error(&s.spec, g1, l, e)?);
        e2.push(fd_second_order_error(&s.spec, g1, &g2, l, e)?);
        let _ = writeln!(csv, "{e:.16e},{:.16e},{:.16e}", e1.last().unwrap(), e2.last().unwrap());
    }
    out.write("linearize.csv", &csv)?;
    let summary = json!({
        "first_order_slope": fitted_slope(eps, &e1),
        "second_order_slope": fitted_slope(eps, &e2),
    });
    Ok(RunResult { summary, ok: e1.iter().chain(&e2).all(|v| v.is_finite()) })
}

fn invert_potential(cfg: &RunConfig, s: &Setup, out: &mut Output) -> Result<RunResult> {
    let l = &s.layout;
    let inv = &cfg.inverse;
    let choice = cfg.lambda()?;
    let per_axis = inv.basis_per_axis.unwrap_or(l.n_interior);
    let report = match system_kind(&s.spec) {
        SystemKind::Space => {
            let v: Vec<f64> = (0..l.n_levels()).map(|m| eval_poly(&inv.probe, [0.0; 2], l.time(m))).collect();
            let basis = match inv.basis {
                BasisKind::Hats => SourceBasis::hats(l, per_axis, &v),
                BasisKind::Trigonometric => SourceBasis::trigonometric(l, per_axis, &v),
            }
            .context("inverse.basis")?;
            let (d1, d2) = space_potential_data(&s.spec, &basis, &v, &s.weight, l, inv.noise, cfg.seed)?;
            out.write("data_v.csv", &d1.to_csv())?;
            out.write("data_dv.csv", &d2.to_csv())?;
            recover_potential_space(&s.spec, &basis, &v, &d1, &d2, &s.weight, l, choice, Some(&s.spec.potential))?
        }
        SystemKind::Time => {
            if inv.basis != BasisKind::Hats {
                bail!("inverse.basis: time-fractional potentials use space-time hats");
            }
            let levels = inv.basis_levels.unwrap_or(l.n_time);
            let basis = SourceBasis::space_time_hats(l, per_axis, levels).context("inverse.basis_levels")?;
            let data = time_potential_data(&s.spec, &basis, &s.weight, l, inv.noise, cfg.seed)?;
            out.write("data.csv", &data.to_csv())?;
            recover_potential_time(&s.spec, &basis, &data, &s.weight, l, choice, Some(&s.spec.potential))?
        }
    };
    out.write("recovered.csv", &report.values_csv())?;
    out.write("report.json", &report.to_json())?;
    Ok(RunResult { summary: report_summary(&report), ok: true })
}

/// Source family used for interaction recovery.
fn interaction_sources(layout: &DomainLayout, m: usize, count: usize) -> Vec<SourceTerm> {
    (0..count)
        .map(|j| {
            let k = j as f64;
            SourceTerm::from_fn(layout, m, move |s, x, t| {
                t.powf(1.0 + 0.5 * k) * (1.0 + x[0].powi(j as i32 + 1) + 0.5 * x[1]) * (1.0 + 0.5 * s as f64 * t.powi(j as i32))
            })
        })
        .collect()
}

fn invert_interaction(cfg: &RunConfig, s: &Setup, out: &mut Output) -> Result<RunResult> {
    let l = &s.layout;
    let inv = &cfg.inverse;
    if inv.n_sources == 0 {
        bail!("inverse.n_sources: must be at least 1");
    }
    let sources = interaction_sources(l, s.spec.n_species, inv.n_sources);
    let mut data = interaction_data(&s.spec, &sources, &s.weight, l, s.measure, inv.max_degree)?;
    if inv.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in data.pairings.values_mut() {
            add_noise(v, inv.noise, &mut rng);
        }
    }
    let mut csv = String::from("sources,species,value\n");
    for (k, vals) in &data.pairings {
        let tag = k.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
        for (sp, v) in vals.iter().enumerate() {
            let _ = writeln!(csv, "{tag},{sp},{v:.16e}");
        }
    }
    out.write("pairings.csv", &csv)?;
    let (_, report) = recover_interaction(&s.spec, &data, &s.weight, l, inv.max_degree, Some(&s.spec.interaction))?;
    out.write("recovered.csv", &report.values_csv())?;
    out.write("report.json", &report.to_json())?;
    Ok(RunResult { summary: report_summary(&report), ok: true })
}

fn fits_csv(cands: &[OrderCandidate], fits: &[CandidateFit]) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(";");
    let mut s = String::from("candidate,betas,weights,misfit\n");
    for (c, f) in cands.iter().zip(fits) {
        let _ = writeln!(s, "\"{}\",{},{},{:.16e}", c.label(), join(&f.betas), join(&f.weights), f.misfit);
    }
    s
}

fn invert_order(cfg: &RunConfig, s: &Setup, out: &mut Output) -> Result<RunResult> {
    let l = &s.layout;
    let inv = &cfg.inverse;
    let frac = match (&s.spec.frac, system_kind(&s.spec)) {
        (Some(f), SystemKind::Time) => f.clone(),
        _ => bail!("system: order recovery needs a time-fractional model"),
    };
    let probe = OrderProbeSpec::new(l, inv.probe_a, |x| eval_poly(&inv.probe_f, x, 0.0), inv.probe_s.clone())
        .context("inverse.probe_*")?;
    let series = probe_series(&s.spec, &probe, l, inv.noise, cfg.seed)?;
    out.write("series.csv", &series_csv(&series, l))?;
    let m = s.spec.n_species;
    let mut cands = inv.candidates.clone();
    if cands.is_empty() {
        cands = (0..m).map(|sp| OrderCandidate::Free(frac.species[sp].len())).collect();
    }
    let (fits, report, ranked) = if cands.len() == m {
        let (fits, r) = recover_orders(&s.spec, &series, &probe, l, &cands, Some(&frac))?;
        (fits, r, cands.clone())
    } else {
        let sp = inv.species;
        if sp >= m {
            bail!("inverse.species: {sp} out of range");
        }
        let (fits, r) = discriminate_orders(&s.spec, sp, &series[sp], &probe, l, &cands)?;
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| fits[a].misfit.total_cmp(&fits[b].misfit));
        let ranked: Vec<OrderCandidate> = order.iter().map(|&k| cands[k].clone()).collect();
        let fits: Vec<CandidateFit> = order.iter().map(|&k| fits[k].clone()).collect();
        (fits, r, ranked)
    };
    out.write("fits.csv", &fits_csv(&ranked, &fits))?;
    out.write("report.json", &report.to_json())?;
    let mut summary = report_summary(&report);
    summary["best_candidate"] = json!(ranked.first().map(|c| c.label()));
    Ok(RunResult { summary, ok: true })
}

fn verify(cfg: &RunConfig, out: &mut Output) -> Result<RunResult> {
    let outcomes = run_suite(cfg.seed);
    let mut csv = String::from("name,passed,value,threshold,detail\n");
    for o in &outcomes {
        println!("{}", o.line());
        let _ = writeln!(csv, "{},{},{:.16e},{:.16e},\"{}\"", o.name, o.passed, o.value, o.threshold, o.detail.replace('"', "'"));
    }
    out.write("verify.csv", &csv)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    let summary = json!({ "checks": outcomes.len(), "failed": failed });
    Ok(RunResult { ok: failed.is_empty(), summary })
}
