//! Fractional orders from point observations.
//!
//! Under the probe g₂ = e^{−at} f(x) the first-order field of species i solves
//! (K − P + Σ_j b_j s^{β_j}) û = f/(s+a) in the Laplace domain. K − P is
//! symmetric, so û(x₀; s) = Σ_k c_k / ((λ_k + σ(s))(s+a)) with σ the
//! fractional symbol, and fitting σ to the transformed series recovers (β, b).

use super::report::ReconstructionReport;
use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::forward::{laplacian, solve_time_fractional, SourceTerm, SystemKind, SystemSpec};
use crate::fractime::{laplace_numeric, FracOrderSpec};
use crate::measure::add_noise;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// β lattice spacing for the outer search.
pub const LATTICE_STEP: f64 = 0.05;
pub const GOLDEN_ROUNDS: usize = 3;
/// Relative misfit gap below which two candidates are declared the same.
pub const MISFIT_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderProbeSpec {
    pub a: f64,
    /// f on every node; only interior values are used.
    pub f: Vec<f64>,
    pub s_samples: Vec<f64>,
}

impl OrderProbeSpec {
    pub fn new(layout: &DomainLayout, a: f64, f: impl Fn([f64; 2]) -> f64, s_samples: Vec<f64>) -> Result<Self> {
        let fv = (0..layout.n_nodes())
            .map(|x| if layout.interior_position(x).is_some() { f(layout.coords(x)) } else { 0.0 })
            .collect();
        let p = OrderProbeSpec { a, f: fv, s_samples };
        p.validate(layout)?;
        Ok(p)
    }

    pub fn validate(&self, layout: &DomainLayout) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::Input("probe decay rate must be positive".into()));
        }
        if self.f.len() != layout.n_nodes() || layout.interior().iter().any(|&x| !(self.f[x] > 0.0)) {
            return Err(Error::Input("probe profile must be positive on interior nodes".into()));
        }
        if self.s_samples.is_empty()
            || self.s_samples.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || self.s_samples.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Input("s samples must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    /// g₂ = e^{−at} f(x) on every species.
    pub fn source(&self, layout: &DomainLayout, n_species: usize) -> SourceTerm {
        let mut q = SourceTerm::zeros(layout, n_species);
        for s in 0..n_species {
            for m in 0..layout.n_levels() {
                let e = (-self.a * layout.time(m)).exp();
                for &x in layout.interior() {
                    q.q.set(s, m, x, e * self.f[x]);
                }
            }
        }
        q
    }
}

/// Λ³ series u^(1)(x₀, t_m) of the linear part under the probe, per species,
/// with multiplicative noise.
pub fn probe_series(
    truth: &SystemSpec,
    probe: &OrderProbeSpec,
    layout: &DomainLayout,
    noise_rel: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    probe.validate(layout)?;
    let lin = truth.linear_part();
    let u = solve_time_fractional(&lin, &probe.source(layout, lin.n_species), layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(lin.n_species);
    for s in 0..lin.n_species {
        let mut v = u.series(s, layout.obs_point_index);
        add_noise(&mut v, noise_rel, &mut rng);
        out.push(v);
    }
    Ok(out)
}

/// Spectral form of e_{x₀}ᵀ (K − P + σ)^{-1} f for one species.
#[derive(Clone, Debug)]
pub struct ResolventModel {
    pub lambdas: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
}

impl ResolventModel {
    pub fn new(spec: &SystemSpec, species: usize, probe: &OrderProbeSpec, layout: &DomainLayout) -> Result<Self> {
        let p = &spec.potential[species];
        if !p.is_stationary() {
            return Err(Error::Input("order recovery needs a stationary potential".into()));
        }
        let nodes = layout.interior();
        let mut k: DMatrix<f64> = laplacian(layout, spec.diffusion[species]);
        for (i, &x) in nodes.iter().enumerate() {
            k[(i, i)] -= p.at(0, x);
        }
        let eig = SymmetricEigen::new(k);
        let x0 = layout
            .interior_position(layout.obs_point_index)
            .ok_or_else(|| Error::Layout("observation point is not interior".into()))?;
        let f = DVector::from_iterator(nodes.len(), nodes.iter().map(|&x| probe.f[x]));
        let weights = (0..nodes.len())
            .map(|j| {
                let v = eig.eigenvectors.column(j);
                v[x0] * v.dot(&f)
            })
            .collect();
        Ok(ResolventModel { lambdas: eig.eigenvalues.iter().copied().collect(), weights, a: probe.a })
    }

    /// û(x₀; s) for symbol value σ.
    pub fn value(&self, s: f64, sigma: f64) -> f64 {
        self.lambdas.iter().zip(&self.weights).map(|(l, c)| c / (l + sigma)).sum::<f64>() / (s + self.a)
    }

    /// ∂û/∂σ.
    pub fn dsigma(&self, s: f64, sigma: f64) -> f64 {
        -self.lambdas.iter().zip(&self.weights).map(|(l, c)| c / (l + sigma).powi(2)).sum::<f64>() / (s + self.a)
    }
}

/// Order candidates for one species: orders searched freely, or held fixed
/// with only the weights fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderCandidate {
    Free(usize),
    Fixed(Vec<f64>),
}

impl OrderCandidate {
    pub fn label(&self) -> String {
        match self {
            OrderCandidate::Free(n) => format!("free{n}"),
            OrderCandidate::Fixed(b) => {
                let parts: Vec<String> = b.iter().map(|v| format!("{v}")).collect();
                format!("fixed({})", parts.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub betas: Vec<f64>,
    pub weights: Vec<f64>,
    pub misfit: f64,
}

/// Laplace samples of a series at the probe's s values.
pub fn laplace_samples(series: &[f64], dt: f64, probe: &OrderProbeSpec) -> Result<Vec<f64>> {
    probe.s_samples.iter().map(|&s| laplace_numeric(series, dt, s)).collect()
}

fn residuals(model: &ResolventModel, s: &[f64], data: &[f64], betas: &[f64], logb: &[f64]) -> DVector<f64> {
    DVector::from_fn(s.len(), |k, _| {
        let sigma: f64 = betas.iter().zip(logb).map(|(be, lb)| lb.exp() * s[k].powf(*be)).sum();
        (model.value(s[k], sigma) - data[k]) / data[k]
    })
}

/// Levenberg–Marquardt on ln b for fixed orders; returns (ln b, misfit).
fn fit_weights(model: &ResolventModel, s: &[f64], data: &[f64], betas: &[f64]) -> (Vec<f64>, f64) {
    let nb = betas.len();
    let mut logb = vec![0.0; nb];
    let mut r = residuals(model, s, data, betas, &logb);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..200 {
        let jac = DMatrix::from_fn(s.len(), nb, |k, j| {
            let sigma: f64 = betas.iter().zip(&logb).map(|(be, lb)| lb.exp() * s[k].powf(*be)).sum();
            model.dsigma(s[k], sigma) * logb[j].exp() * s[k].powf(betas[j]) / data[k]
        });
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj.clone();
            for j in 0..nb {
                m[(j, j)] += mu * (1.0 + jtj[(j, j)]);
            }
            let Some(step) = m.lu().solve(&(-&g)) else { break };
            let trial: Vec<f64> = logb.iter().zip(step.iter()).map(|(a, b)| (a + b).clamp(-30.0, 30.0)).collect();
            let rt = residuals(model, s, data, betas, &trial);
            let ct = rt.norm_squared();
            if ct < cost {
                let small = step.amax() < 1e-12 || cost - ct < 1e-16 * cost.max(1e-300);
                logb = trial;
                r = rt;
                cost = ct;
                mu = (mu * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (logb, (cost / s.len() as f64).sqrt())
}

fn golden(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn lattice(n: usize) -> Vec<Vec<f64>> {
    let pts: Vec<f64> = (1..=19).map(|k| k as f64 * LATTICE_STEP).collect();
    fn go(pts: &[f64], start: usize, n: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..pts.len() {
            cur.push(pts[i]);
            go(pts, i + 1, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(&pts, 0, n, &mut Vec::new(), &mut out);
    out
}

/// Fits one candidate to the Laplace samples `data` of one species.
pub fn fit_candidate(model: &ResolventModel, s: &[f64], data: &[f64], cand: &OrderCandidate) -> Result<CandidateFit> {
    if data.iter().any(|d| !(d.abs() > 0.0 && d.is_finite())) {
        return Err(Error::Input("Laplace samples must be finite and nonzero".into()));
    }
    let betas = match cand {
        OrderCandidate::Fixed(b) => {
            if b.is_empty() || b.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::FracOrder("fixed candidate orders must lie in (0,1)".into()));
            }
            b.clone()
        }
        OrderCandidate::Free(n) => {
            if *n == 0 || *n > 3 {
                return Err(Error::FracOrder("free candidates support 1 to 3 terms".into()));
            }
            let start = lattice(*n)
                .into_par_iter()
                .map(|b| {
                    let m = fit_weights(model, s, data, &b).1;
                    (b, m)
                })
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("nonempty lattice");
            let mut betas = start.0;
            for _ in 0..GOLDEN_ROUNDS {
                for j in 0..*n {
                    let lo = (betas[j] - LATTICE_STEP).max(1e-3);
                    let hi = (betas[j] + LATTICE_STEP).min(1.0 - 1e-3);
                    let mut trial = betas.clone();
                    let (bj, _) = golden(lo, hi, |v| {
                        trial[j] = v;
                        fit_weights(model, s, data, &trial).1
                    });
                    betas[j] = bj;
                }
            }
            betas
        }
    };
    let (logb, misfit) = fit_weights(model, s, data, &betas);
    Ok(CandidateFit { betas, weights: logb.iter().map(|v| v.exp()).collect(), misfit })
}

/// Fits `candidates[i]` to species i and reports β̂, b̂ and the misfit.
pub fn recover_orders(
    template: &SystemSpec,
    series: &[Vec<f64>],
    probe: &OrderProbeSpec,
    layout: &DomainLayout,
    candidates: &[OrderCandidate],
    truth: Option<&FracOrderSpec>,
) -> Result<(Vec<CandidateFit>, ReconstructionReport)> {
    probe.validate(layout)?;
    if template.kind() != Some(SystemKind::Time) {
        return Err(Error::System("order recovery needs a time-fractional template".into()));
    }
    if series.len() != template.n_species || candidates.len() != template.n_species {
        return Err(Error::Input("one series and one candidate per species".into()));
    }
    let mut fits = Vec::with_capacity(series.len());
    let mut report = ReconstructionReport::new("orders");
    let mut truth_vals = Vec::new();
    for (i, (ser, cand)) in series.iter().zip(candidates).enumerate() {
        if ser.len() != layout.n_levels() {
            return Err(Error::Input("series length must equal n_time + 1".into()));
        }
        let model = ResolventModel::new(template, i, probe, layout)?;
        let data = laplace_samples(ser, layout.dt, probe)?;
        let fit = fit_candidate(&model, &probe.s_samples, &data, cand)?;
        for (j, (&b, &w)) in fit.betas.iter().zip(&fit.weights).enumerate() {
            report.push(format!("s{i}:beta{j}"), b, false);
            report.push(format!("s{i}:b{j}"), w, false);
            if let Some(t) = truth {
                let term = t.species.get(i).and_then(|ts| ts.get(j));
                truth_vals.push(term.map_or(f64::NAN, |t| t.beta));
                truth_vals.push(term.map_or(f64::NAN, |t| t.b));
            }
        }
        report.residual_norms.insert(format!("misfit_s{i}"), fit.misfit);
        fits.push(fit);
    }
    for (k, s) in probe.s_samples.iter().enumerate() {
        report.extra.insert(format!("s_sample{k}"), *s);
    }
    report.extra.insert("lattice_step".into(), LATTICE_STEP);
    let complete = truth_vals.iter().all(|v| v.is_finite());
    let report = if truth.is_some() && complete { report.with_truth(truth_vals) } else { report };
    Ok((fits, report))
}

/// Fits every candidate to species `species` and ranks them by misfit.
/// Fails with `Indistinguishable` when the best two misfits agree to within
/// `MISFIT_FLOOR` relative.
pub fn discriminate_orders(
    template: &SystemSpec,
    species: usize,
    series: &[f64],
    probe: &OrderProbeSpec,
    layout: &DomainLayout,
    candidates: &[OrderCandidate],
) -> Result<(Vec<CandidateFit>, ReconstructionReport)> {
    if candidates.len() < 2 {
        return Err(Error::Input("discrimination needs at least two candidates".into()));
    }
    let model = ResolventModel::new(template, species, probe, layout)?;
    let data = laplace_samples(series, layout.dt, probe)?;
    let fits = candidates
        .iter()
        .map(|c| fit_candidate(&model, &probe.s_samples, &data, c))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[a].misfit.total_cmp(&fits[b].misfit));
    let (best, second) = (fits[order[0]].misfit, fits[order[1]].misfit);
    if (second - best).abs() <= MISFIT_FLOOR * second.max(f64::MIN_POSITIVE) {
        let tied = order
            .iter()
            .filter(|&&k| (fits[k].misfit - best).abs() <= MISFIT_FLOOR * second.max(f64::MIN_POSITIVE))
            .map(|&k| candidates[k].label())
            .collect();
        return Err(Error::Indistinguishable(tied));
    }
    let mut report = ReconstructionReport::new("order_discrimination");
    for (c, f) in candidates.iter().zip(&fits) {
        report.push(c.label(), f.misfit, false);
    }
    report.extra.insert("best".into(), order[0] as f64);
    report.extra.insert("misfit_ratio".into(), second / best.max(f64::MIN_POSITIVE));
    Ok((fits, report))
}

/// Small-s field w(s) = (û₁ − û₂)/(b s^{β¹} − b s^{β²}) and its limit w₀,
/// which solves (K − P) w₀ = −b û₂(0) with û₂(0) = (K − P)^{-1} f / a.
pub fn order_discrimination_diagnostic(
    beta1: f64,
    beta2: f64,
    b: f64,
    template: &SystemSpec,
    species: usize,
    probe: &OrderProbeSpec,
    layout: &DomainLayout,
    ladder: &[f64],
) -> Result<ReconstructionReport> {
    probe.validate(layout)?;
    if beta1 == beta2 {
        return Err(Error::Degenerate("equal orders leave s^β¹ − s^β² ≡ 0".into()));
    }
    for be in [beta1, beta2] {
        if !(be > 0.0 && be < 1.0) {
            return Err(Error::FracOrder(format!("order {be} outside (0,1)")));
        }
    }
    if ladder.len() < 2 || ladder.windows(2).any(|w| !(w[1] < w[0])) || ladder.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Input("s ladder must be positive and strictly decreasing".into()));
    }
    let p = &template.potential[species];
    if !p.is_stationary() {
        return Err(Error::Input("diagnostic needs a stationary potential".into()));
    }
    let nodes = layout.interior();
    let mut k: DMatrix<f64> = laplacian(layout, template.diffusion[species]);
    for (i, &x) in nodes.iter().enumerate() {
        k[(i, i)] -= p.at(0, x);
    }
    let f = DVector::from_iterator(nodes.len(), nodes.iter().map(|&x| probe.f[x]));
    let x0 = layout.interior_position(layout.obs_point_index).expect("interior x₀");
    let lu = k.clone().lu();
    let u20 = lu.solve(&(&f / probe.a)).ok_or_else(|| Error::Singular("K − P".into()))?;
    let w0 = lu.solve(&(-&u20 * b)).ok_or_else(|| Error::Singular("K − P".into()))?;
    let mut report = ReconstructionReport::new("order_diagnostic");
    for (i, &x) in nodes.iter().enumerate() {
        report.push(format!("w0:x{x}"), w0[i], false);
    }
    report.extra.insert("w0_x0".into(), w0[x0]);
    report.extra.insert("w0_max".into(), w0.max());
    let resolve = |sigma: f64, s: f64| -> Result<DVector<f64>> {
        let mut m = k.clone();
        for i in 0..nodes.len() {
            m[(i, i)] += sigma;
        }
        m.lu().solve(&(&f / (s + probe.a))).ok_or_else(|| Error::Singular("resolvent".into()))
    };
    let mut gaps = Vec::with_capacity(ladder.len());
    for &s in ladder {
        let (s1, s2) = (b * s.powf(beta1), b * s.powf(beta2));
        let u1 = resolve(s1, s)?;
        let u2 = resolve(s2, s)?;
        let w = (u1[x0] - u2[x0]) / (s1 - s2);
        report.extra.insert(format!("w_x0_s{s:e}"), w);
        gaps.push((s, (w - w0[x0]).abs()));
    }
    let slope = {
        let (a, z) = (gaps[0], gaps[gaps.len() - 1]);
        (a.1.ln() - z.1.ln()) / (a.0.ln() - z.0.ln())
    };
    report.extra.insert("trend_slope".into(), slope);
    if gaps.windows(2).any(|g| !(g[1].1 < g[0].1)) {
        return Err(Error::Degenerate(format!("s ladder too coarse, trend slope {slope:.3}")));
    }
    Ok(report)
}

/// Point-observation contrast between two order specs under the same source
/// `q(species, x, t)`. The noise floor is the larger of the two time-grid
/// self-convergence gaps |u_N − u_{2N}| at x₀.
pub fn lambda3_discrimination(
    spec_a: &SystemSpec,
    spec_b: &SystemSpec,
    q: impl Fn(usize, [f64; 2], f64) -> f64 + Sync,
    layout: &DomainLayout,
) -> Result<ReconstructionReport> {
    let fine = layout.clone().with_time_grid(layout.t_final, 2 * layout.n_time)?;
    let x0 = layout.obs_point_index;
    let run = |spec: &SystemSpec, l: &DomainLayout| -> Result<Vec<Vec<f64>>> {
        let src = SourceTerm::from_fn(l, spec.n_species, &q);
        let u = solve_time_fractional(spec, &src, l)?;
        Ok((0..spec.n_species).map(|s| u.series(s, x0)).collect())
    };
    let jobs: Vec<(&SystemSpec, &DomainLayout)> = vec![(spec_a, layout), (spec_b, layout), (spec_a, &fine), (spec_b, &fine)];
    let out = jobs.par_iter().map(|(s, l)| run(s, l)).collect::<Result<Vec<_>>>()?;
    let mut sup = 0.0f64;
    let mut floor = 0.0f64;
    for s in 0..spec_a.n_species {
        for m in 0..layout.n_levels() {
            sup = sup.max((out[0][s][m] - out[1][s][m]).abs());
            floor = floor.max((out[0][s][m] - out[2][s][2 * m]).abs());
            floor = floor.max((out[1][s][m] - out[3][s][2 * m]).abs());
        }
    }
    let mut report = ReconstructionReport::new("lambda3_discrimination");
    report.extra.insert("sup_difference".into(), sup);
    report.extra.insert("noise_floor".into(), floor);
    report.extra.insert("ratio".into(), sup / floor.max(f64::MIN_POSITIVE));
    Ok(report)
}
