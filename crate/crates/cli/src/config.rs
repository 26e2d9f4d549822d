//! Run configuration read from a TOML document.

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use nonlocal_inverse::domain::{build_layout, DomainLayout, Selector};
use nonlocal_inverse::forward::{Interaction, InteractionEntry, Potential, SourceTerm, SystemKind, SystemSpec};
use nonlocal_inverse::fractime::FracOrderSpec;
use nonlocal_inverse::inverse::{AdjointForm, LambdaChoice, OrderCandidate, NOISELESS_LAMBDA};
use nonlocal_inverse::measure::{MeasureKind, MeasurementWeight, Region};
use nonlocal_inverse::models::{build_preset, PresetId};
use nonlocal_inverse::nonlocal_op::KernelSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Forward,
    Adjoint,
    Linearize,
    InvertPotential,
    InvertInteraction,
    InvertOrder,
    Verify,
}

impl Kind {
    pub fn parse(s: &str) -> Option<Kind> {
        Kind::from_str(s, false).ok()
    }

    pub fn name(self) -> String {
        self.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }
}

/// One monomial c·x^x·y^y·t^t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    #[serde(default)]
    pub x: i32,
    #[serde(default)]
    pub y: i32,
    #[serde(default)]
    pub t: i32,
}

impl Term {
    fn constant(c: f64) -> Self {
        Term { c, x: 0, y: 0, t: 0 }
    }
}

pub fn eval_poly(terms: &[Term], x: [f64; 2], t: f64) -> f64 {
    terms.iter().map(|m| m.c * x[0].powi(m.x) * x[1].powi(m.y) * t.powi(m.t)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub dim: usize,
    pub n_interior: usize,
    pub collar_width: f64,
    pub accessible: Selector,
    pub gamma: Selector,
    pub t_final: f64,
    pub n_time: usize,
    /// Observation point x₀; defaults to the node nearest the centre.
    pub observation: Option<Vec<f64>>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            dim: 1,
            n_interior: 32,
            collar_width: 0.25,
            accessible: Selector::All,
            gamma: Selector::All,
            t_final: 1.0,
            n_time: 32,
            observation: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Space,
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// When present, every other field in this table is ignored.
    pub preset: Option<PresetId>,
    pub model: Model,
    pub species: usize,
    pub kernel: Vec<(f64, f64)>,
    /// Per species (β, b) terms; a single entry is reused for every species.
    pub orders: Vec<Vec<(f64, f64)>>,
    pub diffusion: Vec<f64>,
    /// Per species polynomial; a single entry is reused for every species.
    pub potential: Vec<Vec<Term>>,
    pub alpha: Vec<Vec<f64>>,
    pub interaction: Vec<InteractionEntry>,
    pub max_order: Option<usize>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            preset: None,
            model: Model::Space,
            species: 1,
            kernel: vec![(0.5, 1.0)],
            orders: vec![vec![(0.5, 1.0)]],
            diffusion: vec![1.0],
            potential: vec![vec![Term::constant(-0.5)]],
            alpha: Vec::new(),
            interaction: Vec::new(),
            max_order: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    /// Defaults to lambda1 for space models and lambda2 for time models.
    pub kind: Option<MeasureKind>,
    pub weight: Vec<Vec<Term>>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { kind: None, weight: vec![vec![Term::constant(1.0)]] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaConfig {
    Value(f64),
    /// "auto" or "lcurve".
    Named(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Hats,
    Trigonometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseConfig {
    pub noise: f64,
    pub lambda: LambdaConfig,
    pub basis: BasisKind,
    /// Spatial functions per axis; defaults to one per interior node.
    pub basis_per_axis: Option<usize>,
    /// Temporal hats for time-fractional potentials; defaults to n_time.
    pub basis_levels: Option<usize>,
    /// Temporal profile v(t) of the space-potential probes; needs v(0) = 0.
    pub probe: Vec<Term>,
    pub max_degree: usize,
    pub n_sources: usize,
    pub probe_a: f64,
    pub probe_f: Vec<Term>,
    pub probe_s: Vec<f64>,
    /// One per species for recovery, or several for discrimination.
    pub candidates: Vec<OrderCandidate>,
    pub species: usize,
    pub adjoint_form: AdjointForm,
    pub eps: Vec<f64>,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            noise: 0.0,
            lambda: LambdaConfig::Named("auto".into()),
            basis: BasisKind::Hats,
            basis_per_axis: None,
            basis_levels: None,
            probe: vec![Term { c: 1.0, x: 0, y: 0, t: 1 }],
            max_degree: 3,
            n_sources: 3,
            probe_a: 1.0,
            probe_f: vec![Term::constant(1.0)],
            probe_s: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            candidates: Vec::new(),
            species: 0,
            adjoint_form: AdjointForm::Discrete,
            eps: vec![1e-2, 5e-3, 2.5e-3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<String>,
    pub seed: u64,
    pub workers: usize,
    pub layout: LayoutConfig,
    pub system: SystemConfig,
    /// Per species polynomial source q.
    pub source: Vec<Vec<Term>>,
    pub measure: MeasureConfig,
    pub inverse: InverseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kind: None,
            seed: 0,
            workers: 0,
            layout: LayoutConfig::default(),
            system: SystemConfig::default(),
            source: vec![vec![Term::constant(1.0), Term { c: 1.0, x: 1, y: 0, t: 1 }]],
            measure: MeasureConfig::default(),
            inverse: InverseConfig::default(),
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Entry `s` of a per-species list, or the single shared entry.
fn per_species<'a, T>(list: &'a [T], s: usize, field: &str) -> Result<&'a T> {
    match list.len() {
        0 => bail!("{field}: empty list"),
        1 => Ok(&list[0]),
        _ => list.get(s).with_context(|| format!("{field}: no entry for species {s}")),
    }
}

/// Everything an experiment needs, built and validated from the config.
pub struct Setup {
    pub layout: DomainLayout,
    pub spec: SystemSpec,
    pub warnings: Vec<String>,
    pub source: SourceTerm,
    pub weight: MeasurementWeight,
    pub measure: MeasureKind,
}

impl RunConfig {
    pub fn layout(&self) -> Result<DomainLayout> {
        let c = &self.layout;
        let l = build_layout(c.dim, c.n_interior, c.collar_width, &c.accessible, &c.gamma, c.t_final, c.n_time)
            .context("layout")?;
        match &c.observation {
            Some(p) => l.with_observation(p).context("layout.observation"),
            None => Ok(l),
        }
    }

    pub fn system(&self, layout: &DomainLayout) -> Result<(SystemSpec, Vec<String>)> {
        let c = &self.system;
        if let Some(id) = &c.preset {
            let p = build_preset(id, layout).with_context(|| format!("system.preset ({})", id.name()))?;
            return Ok((p.spec, p.warnings));
        }
        let m = c.species;
        if m == 0 {
            bail!("system.species: must be at least 1");
        }
        let mut spec = match c.model {
            Model::Space => SystemSpec::space(m, KernelSpec::new(&c.kernel).context("system.kernel")?, layout),
            Model::Time => {
                let orders = (0..m).map(|s| per_species(&c.orders, s, "system.orders").cloned()).collect::<Result<_>>()?;
                let d = (0..m).map(|s| per_species(&c.diffusion, s, "system.diffusion").copied()).collect::<Result<_>>()?;
                SystemSpec::time(m, FracOrderSpec::new(orders).context("system.orders")?, d, layout)
            }
        };
        for s in 0..m {
            let terms = per_species(&c.potential, s, "system.potential")?.clone();
            let p = if terms.iter().all(|t| t.t == 0) {
                Potential::from_fn(layout, |x| eval_poly(&terms, x, 0.0))
            } else {
                Potential::transient_from_fn(layout, |x, t| eval_poly(&terms, x, t))
            };
            spec = spec.with_potential(s, p);
            if !c.alpha.is_empty() {
                let a = per_species(&c.alpha, s, "system.alpha")?;
                if a.len() != layout.dim {
                    bail!("system.alpha: species {s} needs {} components", layout.dim);
                }
                spec = spec.with_alpha(s, a.clone());
            }
        }
        let mut f = Interaction::new(m);
        for e in &c.interaction {
            if e.species >= m {
                bail!("system.interaction: species {} out of range", e.species);
            }
            f.insert(e.species, e.index.clone(), e.value).context("system.interaction")?;
        }
        spec = spec.with_interaction(f);
        if let Some(k) = c.max_order {
            spec = spec.with_max_order(k);
        }
        Ok((spec, Vec::new()))
    }

    pub fn setup(&self) -> Result<Setup> {
        let layout = self.layout()?;
        let (spec, warnings) = self.system(&layout)?;
        spec.validate(&layout).context("system")?;
        let m = spec.n_species;
        let src: Vec<Vec<Term>> = (0..m).map(|s| per_species(&self.source, s, "source").cloned()).collect::<Result<_>>()?;
        let source = SourceTerm::from_fn(&layout, m, |s, x, t| eval_poly(&src[s], x, t));
        let kind = match spec.kind() {
            Some(SystemKind::Space) => SystemKind::Space,
            Some(SystemKind::Time) => SystemKind::Time,
            None => bail!("system: needs either a kernel or fractional orders"),
        };
        let measure = match (self.measure.kind, kind) {
            (Some(k), SystemKind::Space) if k != MeasureKind::Lambda2 => k,
            (Some(MeasureKind::Lambda2), SystemKind::Time) | (None, SystemKind::Time) => MeasureKind::Lambda2,
            (None, SystemKind::Space) => MeasureKind::Lambda1,
            (Some(k), _) => bail!("measure.kind: {k:?} does not fit a {kind:?} system"),
        };
        let region = if measure == MeasureKind::Lambda2 { Region::Gamma } else { Region::Accessible };
        let w: Vec<Vec<Term>> =
            (0..m).map(|s| per_species(&self.measure.weight, s, "measure.weight").cloned()).collect::<Result<_>>()?;
        let weight = MeasurementWeight::from_fn(&layout, m, region, |s, x, t| eval_poly(&w[s], x, t));
        weight.validate(&layout).context("measure.weight")?;
        Ok(Setup { layout, spec, warnings, source, weight, measure })
    }

    pub fn lambda(&self) -> Result<LambdaChoice> {
        match &self.inverse.lambda {
            LambdaConfig::Value(v) if *v > 0.0 => Ok(LambdaChoice::Fixed(*v)),
            LambdaConfig::Value(v) => bail!("inverse.lambda: must be positive, got {v}"),
            LambdaConfig::Named(s) if s == "lcurve" => Ok(LambdaChoice::LCurve),
            LambdaConfig::Named(s) if s == "auto" => Ok(if self.inverse.noise > 0.0 {
                LambdaChoice::LCurve
            } else {
                LambdaChoice::Fixed(NOISELESS_LAMBDA)
            }),
            LambdaConfig::Named(s) => bail!("inverse.lambda: expected a number, \"auto\" or \"lcurve\", got {s:?}"),
        }
    }
}
