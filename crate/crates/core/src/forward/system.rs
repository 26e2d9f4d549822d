use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::fractime::FracOrderSpec;
use crate::nonlocal_op::KernelSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Potential p_i sampled on every grid node, either fixed in time or given per
/// time level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    Stationary(Vec<f64>),
    Transient(Vec<Vec<f64>>),
}

impl Potential {
    pub fn zeros(layout: &DomainLayout) -> Self {
        Potential::Stationary(vec![0.0; layout.n_nodes()])
    }

    pub fn constant(layout: &DomainLayout, c: f64) -> Self {
        Potential::Stationary(vec![c; layout.n_nodes()])
    }

    pub fn from_fn(layout: &DomainLayout, f: impl Fn([f64; 2]) -> f64) -> Self {
        Potential::Stationary((0..layout.n_nodes()).map(|i| f(layout.coords(i))).collect())
    }

    pub fn transient_from_fn(layout: &DomainLayout, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        Potential::Transient(
            (0..layout.n_levels())
                .map(|m| (0..layout.n_nodes()).map(|i| f(layout.coords(i), layout.time(m))).collect())
                .collect(),
        )
    }

    #[inline]
    pub fn at(&self, level: usize, node: usize) -> f64 {
        match self {
            Potential::Stationary(v) => v[node],
            Potential::Transient(v) => v[level][node],
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, Potential::Stationary(_))
    }

    pub fn shifted(&self, c: f64) -> Potential {
        match self {
            Potential::Stationary(v) => Potential::Stationary(v.iter().map(|x| x + c).collect()),
            Potential::Transient(v) => {
                Potential::Transient(v.iter().map(|l| l.iter().map(|x| x + c).collect()).collect())
            }
        }
    }

    /// Largest value over interior nodes and all levels.
    pub fn max_interior(&self, layout: &DomainLayout) -> f64 {
        let levels = match self {
            Potential::Stationary(_) => 1,
            Potential::Transient(v) => v.len(),
        };
        let mut m = f64::NEG_INFINITY;
        for l in 0..levels {
            for &i in layout.interior() {
                m = m.max(self.at(l, i));
            }
        }
        m
    }

    fn check(&self, layout: &DomainLayout) -> Result<()> {
        let ok = match self {
            Potential::Stationary(v) => v.len() == layout.n_nodes(),
            Potential::Transient(v) => {
                v.len() == layout.n_levels() && v.iter().all(|l| l.len() == layout.n_nodes())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::System("potential does not match the layout".into()))
        }
    }
}

/// Exponents (k_1, …, k_M) of a monomial Π u_j^{k_j}.
pub type MultiIndex = Vec<u32>;

pub fn degree(k: &[u32]) -> u32 {
    k.iter().sum()
}

/// Power-series interaction F_i(u) = Σ_k F_i^k Π u_j^{k_j}.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Interaction {
    pub n_species: usize,
    pub terms: Vec<BTreeMap<MultiIndex, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEntry {
    pub species: usize,
    pub index: MultiIndex,
    pub value: f64,
}

impl Serialize for Interaction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc {
            n_species: usize,
            entries: Vec<InteractionEntry>,
        }
        Doc { n_species: self.n_species, entries: self.entries() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interaction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            n_species: usize,
            entries: Vec<InteractionEntry>,
        }
        let doc = Doc::deserialize(d)?;
        let mut out = Interaction::new(doc.n_species);
        for e in doc.entries {
            out.insert(e.species, e.index, e.value).map_err(serde::de::Error::custom)?;
        }
        Ok(out)
    }
}

impl Interaction {
    pub fn new(n_species: usize) -> Self {
        Interaction { n_species, terms: vec![BTreeMap::new(); n_species] }
    }

    pub fn with(mut self, species: usize, index: &[u32], value: f64) -> Result<Self> {
        self.insert(species, index.to_vec(), value)?;
        Ok(self)
    }

    /// Stores a coefficient after checking membership in the admissible class:
    /// total degree at least 2 and a positive exponent on the own species.
    pub fn insert(&mut self, species: usize, index: MultiIndex, value: f64) -> Result<()> {
        if species >= self.n_species {
            return Err(Error::System(format!("species {species} out of range")));
        }
        if index.len() != self.n_species {
            return Err(Error::System(format!(
                "multi-index {index:?} has wrong length for {} species",
                self.n_species
            )));
        }
        if degree(&index) < 2 {
            return Err(Error::System(format!("multi-index {index:?} has degree below 2")));
        }
        if index[species] < 1 {
            return Err(Error::System(format!(
                "multi-index {index:?} has no factor of species {species}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::System("coefficient must be finite".into()));
        }
        self.terms[species].insert(index, value);
        Ok(())
    }

    pub fn coefficient(&self, species: usize, index: &[u32]) -> f64 {
        self.terms[species].get(index).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.iter().all(|t| t.values().all(|&v| v == 0.0))
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().flat_map(|t| t.keys()).map(|k| degree(k)).max().unwrap_or(0)
    }

    pub fn entries(&self) -> Vec<InteractionEntry> {
        let mut out = Vec::new();
        for (i, t) in self.terms.iter().enumerate() {
            for (k, &v) in t {
                out.push(InteractionEntry { species: i, index: k.clone(), value: v });
            }
        }
        out
    }

    /// Coefficients of species `i` with the given total degree.
    pub fn of_degree(&self, species: usize, deg: u32) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms[species].iter().filter(move |(k, _)| degree(k) == deg).map(|(k, &v)| (k, v))
    }

    pub fn validate(&self, max_order: usize) -> Result<()> {
        if self.terms.len() != self.n_species {
            return Err(Error::System("interaction species count mismatch".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            for k in t.keys() {
                if k.len() != self.n_species || degree(k) < 2 || k[i] < 1 {
                    return Err(Error::System(format!("multi-index {k:?} of species {i} is not admissible")));
                }
                if degree(k) as usize > max_order {
                    return Err(Error::System(format!(
                        "multi-index {k:?} exceeds max_order {max_order}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// F_i(u) for every species at one node.
    pub fn evaluate(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n_species)
            .map(|i| self.terms[i].iter().map(|(k, &c)| c * monomial(u, k)).sum())
            .collect()
    }

    /// G_i(u) with F_i(u) = u_i G_i(u); exists because every stored index
    /// carries u_i at least once.
    pub fn self_factor(&self, species: usize, u: &[f64]) -> f64 {
        self.terms[species]
            .iter()
            .map(|(k, &c)| {
                let mut p = c;
                for (j, &e) in k.iter().enumerate() {
                    let e = if j == species { e - 1 } else { e };
                    p *= u[j].powi(e as i32);
                }
                p
            })
            .sum()
    }
}

fn monomial(u: &[f64], k: &[u32]) -> f64 {
    k.iter().zip(u).map(|(&e, &x)| x.powi(e as i32)).product()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// ∂_t u − 𝓛u + α·∇u = pu + F(u) + q, u = 0 outside Ω.
    Space,
    /// Σ b ₀D_t^β u − dΔu + α·∇u = pu + F(u) + q, u = 0 on ∂Ω.
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n_species: usize,
    /// Drift vector per species.
    pub alpha: Vec<Vec<f64>>,
    /// Diffusion coefficient per species (time-fractional case).
    pub diffusion: Vec<f64>,
    pub kernel: Option<KernelSpec>,
    pub potential: Vec<Potential>,
    pub interaction: Interaction,
    pub frac: Option<FracOrderSpec>,
    pub max_order: usize,
    /// When set, the stored state is v with u = S v node-wise, and the
    /// interaction acts as S⁻¹F(Sv). Used by the drift-free normal form.
    pub state_scaling: Option<Vec<Vec<f64>>>,
    /// Lets a spec with positive potential pass validation.
    pub allow_positive_potential: bool,
}

impl SystemSpec {
    fn blank(n_species: usize, layout: &DomainLayout) -> Self {
        SystemSpec {
            n_species,
            alpha: vec![vec![0.0; layout.dim]; n_species],
            diffusion: vec![1.0; n_species],
            kernel: None,
            potential: vec![Potential::zeros(layout); n_species],
            interaction: Interaction::new(n_species),
            frac: None,
            max_order: 3,
            state_scaling: None,
            allow_positive_potential: false,
        }
    }

    /// Space-nonlocal system with zero potential, drift and interaction.
    pub fn space(n_species: usize, kernel: KernelSpec, layout: &DomainLayout) -> Self {
        let mut s = Self::blank(n_species, layout);
        s.kernel = Some(kernel);
        s
    }

    /// Time-fractional system with zero potential, drift and interaction.
    pub fn time(n_species: usize, frac: FracOrderSpec, diffusion: Vec<f64>, layout: &DomainLayout) -> Self {
        let mut s = Self::blank(n_species, layout);
        s.frac = Some(frac);
        s.diffusion = diffusion;
        s
    }

    pub fn with_potential(mut self, species: usize, p: Potential) -> Self {
        self.potential[species] = p;
        self
    }

    pub fn with_alpha(mut self, species: usize, alpha: Vec<f64>) -> Self {
        self.alpha[species] = alpha;
        self
    }

    pub fn with_interaction(mut self, f: Interaction) -> Self {
        self.interaction = f;
        self
    }

    pub fn with_max_order(mut self, m: usize) -> Self {
        self.max_order = m;
        self
    }

    pub fn kind(&self) -> Option<SystemKind> {
        match (&self.kernel, &self.frac) {
            (Some(_), None) => Some(SystemKind::Space),
            (None, Some(_)) => Some(SystemKind::Time),
            _ => None,
        }
    }

    pub fn has_drift(&self) -> bool {
        self.alpha.iter().any(|a| a.iter().any(|&v| v != 0.0))
    }

    /// Same system with F dropped.
    pub fn linear_part(&self) -> SystemSpec {
        let mut s = self.clone();
        s.interaction = Interaction::new(self.n_species);
        s
    }

    /// F_i at one node, in the stored variables.
    pub fn evaluate_interaction(&self, u: &[f64]) -> Vec<f64> {
        self.interaction.evaluate(u)
    }

    pub fn validate(&self, layout: &DomainLayout) -> Result<()> {
        let m = self.n_species;
        if m == 0 {
            return Err(Error::System("no species".into()));
        }
        if self.alpha.len() != m || self.diffusion.len() != m || self.potential.len() != m {
            return Err(Error::System("per-species arrays have inconsistent lengths".into()));
        }
        for a in &self.alpha {
            if a.len() != layout.dim || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::System("drift vectors must be finite with one entry per axis".into()));
            }
        }
        if self.kind().is_none() {
            return Err(Error::System("spec needs exactly one of a kernel or fractional orders".into()));
        }
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        if let Some(f) = &self.frac {
            f.validate()?;
            if f.species.len() != m {
                return Err(Error::System("fractional orders must be given for every species".into()));
            }
            if self.diffusion.iter().any(|&d| !(d > 0.0)) {
                return Err(Error::System("diffusion coefficients must be positive".into()));
            }
        }
        if self.interaction.n_species != m {
            return Err(Error::System("interaction species count mismatch".into()));
        }
        self.interaction.validate(self.max_order)?;
        for (i, p) in self.potential.iter().enumerate() {
            p.check(layout)?;
            if !self.allow_positive_potential && p.max_interior(layout) > 0.0 {
                return Err(Error::System(format!("potential of species {i} is positive somewhere in the domain")));
            }
        }
        if let Some(s) = &self.state_scaling {
            if s.len() != m || s.iter().any(|v| v.len() != layout.n_nodes() || v.iter().any(|&x| !(x > 0.0))) {
                return Err(Error::System("state scaling must be positive on every node".into()));
            }
        }
        Ok(())
    }

    /// G_i in the stored variables at one node.
    pub(crate) fn reaction_factor(&self, species: usize, node: usize, v: &[f64], buf: &mut Vec<f64>) -> f64 {
        match &self.state_scaling {
            None => self.interaction.self_factor(species, v),
            Some(s) => {
                buf.clear();
                buf.extend(v.iter().enumerate().map(|(j, &x)| s[j][node] * x));
                self.interaction.self_factor(species, buf)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub q: Field,
}

impl SourceTerm {
    pub fn zeros(layout: &DomainLayout, n_species: usize) -> Self {
        SourceTerm { q: Field::on_layout(layout, n_species) }
    }

    /// q_i(x, t) = f(species, x, t) on interior nodes, zero elsewhere.
    pub fn from_fn(layout: &DomainLayout, n_species: usize, f: impl Fn(usize, [f64; 2], f64) -> f64) -> Self {
        let mut q = Field::on_layout(layout, n_species);
        for s in 0..n_species {
            for m in 0..layout.n_levels() {
                for &i in layout.interior() {
                    q.set(s, m, i, f(s, layout.coords(i), layout.time(m)));
                }
            }
        }
        SourceTerm { q }
    }

    pub fn scaled(&self, c: f64) -> Self {
        SourceTerm { q: self.q.scaled(c) }
    }

    pub fn sum(a: &SourceTerm, b: &SourceTerm) -> Self {
        let mut q = a.q.clone();
        q.add_scaled(&b.q, 1.0);
        SourceTerm { q }
    }

    pub fn min(&self) -> f64 {
        self.q.min()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateField {
    pub u: Field,
    /// Picard iterations used at each step; entry 0 is level 0.
    pub picard_iterations: Vec<usize>,
}

impl StateField {
    pub fn min(&self) -> f64 {
        self.u.min()
    }

    /// Time series of one species at one node.
    pub fn series(&self, species: usize, node: usize) -> Vec<f64> {
        (0..self.u.n_levels).map(|m| self.u.get(species, m, node)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_give_zero() {
        let f = Interaction::new(2).with(0, &[1, 1], 0.0).unwrap();
        assert_eq!(f.evaluate(&[3.0, 4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn gray_scott_and_verhulst_values() {
        let gs = Interaction::new(2).with(0, &[1, 2], -0.04).unwrap().with(1, &[1, 2], 0.04).unwrap();
        let f = gs.evaluate(&[1.0, 1.0]);
        assert!((f[0] + 0.04).abs() < 1e-15 && (f[1] - 0.04).abs() < 1e-15);
        let v = Interaction::new(1).with(0, &[2], -0.5).unwrap();
        assert!((v.evaluate(&[2.0])[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn admissible_class_is_enforced() {
        let f = Interaction::new(2);
        assert!(f.clone().with(0, &[1, 0], 1.0).is_err());
        assert!(f.clone().with(0, &[0, 2], 1.0).is_err());
        assert!(f.clone().with(1, &[2, 1], 1.0).is_ok());
        assert!(f.clone().with(1, &[2], 1.0).is_err());
        let g = f.with(0, &[2, 2], 1.0).unwrap();
        assert!(g.validate(3).is_err());
        assert!(g.validate(4).is_ok());
    }

    #[test]
    fn self_factor_times_state_is_reaction() {
        let f = Interaction::new(2)
            .with(0, &[1, 2], -0.7)
            .unwrap()
            .with(0, &[2, 0], 0.3)
            .unwrap()
            .with(1, &[2, 1], 1.1)
            .unwrap();
        let u = [0.4, 1.3];
        let full = f.evaluate(&u);
        for i in 0..2 {
            assert!((u[i] * f.self_factor(i, &u) - full[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn interaction_serde_round_trip() {
        let f = Interaction::new(2).with(0, &[1, 2], -1.0).unwrap().with(1, &[1, 2], 1.0).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        let back: Interaction = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
    }
}
