//! Preset systems from mathematical biology.
//!
//! Linear reaction terms go into the potential and only degree ≥ 2 terms into
//! the interaction. Constant feeds are left to the source.

use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::forward::{Interaction, InteractionEntry, Potential, SystemSpec};
use crate::fractime::FracOrderSpec;
use crate::nonlocal_op::KernelSpec;
use serde::{Deserialize, Serialize};

fn default_kernel() -> Vec<(f64, f64)> {
    vec![(0.5, 1.0)]
}

fn default_pair() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_orders() -> [f64; 2] {
    [0.5, 0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    /// Death or recovery rate per species, ≥ 0; p = −rate.
    pub rates: Vec<f64>,
    /// Incidence terms of degree ≥ 2, e.g. species 0, index [1,1,0].
    #[serde(default)]
    pub incidence: Vec<InteractionEntry>,
    #[serde(default = "default_kernel")]
    pub kernel: Vec<(f64, f64)>,
    /// Passive drift, one vector per species.
    #[serde(default)]
    pub alpha: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViscoelasticParams {
    /// Elastic modulus G_S ≥ 0 per cell type; p = −G_S.
    pub moduli: Vec<f64>,
    #[serde(default)]
    pub interaction: Vec<InteractionEntry>,
    #[serde(default = "default_kernel")]
    pub kernel: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorParams {
    /// Proliferation rate per species; enters p directly.
    pub rho: Vec<f64>,
    /// Multiplication factor per species; gives the u_i² coefficient −ρκ.
    pub kappa: Vec<f64>,
    pub diffusion: Vec<f64>,
    /// Per species (β, b) terms.
    pub orders: Vec<Vec<(f64, f64)>>,
    /// Builds even when some ρ > 0.
    #[serde(default)]
    pub allow_positive_rho: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayScottParams {
    pub gamma: f64,
    pub c: f64,
    pub m: f64,
    #[serde(default = "default_pair")]
    pub diffusion: [f64; 2],
    #[serde(default = "default_orders")]
    pub beta: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchnakenbergParams {
    pub gamma: f64,
    pub c: f64,
    #[serde(default = "default_pair")]
    pub diffusion: [f64; 2],
    #[serde(default = "default_orders")]
    pub beta: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum PresetId {
    SirNonlocal(SirParams),
    ViscoelasticCell(ViscoelasticParams),
    TumorProliferation(TumorParams),
    GrayScott(GrayScottParams),
    Schnakenberg(SchnakenbergParams),
}

impl PresetId {
    pub fn name(&self) -> &'static str {
        match self {
            PresetId::SirNonlocal(_) => "sir_nonlocal",
            PresetId::ViscoelasticCell(_) => "viscoelastic_cell",
            PresetId::TumorProliferation(_) => "tumor_proliferation",
            PresetId::GrayScott(_) => "gray_scott",
            PresetId::Schnakenberg(_) => "schnakenberg",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preset {
    pub spec: SystemSpec,
    pub warnings: Vec<String>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::System(format!("{name} must be positive, got {v}")))
    }
}

fn interaction_from(n: usize, entries: &[InteractionEntry]) -> Result<Interaction> {
    let mut f = Interaction::new(n);
    for e in entries {
        if e.species >= n {
            return Err(Error::System(format!("interaction species {} out of range", e.species)));
        }
        f.insert(e.species, e.index.clone(), e.value)?;
    }
    Ok(f)
}

pub fn build_preset(id: &PresetId, layout: &DomainLayout) -> Result<Preset> {
    let mut warnings = Vec::new();
    let spec = match id {
        PresetId::SirNonlocal(p) => {
            let n = p.rates.len();
            if n == 0 {
                return Err(Error::System("sir_nonlocal needs at least one species".into()));
            }
            let mut spec = SystemSpec::space(n, KernelSpec::new(&p.kernel)?, layout)
                .with_interaction(interaction_from(n, &p.incidence)?);
            for (i, &r) in p.rates.iter().enumerate() {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::System(format!("rate of species {i} must be nonnegative")));
                }
                spec = spec.with_potential(i, Potential::constant(layout, -r));
            }
            if let Some(alpha) = &p.alpha {
                if alpha.len() != n {
                    return Err(Error::System("one drift vector per species".into()));
                }
                for (i, a) in alpha.iter().enumerate() {
                    spec = spec.with_alpha(i, a.clone());
                }
            }
            spec
        }
        PresetId::ViscoelasticCell(p) => {
            let n = p.moduli.len();
            if n == 0 {
                return Err(Error::System("viscoelastic_cell needs at least one cell type".into()));
            }
            let mut spec = SystemSpec::space(n, KernelSpec::new(&p.kernel)?, layout)
                .with_interaction(interaction_from(n, &p.interaction)?);
            for (i, &g) in p.moduli.iter().enumerate() {
                if !(g >= 0.0 && g.is_finite()) {
                    return Err(Error::System(format!("elastic modulus of type {i} must be nonnegative")));
                }
                spec = spec.with_potential(i, Potential::constant(layout, -g));
            }
            spec
        }
        PresetId::TumorProliferation(p) => {
            let n = p.rho.len();
            if n == 0 || p.kappa.len() != n || p.diffusion.len() != n || p.orders.len() != n {
                return Err(Error::System("tumor_proliferation needs rho, kappa, diffusion, orders per species".into()));
            }
            let mut f = Interaction::new(n);
            for i in 0..n {
                let q = -p.rho[i] * p.kappa[i];
                if q != 0.0 {
                    let mut k = vec![0; n];
                    k[i] = 2;
                    f.insert(i, k, q)?;
                }
            }
            let mut spec = SystemSpec::time(n, FracOrderSpec::new(p.orders.clone())?, p.diffusion.clone(), layout)
                .with_interaction(f);
            for (i, &r) in p.rho.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::System(format!("rho of species {i} is not finite")));
                }
                if r > 0.0 {
                    if !p.allow_positive_rho {
                        return Err(Error::System(format!(
                            "rho of species {i} is {r} > 0; set allow_positive_rho to build anyway"
                        )));
                    }
                    warnings.push(format!("species {i}: rho = {r} > 0 breaks the sign condition on p"));
                }
                spec = spec.with_potential(i, Potential::constant(layout, r));
            }
            spec.allow_positive_potential = p.allow_positive_rho;
            spec
        }
        PresetId::GrayScott(p) => {
            positive("gamma", p.gamma)?;
            positive("c", p.c)?;
            positive("m", p.m)?;
            let f = Interaction::new(2).with(0, &[1, 2], -p.m)?.with(1, &[1, 2], p.m)?;
            let orders = FracOrderSpec::new(vec![vec![(p.beta[0], 1.0)], vec![(p.beta[1], 1.0)]])?;
            SystemSpec::time(2, orders, p.diffusion.to_vec(), layout)
                .with_potential(0, Potential::constant(layout, -p.gamma))
                .with_potential(1, Potential::constant(layout, -(p.gamma + p.c)))
                .with_interaction(f)
        }
        PresetId::Schnakenberg(p) => {
            positive("gamma", p.gamma)?;
            positive("c", p.c)?;
            let f = Interaction::new(2).with(0, &[2, 1], p.gamma)?.with(1, &[2, 1], -p.gamma)?;
            let orders = FracOrderSpec::new(vec![vec![(p.beta[0], 1.0)], vec![(p.beta[1], 1.0)]])?;
            SystemSpec::time(2, orders, p.diffusion.to_vec(), layout)
                .with_potential(0, Potential::constant(layout, -p.c))
                .with_potential(1, Potential::zeros(layout))
                .with_interaction(f)
        }
    };
    spec.validate(layout)?;
    Ok(Preset { spec, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_layout, Selector};
    use proptest::prelude::*;

    fn layout() -> DomainLayout {
        build_layout(1, 8, 0.25, &Selector::All, &Selector::All, 1.0, 4).unwrap()
    }

    #[test]
    fn gray_scott_structure() {
        let l = layout();
        let p = build_preset(&PresetId::GrayScott(GrayScottParams {
            gamma: 0.04,
            c: 0.06,
            m: 1.0,
            diffusion: [1.0, 1.0],
            beta: [0.5, 0.5],
        }), &l)
        .unwrap();
        let x = l.interior()[0];
        assert_eq!(p.spec.potential[0].at(0, x), -0.04);
        assert!((p.spec.potential[1].at(0, x) + 0.10).abs() < 1e-15);
        assert_eq!(p.spec.interaction.coefficient(0, &[1, 2]), -1.0);
        assert_eq!(p.spec.interaction.coefficient(1, &[1, 2]), 1.0);
        assert_eq!(p.spec.interaction.entries().len(), 2);
    }

    #[test]
    fn schnakenberg_inhibitor_coefficient() {
        let p = build_preset(&PresetId::Schnakenberg(SchnakenbergParams {
            gamma: 1.0,
            c: 0.5,
            diffusion: [1.0, 1.0],
            beta: [0.5, 0.5],
        }), &layout())
        .unwrap();
        assert_eq!(p.spec.interaction.coefficient(1, &[2, 1]), -1.0);
    }

    #[test]
    fn sir_without_incidence_is_linear() {
        let p = build_preset(&PresetId::SirNonlocal(SirParams {
            rates: vec![0.1, 0.2, 0.3],
            incidence: vec![],
            kernel: default_kernel(),
            alpha: None,
        }), &layout())
        .unwrap();
        assert!(p.spec.interaction.is_empty());
        assert_eq!(p.spec.n_species, 3);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn tumor_sign_condition() {
        let l = layout();
        let mut params = TumorParams {
            rho: vec![0.5],
            kappa: vec![2.0],
            diffusion: vec![1.0],
            orders: vec![vec![(0.5, 1.0)]],
            allow_positive_rho: false,
        };
        assert!(build_preset(&PresetId::TumorProliferation(params.clone()), &l).is_err());
        params.allow_positive_rho = true;
        let p = build_preset(&PresetId::TumorProliferation(params.clone()), &l).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert_eq!(p.spec.interaction.coefficient(0, &[2]), -1.0);
        params.rho = vec![-0.5];
        params.allow_positive_rho = false;
        let p = build_preset(&PresetId::TumorProliferation(params), &l).unwrap();
        assert!(p.warnings.is_empty());
        assert_eq!(p.spec.interaction.coefficient(0, &[2]), 1.0);
    }

    #[test]
    fn presets_round_trip_through_json() {
        let id = PresetId::GrayScott(GrayScottParams { gamma: 0.04, c: 0.06, m: 1.0, diffusion: [1.0, 2.0], beta: [0.3, 0.7] });
        let s = serde_json::to_string(&id).unwrap();
        assert!(s.contains("\"id\":\"gray_scott\""));
        assert_eq!(serde_json::from_str::<PresetId>(&s).unwrap(), id);
    }

    proptest! {
        #[test]
        fn gray_scott_exchange_cancels(gamma in 0.01f64..1.0, c in 0.01f64..1.0, m in 0.01f64..5.0) {
            let p = build_preset(&PresetId::GrayScott(GrayScottParams { gamma, c, m, diffusion: [1.0, 1.0], beta: [0.5, 0.5] }), &layout()).unwrap();
            let f = &p.spec.interaction;
            prop_assert_eq!(f.coefficient(0, &[1, 2]) + f.coefficient(1, &[1, 2]), 0.0);
            for e in f.entries() {
                prop_assert!(e.index.iter().sum::<u32>() >= 2 && e.index[e.species] >= 1);
            }
        }
    }
}
