//! Training objectives as scalar graph nodes, plus the weighted total.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::acds::AcdsOutputs;
use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub anatomy: f64,
    pub smooth: f64,
    pub align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            anatomy: 0.5,
            smooth: 10.0,
            align: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("anatomy", self.anatomy), ("smooth", self.smooth), ("align", self.align)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss weight `{name}` must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted generator-side loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv: f64,
    pub self_rec: f64,
    pub cycle: f64,
    pub anatomy: f64,
    pub smooth: f64,
    pub align: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv: f64,
    pub self_rec: f64,
    pub cycle: f64,
    pub anatomy: f64,
    pub smooth: f64,
    pub align: f64,
    pub total: f64,
}

impl LossReport {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            adv: self.adv,
            self_rec: self.self_rec,
            cycle: self.cycle,
            anatomy: self.anatomy,
            smooth: self.smooth,
            align: self.align,
        }
    }

    /// Whether `total` equals the weighted sum of the components to within
    /// `1e-6` relative.
    pub fn total_is_consistent(&self, w: &LossWeights) -> bool {
        let expected = weighted(&self.components(), w);
        (self.total - expected).abs() <= 1e-6 * expected.abs().max(1e-12)
    }
}

fn weighted(c: &LossComponents, w: &LossWeights) -> f64 {
    c.adv + c.self_rec + c.cycle + w.anatomy * c.anatomy + w.smooth * c.smooth + w.align * c.align
}

/// `adv + self + cycle + λ1·anatomy + λ2·smooth + λ3·align`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<LossReport> {
    w.validate()?;
    let all = [c.adv, c.self_rec, c.cycle, c.anatomy, c.smooth, c.align];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss components {c:?}")));
    }
    Ok(LossReport {
        adv: c.adv,
        self_rec: c.self_rec,
        cycle: c.cycle,
        anatomy: c.anatomy,
        smooth: c.smooth,
        align: c.align,
        total: weighted(c, w),
    })
}

/// Weighted total as a graph node over the component nodes that are present.
pub fn total_loss_node<T: Real>(g: &mut Graph<T>, terms: &GraphTerms, w: &LossWeights) -> Result<Var> {
    let mut list = Vec::new();
    for (v, k) in [
        (terms.adv, 1.0),
        (terms.self_rec, 1.0),
        (terms.cycle, 1.0),
        (terms.anatomy, w.anatomy),
        (terms.smooth, w.smooth),
        (terms.align, w.align),
    ] {
        if let Some(v) = v {
            list.push((v, k));
        }
    }
    if list.is_empty() {
        return Err(Error::Parameter("total loss has no terms".into()));
    }
    g.weighted_sum(&list)
}

/// Component nodes of one generator step; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct GraphTerms {
    pub adv: Option<Var>,
    pub self_rec: Option<Var>,
    pub cycle: Option<Var>,
    pub anatomy: Option<Var>,
    pub smooth: Option<Var>,
    pub align: Option<Var>,
}

impl GraphTerms {
    pub fn components<T: Real>(&self, g: &Graph<T>) -> LossComponents {
        let v = |x: Option<Var>| x.map(|x| g.scalar(x).as_f64()).unwrap_or(0.0);
        LossComponents {
            adv: v(self.adv),
            self_rec: v(self.self_rec),
            cycle: v(self.cycle),
            anatomy: v(self.anatomy),
            smooth: v(self.smooth),
            align: v(self.align),
        }
    }
}

/// Sum of voxel-mean absolute differences.
pub fn sum_l1<T: Real>(g: &mut Graph<T>, pairs: &[(Var, Var)]) -> Result<Var> {
    let mut terms = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        terms.push((g.l1_mean(a, b)?, 1.0));
    }
    g.weighted_sum(&terms)
}

/// `‖O_t^b − I_t‖₁ + ‖O_t^a − I_t‖₁`; a branch passed as `None` is dropped.
pub fn alignment_loss<T: Real>(g: &mut Graph<T>, o_b: Option<Var>, o_a: Option<Var>, i_t: Var) -> Result<Var> {
    let pairs: Vec<(Var, Var)> = [o_b, o_a].into_iter().flatten().map(|o| (o, i_t)).collect();
    if pairs.is_empty() {
        return Err(Error::Parameter("alignment loss needs at least one branch".into()));
    }
    sum_l1(g, &pairs)
}

/// `‖G_s(c_s, s_s) − I_s‖₁ + ‖G_t(c_t, s_t) − I_t‖₁`.
pub fn self_reconstruction_loss<T: Real>(g: &mut Graph<T>, o: &AcdsOutputs, i_s: Var, i_t: Var) -> Result<Var> {
    sum_l1(g, &[(o.rec_s, i_s), (o.rec_t, i_t)])
}

/// `‖G_s(E_c^t(O_t), s_s) − I_s‖₁ + ‖G_t(E_c^s(O_s), s_t) − I_t‖₁`.
pub fn cycle_consistency_loss<T: Real>(g: &mut Graph<T>, o: &AcdsOutputs, i_s: Var, i_t: Var) -> Result<Var> {
    sum_l1(g, &[(o.cyc_s, i_s), (o.cyc_t, i_t)])
}

/// `‖E_c^t(O_t) − E_c^s(I_s)‖₁ + ‖E_c^s(O_s) − E_c^t(I_t)‖₁`.
pub fn anatomy_consistency_loss<T: Real>(g: &mut Graph<T>, o: &AcdsOutputs) -> Result<Var> {
    sum_l1(g, &[(o.c_ot, o.c_s), (o.c_os, o.c_t)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

/// Per-map objectives of an adversarial game. Each returns the mean over the
/// realness map.
pub trait AdversarialForm<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    /// Discriminator objective on a real sample.
    fn real(&self, g: &mut Graph<T>, map: Var) -> Var;
    /// Discriminator objective on a synthesized sample.
    fn fake(&self, g: &mut Graph<T>, map: Var) -> Var;
    /// Generator objective on a synthesized sample.
    fn generator(&self, g: &mut Graph<T>, map: Var) -> Var;
}

/// `(D(real) − 1)²`, `D(fake)²`, `(D(fake) − 1)²`.
pub struct LeastSquares;

impl<T: Real> AdversarialForm<T> for LeastSquares {
    fn name(&self) -> &'static str {
        "lsgan"
    }
    fn real(&self, g: &mut Graph<T>, map: Var) -> Var {
        g.sq_dev_mean(map, 1.0)
    }
    fn fake(&self, g: &mut Graph<T>, map: Var) -> Var {
        g.sq_dev_mean(map, 0.0)
    }
    fn generator(&self, g: &mut Graph<T>, map: Var) -> Var {
        g.sq_dev_mean(map, 1.0)
    }
}

/// Cross-entropy on clamped logits; the generator uses the non-saturating
/// `−log D(fake)` objective.
pub struct Logistic {
    pub logit_clamp: f64,
}

impl Logistic {
    fn softplus_mean<T: Real>(&self, g: &mut Graph<T>, map: Var, sign: f64) -> Var {
        let c = g.clamp(map, -self.logit_clamp, self.logit_clamp);
        let s = g.scale(c, sign);
        let sp = g.softplus(s);
        g.mean(sp)
    }
}

impl<T: Real> AdversarialForm<T> for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }
    fn real(&self, g: &mut Graph<T>, map: Var) -> Var {
        self.softplus_mean(g, map, -1.0)
    }
    fn fake(&self, g: &mut Graph<T>, map: Var) -> Var {
        self.softplus_mean(g, map, 1.0)
    }
    fn generator(&self, g: &mut Graph<T>, map: Var) -> Var {
        self.softplus_mean(g, map, -1.0)
    }
}

/// Adversarial forms selectable by name.
pub struct AdversarialRegistry<T: Real> {
    forms: BTreeMap<&'static str, Arc<dyn AdversarialForm<T>>>,
}

impl<T: Real> Default for AdversarialRegistry<T> {
    fn default() -> Self {
        let mut r = AdversarialRegistry { forms: BTreeMap::new() };
        r.register(Arc::new(LeastSquares));
        r.register(Arc::new(Logistic { logit_clamp: 15.0 }));
        r
    }
}

impl<T: Real> AdversarialRegistry<T> {
    pub fn register(&mut self, form: Arc<dyn AdversarialForm<T>>) {
        self.forms.insert(form.name(), form);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AdversarialForm<T>>> {
        self.forms.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown adversarial form `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.forms.keys().copied().collect()
    }
}

/// Realness maps of one domain, one per discriminator scale.
#[derive(Clone, Debug, Default)]
pub struct DomainMaps {
    pub real: Vec<Var>,
    pub fake: Vec<Var>,
}

/// Sum over domains of the scale-averaged objective for `role`.
///
/// The discriminator role needs real maps for every domain; the generator
/// role ignores them.
pub fn adversarial_loss<T: Real>(
    g: &mut Graph<T>,
    form: &dyn AdversarialForm<T>,
    role: Role,
    domains: &[DomainMaps],
) -> Result<Var> {
    let mut terms = Vec::new();
    for d in domains {
        if d.fake.is_empty() {
            return Err(Error::Parameter("adversarial loss needs fake realness maps".into()));
        }
        let k = 1.0 / d.fake.len() as f64;
        match role {
            Role::Discriminator => {
                if d.real.len() != d.fake.len() {
                    return Err(Error::Parameter(
                        "discriminator role needs one real map per fake map".into(),
                    ));
                }
                for (&r, &f) in d.real.iter().zip(&d.fake) {
                    terms.push((form.real(g, r), k));
                    terms.push((form.fake(g, f), k));
                }
            }
            Role::Generator => {
                for &f in &d.fake {
                    terms.push((form.generator(g, f), k));
                }
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::Parameter("adversarial loss over zero domains".into()));
    }
    g.weighted_sum(&terms)
}
