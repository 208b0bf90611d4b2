use std::collections::BTreeMap;
use std::sync::Arc;

use crate::acds::{AcdsConfig, AcdsNet, PlainNet, Synthesizer};
use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// How the synthesized image is compared with the (misaligned) label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    /// Through the registration field: `before` warps the synthesized image
    /// (synthesis, then re-sampling); `after` synthesizes the warped source.
    Registered { before: bool, after: bool },
    /// Directly against the label, no registration.
    Paired,
}

/// A training recipe selectable by name.
pub trait Variant: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Content/style-disentangled synthesizer with both translation
    /// directions; otherwise a single unmodulated encoder–decoder.
    fn disentangled(&self) -> bool;
    fn align_mode(&self) -> AlignMode;

    /// The anatomy term only exists for the disentangled model.
    fn effective_weights(&self, w: LossWeights) -> LossWeights {
        if self.disentangled() {
            w
        } else {
            LossWeights { anatomy: 0.0, ..w }
        }
    }

    fn registered(&self) -> bool {
        matches!(self.align_mode(), AlignMode::Registered { .. })
    }

    fn synthesizer(&self, channel_scale: f64) -> Synthesizer {
        if self.disentangled() {
            Synthesizer::Acds(AcdsNet::new(AcdsConfig {
                channel_scale,
                ..AcdsConfig::default()
            }))
        } else {
            Synthesizer::Plain(PlainNet::new(channel_scale))
        }
    }
}

struct Bef;
struct Aft;
struct Both;
struct BothAcds;
struct Baseline;

impl Variant for Bef {
    fn name(&self) -> &'static str {
        "BEF"
    }
    fn description(&self) -> &'static str {
        "synthesis, then re-sampling (warped synthesized image vs label)"
    }
    fn disentangled(&self) -> bool {
        false
    }
    fn align_mode(&self) -> AlignMode {
        AlignMode::Registered { before: true, after: false }
    }
}

impl Variant for Aft {
    fn name(&self) -> &'static str {
        "AFT"
    }
    fn description(&self) -> &'static str {
        "re-sampling, then synthesis (synthesized warped source vs label)"
    }
    fn disentangled(&self) -> bool {
        false
    }
    fn align_mode(&self) -> AlignMode {
        AlignMode::Registered { before: false, after: true }
    }
}

impl Variant for Both {
    fn name(&self) -> &'static str {
        "BOTH"
    }
    fn description(&self) -> &'static str {
        "both registration-guided consistency branches"
    }
    fn disentangled(&self) -> bool {
        false
    }
    fn align_mode(&self) -> AlignMode {
        AlignMode::Registered { before: true, after: true }
    }
}

impl Variant for BothAcds {
    fn name(&self) -> &'static str {
        "BOTH+ACDS"
    }
    fn description(&self) -> &'static str {
        "both branches with the disentangled anatomy-consistent synthesizer"
    }
    fn disentangled(&self) -> bool {
        true
    }
    fn align_mode(&self) -> AlignMode {
        AlignMode::Registered { before: true, after: true }
    }
}

impl Variant for Baseline {
    fn name(&self) -> &'static str {
        "BASELINE"
    }
    fn description(&self) -> &'static str {
        "paired L1 + adversarial against the misaligned label"
    }
    fn disentangled(&self) -> bool {
        false
    }
    fn align_mode(&self) -> AlignMode {
        AlignMode::Paired
    }
}

pub struct VariantRegistry {
    variants: BTreeMap<&'static str, Arc<dyn Variant>>,
}

impl Default for VariantRegistry {
    fn default() -> Self {
        let mut r = VariantRegistry {
            variants: BTreeMap::new(),
        };
        r.register(Arc::new(Bef));
        r.register(Arc::new(Aft));
        r.register(Arc::new(Both));
        r.register(Arc::new(BothAcds));
        r.register(Arc::new(Baseline));
        r
    }
}

impl VariantRegistry {
    pub fn register(&mut self, v: Arc<dyn Variant>) {
        self.variants.insert(v.name(), v);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Variant>> {
        self.variants.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown variant `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.variants.keys().copied().collect()
    }
}
