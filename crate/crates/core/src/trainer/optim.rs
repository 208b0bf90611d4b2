use std::collections::BTreeMap;

use crate::error::Result;
use crate::nn::{ParamStore, Tensor};

/// Adam with bias correction; moments are kept per parameter name so
/// disjoint parameter groups can share one instance.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments>,
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.5, 0.999)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }

    /// Applies one step to every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            st.t += 1;
            let (b1, b2) = (self.beta1, self.beta2);
            let c1 = 1.0 - b1.powi(st.t);
            let c2 = 1.0 - b2.powi(st.t);
            let step = lr / c1;
            for (((w, &gr), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                let gr = gr as f64;
                let mm = b1 * *m as f64 + (1.0 - b1) * gr;
                let vv = b2 * *v as f64 + (1.0 - b2) * gr * gr;
                *m = mm as f32;
                *v = vv as f32;
                *w = (*w as f64 - step * mm / ((vv / c2).sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}
