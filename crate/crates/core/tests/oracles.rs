//! Losses and metrics against independent brute-force loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regsynth::acds::{AcdsConfig, AcdsNet, AcdsOutputs};
use regsynth::losses::{
    alignment_loss, anatomy_consistency_loss, cycle_consistency_loss, self_reconstruction_loss,
};
use regsynth::metrics::{mae_masked, psnr_masked, ssim_masked};
use regsynth::nn::{Graph, ParamStore, Tensor, Var};
use regsynth::volume::{Mask, Modality, Units, Volume};

fn uniform(shape: Vec<usize>, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn l1_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut sum = 0.0;
    for i in 0..a.len() {
        sum += (a.data()[i] - b.data()[i]).abs();
    }
    sum / a.len() as f64
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn alignment_matches_elementwise_loop() {
    for seed in 0..5 {
        let shape = vec![2, 1, 4, 5, 6];
        let (b, a, t) = (
            uniform(shape.clone(), -1.0, 1.0, seed),
            uniform(shape.clone(), -1.0, 1.0, 10 + seed),
            uniform(shape.clone(), -1.0, 1.0, 20 + seed),
        );
        let mut g = Graph::<f64>::new();
        let (vb, va, vt) = (g.input(b.clone()), g.input(a.clone()), g.input(t.clone()));
        let l = alignment_loss(&mut g, Some(vb), Some(va), vt).unwrap();
        let expected = l1_oracle(&b, &t) + l1_oracle(&a, &t);
        assert!(close(g.scalar(l), expected, 1e-6), "seed {seed}");
    }
}

/// Every output of the stub is the matching input, as if each
/// decode∘encode were the identity.
fn identity_stub(g: &mut Graph<f64>, i_s: Var, i_t: Var) -> AcdsOutputs {
    let z = g.input(Tensor::zeros(vec![1, 2, 2, 2, 2]));
    let s = g.input(Tensor::zeros(vec![4]));
    AcdsOutputs {
        c_s: z,
        c_t: z,
        s_s: s,
        s_t: s,
        o_t: i_t,
        o_s: i_s,
        rec_s: i_s,
        rec_t: i_t,
        c_ot: z,
        c_os: z,
        cyc_s: i_s,
        cyc_t: i_t,
    }
}

#[test]
fn identity_stub_gives_zero_consistency_losses() {
    let mut g = Graph::<f64>::new();
    let i_s = g.input(uniform(vec![1, 1, 4, 4, 4], -1.0, 1.0, 1));
    let i_t = g.input(uniform(vec![1, 1, 4, 4, 4], -1.0, 1.0, 2));
    let o = identity_stub(&mut g, i_s, i_t);
    for l in [
        self_reconstruction_loss(&mut g, &o, i_s, i_t).unwrap(),
        cycle_consistency_loss(&mut g, &o, i_s, i_t).unwrap(),
        anatomy_consistency_loss(&mut g, &o).unwrap(),
    ] {
        assert_eq!(g.scalar(l), 0.0);
    }
}

#[test]
fn anatomy_offset_in_one_term_only() {
    let mut g = Graph::<f64>::new();
    let i = g.input(Tensor::zeros(vec![1, 1, 4, 4, 4]));
    let mut o = identity_stub(&mut g, i, i);
    let c = uniform(vec![1, 3, 2, 2, 2], -1.0, 1.0, 3);
    let shifted = Tensor::new(c.shape().to_vec(), c.data().iter().map(|v| v + 0.2).collect());
    o.c_s = g.input(c.clone());
    o.c_ot = g.input(shifted);
    o.c_t = g.input(c.clone());
    o.c_os = g.input(c);
    let l = anatomy_consistency_loss(&mut g, &o).unwrap();
    assert!((g.scalar(l) - 0.2).abs() < 1e-12);
}

fn small_net() -> (AcdsNet, ParamStore<f64>) {
    let net = AcdsNet::new(AcdsConfig {
        channel_scale: 0.125,
        style_dim: 8,
        code_dim: 8,
    });
    let mut store = ParamStore::new();
    net.declare(&mut store, &mut ChaCha8Rng::seed_from_u64(4));
    (net, store)
}

/// The composite losses recomputed from separately built translation chains
/// and an L1 loop.
#[test]
fn consistency_losses_match_manual_composition() {
    use Modality::{Source as S, Target as T};
    let (net, store) = small_net();
    let x_s = uniform(vec![1, 1, 16, 16, 16], -1.0, 1.0, 5);
    let x_t = uniform(vec![1, 1, 16, 16, 16], -1.0, 1.0, 6);

    let mut g = Graph::<f64>::new();
    let (i_s, i_t) = (g.input(x_s.clone()), g.input(x_t.clone()));
    let o = net.forward_all(&mut g, &store, i_s, i_t).unwrap();
    let self_rec = self_reconstruction_loss(&mut g, &o, i_s, i_t).unwrap();
    let cycle = cycle_consistency_loss(&mut g, &o, i_s, i_t).unwrap();
    let anatomy = anatomy_consistency_loss(&mut g, &o).unwrap();
    let (self_rec, cycle, anatomy) = (g.scalar(self_rec), g.scalar(cycle), g.scalar(anatomy));

    // each step in its own graph
    let content = |x: &Tensor<f64>, d| {
        let mut g = Graph::<f64>::new();
        let v = g.input(x.clone());
        let c = net.content(&mut g, &store, v, d).unwrap();
        g.value(c).clone()
    };
    let decode = |c: &Tensor<f64>, d| {
        let mut g = Graph::<f64>::new();
        let cv = g.input(c.clone());
        let s = net.style(&mut g, &store, d).unwrap();
        let y = net.decode(&mut g, &store, cv, s, d).unwrap();
        g.value(y).clone()
    };
    let (c_s, c_t) = (content(&x_s, S), content(&x_t, T));
    let (o_t, o_s) = (decode(&c_s, T), decode(&c_t, S));
    let (c_ot, c_os) = (content(&o_t, T), content(&o_s, S));

    let want_self = l1_oracle(&decode(&c_s, S), &x_s) + l1_oracle(&decode(&c_t, T), &x_t);
    let want_cycle = l1_oracle(&decode(&c_ot, S), &x_s) + l1_oracle(&decode(&c_os, T), &x_t);
    let want_anatomy = l1_oracle(&c_ot, &c_s) + l1_oracle(&c_os, &c_t);
    assert!(close(self_rec, want_self, 1e-9), "{self_rec} vs {want_self}");
    assert!(close(cycle, want_cycle, 1e-9), "{cycle} vs {want_cycle}");
    assert!(close(anatomy, want_anatomy, 1e-9), "{anatomy} vs {want_anatomy}");
    for v in [self_rec, cycle, anatomy] {
        assert!(v > 0.0);
    }
}

fn hu_volume(dims: [usize; 3], seed: u64, lo: f32, hi: f32) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let v = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Volume::new(dims, [1.0; 3], v, Units::Hu, Modality::Target).unwrap()
}

fn random_mask(dims: [usize; 3], seed: u64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Mask::new(dims, (0..n).map(|_| rng.gen_bool(0.7) as u8).collect()).unwrap()
}

#[test]
fn mae_and_psnr_match_masked_loops() {
    let dims = [9, 10, 11];
    for seed in 0..5 {
        let p = hu_volume(dims, seed, -1000.0, 1000.0);
        let r = hu_volume(dims, 50 + seed, -1000.0, 1000.0);
        let m = random_mask(dims, 100 + seed);
        let (mut abs, mut sq, mut n) = (0.0f64, 0.0f64, 0usize);
        for i in 0..p.len() {
            if m.voxels()[i] == 1 {
                let d = p.voxels()[i] as f64 - r.voxels()[i] as f64;
                abs += d.abs();
                sq += d * d;
                n += 1;
            }
        }
        let mae = mae_masked(&p, &r, &m).unwrap();
        assert!(close(mae, abs / n as f64, 1e-6));
        let psnr = psnr_masked(&p, &r, &m, 2000.0).unwrap();
        let want = 10.0 * (2000.0f64.powi(2) / (sq / n as f64)).log10();
        assert!((psnr - want).abs() < 1e-6, "{psnr} vs {want}");
    }
}

/// Direct weighted-window statistics at every admissible center, with
/// two-pass (centered) variances.
fn ssim_oracle(p: &Volume, r: &Volume, m: &Mask, range: f64) -> f64 {
    let rad = 5i64;
    let sigma = 1.5f64;
    let mut w = Vec::new();
    for dz in -rad..=rad {
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                w.push((-((dz * dz + dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let [d, h, wd] = p.dims();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (mut sum, mut n) = (0.0, 0usize);
    let r_ = rad as usize;
    for z in r_..d - r_ {
        for y in r_..h - r_ {
            for x in r_..wd - r_ {
                if m.voxels()[p.index(z, y, x)] == 0 {
                    continue;
                }
                let mut pts = Vec::with_capacity(w.len());
                for dz in -rad..=rad {
                    for dy in -rad..=rad {
                        for dx in -rad..=rad {
                            let (zz, yy, xx) = ((z as i64 + dz) as usize, (y as i64 + dy) as usize, (x as i64 + dx) as usize);
                            pts.push((p.at(zz, yy, xx) as f64, r.at(zz, yy, xx) as f64));
                        }
                    }
                }
                let mx: f64 = pts.iter().zip(&w).map(|((a, _), k)| k * a).sum();
                let my: f64 = pts.iter().zip(&w).map(|((_, b), k)| k * b).sum();
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cxy = 0.0;
                for ((a, b), k) in pts.iter().zip(&w) {
                    vx += k * (a - mx) * (a - mx);
                    vy += k * (b - my) * (b - my);
                    cxy += k * (a - mx) * (b - my);
                }
                sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn ssim_matches_windowed_statistics() {
    let dims = [16, 16, 16];
    for seed in 0..3 {
        let r = hu_volume(dims, seed, -300.0, 300.0);
        // correlated prediction so the structure term is far from zero
        let p = r
            .with_voxels(r.voxels().iter().enumerate().map(|(i, v)| 0.8 * v + 40.0 + ((i * 7919) % 97) as f32).collect())
            .unwrap();
        let m = random_mask(dims, 200 + seed);
        let got = ssim_masked(&p, &r, &m, 2000.0).unwrap();
        let want = ssim_oracle(&p, &r, &m, 2000.0);
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn metrics_ignore_voxels_outside_the_mask_and_are_symmetric() {
    let dims = [12, 12, 12];
    let p = hu_volume(dims, 1, -500.0, 500.0);
    let r = hu_volume(dims, 2, -500.0, 500.0);
    let m = Mask::from_fn(dims, |z, y, x| (2..10).contains(&z) && (3..9).contains(&y) && x > 1);
    let perturbed = p
        .with_voxels(p.voxels().iter().enumerate().map(|(i, &v)| if m.is_set(i) { v } else { v + 300.0 }).collect())
        .unwrap();
    assert_eq!(mae_masked(&p, &r, &m).unwrap(), mae_masked(&perturbed, &r, &m).unwrap());
    assert_eq!(psnr_masked(&p, &r, &m, 2000.0).unwrap(), psnr_masked(&perturbed, &r, &m, 2000.0).unwrap());
    assert_eq!(mae_masked(&p, &r, &m).unwrap(), mae_masked(&r, &p, &m).unwrap());
    let (a, b) = (ssim_masked(&p, &r, &m, 2000.0).unwrap(), ssim_masked(&r, &p, &m, 2000.0).unwrap());
    assert!((a - b).abs() < 1e-12);
}
