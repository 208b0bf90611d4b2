//! Central-difference checks of every differentiable op (double precision,
//! step 1e-3), at seeded points kept away from ReLU kinks and from
//! interpolation-cell boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regsynth::nn::{finite_difference_check, Conv, ConvInRelu, Graph, Mlp, Modulation, ParamStore, ResBlock, Tensor, Var};
use regsynth::Result;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-3;

/// Uniform values in ±[0.05, 1], never near zero.
fn away_from_zero(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data)
}

fn probes(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count.min(len)).map(|_| rng.gen_range(0..len)).collect()
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = away_from_zero(g.value(y).shape().to_vec(), seed);
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.mean(p))
}

fn assert_check(name: &str, input: &Tensor<f64>, n_probes: usize, f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) {
    let idx = probes(input.len(), n_probes, 99);
    let r = finite_difference_check(input, STEP, Some(&idx), f).unwrap();
    assert!(r.max_rel_error < TOL, "{name}: {r:?}");
}

/// Analytic vs numeric gradient of a parameter of a store-driven builder.
fn assert_param_check(
    name: &str,
    store: &ParamStore<f64>,
    param: &str,
    n_probes: usize,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) {
    let mut g = Graph::new();
    let y = f(&mut g, store).unwrap();
    let grads = g.backward(y);
    let analytic = grads.params()[param].clone();
    let len = analytic.len();
    let mut worst: f64 = 0.0;
    let mut pairs = Vec::new();
    for i in probes(len, n_probes, 5) {
        let eval = |delta: f64| {
            let mut s = store.clone();
            s.get_mut(param).unwrap().data_mut()[i] += delta;
            let mut g = Graph::new();
            let y = f(&mut g, &s).unwrap();
            g.scalar(y)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        pairs.push((analytic.data()[i], numeric));
    }
    let scale = pairs.iter().map(|(a, n): &(f64, f64)| a.abs().max(n.abs())).fold(0.0, f64::max);
    for (a, n) in &pairs {
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-2 * scale).max(1e-12));
    }
    assert!(worst < TOL, "{name} / {param}: {worst} {pairs:?}");
}

#[test]
fn elementwise_ops() {
    let x = away_from_zero(vec![2, 3, 4], 1);
    assert_check("tanh", &x, 24, |g, v| {
        let y = g.tanh(v);
        project(g, y, 2)
    });
    assert_check("softplus", &x, 24, |g, v| {
        let y = g.softplus(v);
        project(g, y, 2)
    });
    assert_check("leaky_relu", &x, 24, |g, v| {
        let y = g.leaky_relu(v, 0.2);
        project(g, y, 2)
    });
    assert_check("mul/add/sub", &x, 24, |g, v| {
        let c = g.input(away_from_zero(vec![2, 3, 4], 3));
        let m = g.mul(v, v)?;
        let a = g.add(m, c)?;
        let s = g.sub(a, v)?;
        project(g, s, 4)
    });
    assert_check("l1_mean", &x, 24, |g, v| {
        let c = g.input(Tensor::zeros(vec![2, 3, 4]));
        g.l1_mean(v, c)
    });
    assert_check("sq_dev_mean", &x, 24, |g, v| Ok(g.sq_dev_mean(v, 0.3)));
}

#[test]
fn convolution_wrt_input_and_weights() {
    for stride in [1, 2] {
        let x = away_from_zero(vec![1, 2, 6, 5, 4], 10 + stride as u64);
        let w = away_from_zero(vec![3, 2, 3, 3, 3], 20);
        let b = away_from_zero(vec![3], 21);
        assert_check(&format!("conv s{stride} input"), &x, 20, |g, v| {
            let wv = g.input(w.clone());
            let bv = g.input(b.clone());
            let y = g.conv3d(v, wv, Some(bv), stride)?;
            project(g, y, 7)
        });
        assert_check(&format!("conv s{stride} weight"), &w, 20, |g, wv| {
            let xv = g.input(x.clone());
            let bv = g.input(b.clone());
            let y = g.conv3d(xv, wv, Some(bv), stride)?;
            project(g, y, 7)
        });
    }
}

#[test]
fn normalization_and_affine() {
    let x = away_from_zero(vec![2, 3, 4, 4, 4], 30);
    assert_check("instance_norm", &x, 30, |g, v| {
        let y = g.instance_norm(v)?;
        project(g, y, 8)
    });
    let gamma = away_from_zero(vec![3], 31);
    assert_check("channel_affine gamma", &gamma, 3, |g, gv| {
        let xv = g.input(x.clone());
        let beta = g.input(away_from_zero(vec![3], 32));
        let y = g.channel_affine(xv, gv, beta)?;
        project(g, y, 9)
    });
}

#[test]
fn resampling_and_structure_ops() {
    let x = away_from_zero(vec![1, 2, 4, 4, 4], 40);
    assert_check("upsample2", &x, 20, |g, v| {
        let y = g.upsample2(v);
        project(g, y, 10)
    });
    assert_check("avg_pool2", &x, 20, |g, v| {
        let y = g.avg_pool2(v);
        project(g, y, 11)
    });
    assert_check("concat", &x, 20, |g, v| {
        let o = g.input(away_from_zero(vec![1, 1, 4, 4, 4], 41));
        let y = g.concat(&[o, v])?;
        project(g, y, 12)
    });
    let vec_in = away_from_zero(vec![6], 42);
    assert_check("linear+slice", &vec_in, 6, |g, v| {
        let w = g.input(away_from_zero(vec![5, 6], 43));
        let b = g.input(away_from_zero(vec![5], 44));
        let y = g.linear(v, w, b)?;
        let s = g.slice(y, 1, 3)?;
        project(g, s, 13)
    });
}

/// Field components `k + 0.25 + small`, never on a cell boundary.
fn offset_field(dims: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3 * dims.iter().product::<usize>();
    let data = (0..n)
        .map(|_| rng.gen_range(-1i32..=1) as f64 + 0.25 + rng.gen_range(-0.1..0.1))
        .collect();
    Tensor::new(vec![1, 3, dims[0], dims[1], dims[2]], data)
}

#[test]
fn grid_sample_wrt_image_and_field() {
    let dims = [5, 4, 6];
    let img = away_from_zero(vec![1, 2, dims[0], dims[1], dims[2]], 50);
    let field = offset_field(dims, 51);
    assert_check("grid_sample image", &img, 40, |g, v| {
        let f = g.input(field.clone());
        let y = g.grid_sample(v, f)?;
        project(g, y, 14)
    });
    assert_check("grid_sample field", &field, 40, |g, f| {
        let xv = g.input(img.clone());
        let y = g.grid_sample(xv, f)?;
        project(g, y, 14)
    });
    assert_check("smoothness", &field, 40, |g, f| g.smoothness(f));
}

/// Smallest |activation| entering the first ReLU of the 2-channel
/// modulated residual block `res`.
fn min_pre_relu(store: &ParamStore<f64>, x: &Tensor<f64>, style: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let h = Conv::new("res.conv1", 2, 2, 3, 1).forward(&mut g, store, xv).unwrap();
    let h = g.instance_norm(h).unwrap();
    let gamma = g.input(Tensor::new(vec![2], style.data()[..2].iter().map(|v| 1.0 + v).collect()));
    let beta = g.input(Tensor::new(vec![2], style.data()[2..4].to_vec()));
    let h = g.channel_affine(h, gamma, beta).unwrap();
    g.value(h).data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
}

/// Smallest |activation| entering either ReLU of the 8-16-16-4 MLP `mlp`.
fn min_mlp_pre_relu(store: &ParamStore<f64>, code: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let mut h = g.input(code.clone());
    let mut min = f64::INFINITY;
    for i in 1..=2 {
        let w = g.param(store, &format!("mlp.fc{i}.weight")).unwrap();
        let b = g.param(store, &format!("mlp.fc{i}.bias")).unwrap();
        let pre = g.linear(h, w, b).unwrap();
        min = g.value(pre).data().iter().map(|v| v.abs()).fold(min, f64::min);
        h = g.relu(pre);
    }
    min
}

#[test]
fn layer_blocks_wrt_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut store = ParamStore::<f64>::new();
    let block = ConvInRelu::new("blk", 2, 3, 2);
    block.declare(&mut store, &mut rng);
    let x = away_from_zero(vec![1, 2, 4, 4, 4], 61);
    assert_param_check("conv_in_relu", &store, "blk.conv.weight", 12, |g, s| {
        let xv = g.input(x.clone());
        let y = block.forward(g, s, xv)?;
        project(g, y, 15)
    });

    let res = ResBlock::new("res", 2, true);
    res.declare(&mut store, &mut rng);
    let x = away_from_zero(vec![1, 2, 4, 4, 4], 63);
    // first seeded style whose pre-ReLU activations all clear the
    // finite-difference perturbation (≈ step · |x̂| ≤ 3e-3) by a wide margin
    let style = (62..)
        .map(|seed| away_from_zero(vec![res.modulation_len()], seed))
        .find(|st| min_pre_relu(&store, &x, st) > 0.02)
        .unwrap();
    store.insert("style", style);
    assert_param_check("modulated residual", &store, "style", 8, |g, s| {
        let xv = g.input(x.clone());
        let p = g.param(s, "style")?;
        let y = res.forward(g, s, xv, Some(Modulation { params: p, offset: 0 }))?;
        project(g, y, 16)
    });

    let mlp = Mlp::new("mlp", 8, 16, 4);
    mlp.declare(&mut store, &mut rng);
    let code = (64..).map(|seed| away_from_zero(vec![8], seed)).find(|c| min_mlp_pre_relu(&store, c) > 0.05).unwrap();
    store.insert("code", code);
    for p in ["code", "mlp.fc1.weight"] {
        assert_param_check("mlp", &store, p, 8, |g, s| {
            let c = g.param(s, "code")?;
            let y = mlp.forward(g, s, c)?;
            project(g, y, 17)
        });
    }
}
