//! Registration-guided training loop, inference and ablation runs.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod variant;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acds::{self, Synthesizer};
use crate::error::{Error, Result};
use crate::losses::{self, AdversarialForm, AdversarialRegistry, DomainMaps, GraphTerms, LossReport, LossWeights, Role};
use crate::metrics::{self, CohortReport, EvalWindow};
use crate::nn::{Graph, ParamStore, Real, Tensor, Var};
use crate::phantom::{self, Case, Split};
use crate::registration::RegNet;
use crate::rng::{stream, Stream};
use crate::volume::{self, Dims, Mask, Modality, Units, Volume};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{lr_schedule, TrainConfig, CONFIG_KEYS};
pub use optim::Adam;
pub use variant::{AlignMode, Variant, VariantRegistry};

/// Minimum body-mask fraction of a training patch.
pub const MIN_PATCH_COVERAGE: f64 = 0.3;
const PATCH_TRIES: usize = 100;

/// Networks of one variant plus its effective loss weights.
#[derive(Clone)]
pub struct Model {
    pub variant: Arc<dyn Variant>,
    pub synth: Synthesizer,
    pub reg: Option<RegNet>,
    pub weights: LossWeights,
}

impl Model {
    pub fn new(variant: Arc<dyn Variant>, channel_scale: f64, weights: LossWeights) -> Self {
        Model {
            synth: variant.synthesizer(channel_scale),
            reg: variant.registered().then(|| RegNet::new(channel_scale)),
            weights: variant.effective_weights(weights),
            variant,
        }
    }

    /// Freshly initialized parameters, deterministic in `seed`.
    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        self.synth.declare(&mut store, &mut rng);
        if let Some(reg) = &self.reg {
            reg.declare(&mut store, &mut rng);
        }
        store
    }

    /// Domains that have a discriminator, target first.
    fn adversarial_domains(&self) -> Vec<Modality> {
        [Modality::Target, Modality::Source]
            .into_iter()
            .filter(|&d| self.synth.discriminator(d).is_some())
            .collect()
    }
}

/// Whether a parameter belongs to a discriminator.
pub fn is_discriminator_param(name: &str) -> bool {
    name.starts_with("disc_")
}

/// `[N, 1, D, H, W]` source and label patches.
#[derive(Clone, Debug)]
pub struct Batch {
    pub source: Tensor<f32>,
    pub target: Tensor<f32>,
    /// Seed the patches were drawn with (reported on divergence).
    pub seed: u64,
}

/// Generator-side graph of one step, before the adversarial term.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorPass {
    pub i_s: Var,
    pub i_t: Var,
    pub phi: Option<Var>,
    /// Source → target translation of the unwarped source.
    pub o_t: Var,
    pub o_s: Option<Var>,
    /// Synthesized, then warped.
    pub o_b: Option<Var>,
    /// Warped, then synthesized.
    pub o_a: Option<Var>,
    pub terms: GraphTerms,
}

/// Builds every generator-side term except the adversarial one. A single
/// field `φ = R(I_s, I_t)` feeds both consistency branches.
pub fn generator_pass<T: Real>(
    model: &Model,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    i_s: Var,
    i_t: Var,
) -> Result<GeneratorPass> {
    let mut terms = GraphTerms::default();
    let phi = match &model.reg {
        Some(reg) => Some(reg.forward(g, store, i_s, i_t)?),
        None => None,
    };
    if let Some(phi) = phi {
        terms.smooth = Some(g.smoothness(phi)?);
    }
    let (o_t, o_s) = match &model.synth {
        Synthesizer::Acds(net) => {
            let out = net.forward_all(g, store, i_s, i_t)?;
            terms.self_rec = Some(losses::self_reconstruction_loss(g, &out, i_s, i_t)?);
            terms.cycle = Some(losses::cycle_consistency_loss(g, &out, i_s, i_t)?);
            if model.weights.anatomy > 0.0 {
                terms.anatomy = Some(losses::anatomy_consistency_loss(g, &out)?);
            }
            (out.o_t, Some(out.o_s))
        }
        Synthesizer::Plain(net) => (net.s2t(g, store, i_s)?, None),
    };
    let (mut o_b, mut o_a) = (None, None);
    match (model.variant.align_mode(), phi) {
        (AlignMode::Registered { before, after }, Some(phi)) => {
            if before {
                o_b = Some(g.grid_sample(o_t, phi)?);
            }
            if after {
                let warped = g.grid_sample(i_s, phi)?;
                o_a = Some(model.synth.s2t(g, store, warped)?);
            }
            terms.align = Some(losses::alignment_loss(g, o_b, o_a, i_t)?);
        }
        (AlignMode::Paired, _) => terms.align = Some(g.l1_mean(o_t, i_t)?),
        (AlignMode::Registered { .. }, None) => {
            return Err(Error::Parameter("registered variant without a registration network".into()))
        }
    }
    Ok(GeneratorPass {
        i_s,
        i_t,
        phi,
        o_t,
        o_s,
        o_b,
        o_a,
        terms,
    })
}

/// Optimizer-visible state.
#[derive(Clone)]
pub struct TrainerState {
    pub params: ParamStore<f32>,
    pub adam: Adam,
    pub iteration: usize,
}

impl TrainerState {
    pub fn new(params: ParamStore<f32>) -> Self {
        TrainerState {
            params,
            adam: Adam::default(),
            iteration: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub report: LossReport,
    pub d_loss: f64,
}

/// Real/synthesized pairs for the discriminators, one per domain.
pub struct DiscriminatorInputs {
    pub domains: Vec<(Modality, Tensor<f32>, Tensor<f32>)>,
}

/// One discriminator update; only `disc_*` parameters change.
pub fn discriminator_step(
    model: &Model,
    state: &mut TrainerState,
    inputs: &DiscriminatorInputs,
    lr: f64,
    form: &dyn AdversarialForm<f32>,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut maps = Vec::new();
    for (d, real, fake) in &inputs.domains {
        let disc = model
            .synth
            .discriminator(*d)
            .ok_or_else(|| Error::Parameter(format!("no discriminator for {d:?}")))?;
        let r = g.input(real.clone());
        let f = g.input(fake.clone());
        maps.push(DomainMaps {
            real: disc.forward(&mut g, &state.params, r, true)?,
            fake: disc.forward(&mut g, &state.params, f, true)?,
        });
    }
    let loss = losses::adversarial_loss(&mut g, form, Role::Discriminator, &maps)?;
    let value = g.scalar(loss) as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {value}")));
    }
    let grads = g.backward(loss);
    debug_assert!(grads.params().keys().all(|k| is_discriminator_param(k)));
    state.adam.step(&mut state.params, grads.params(), lr)?;
    Ok(value)
}

/// Discriminator update on the current translations, then a joint update of
/// every other network on the weighted generator objective.
pub fn train_step(
    model: &Model,
    state: &mut TrainerState,
    batch: &Batch,
    lr: f64,
    form: &dyn AdversarialForm<f32>,
) -> Result<StepOutput> {
    let mut g = Graph::new();
    let i_s = g.input(batch.source.clone());
    let i_t = g.input(batch.target.clone());
    let pass = generator_pass(model, &mut g, &state.params, i_s, i_t)?;

    let mut fakes = vec![(Modality::Target, pass.o_t)];
    if let Some(o_s) = pass.o_s {
        fakes.push((Modality::Source, o_s));
    }
    let inputs = DiscriminatorInputs {
        domains: fakes
            .iter()
            .filter(|(d, _)| model.adversarial_domains().contains(d))
            .map(|&(d, fake)| {
                let real = match d {
                    Modality::Target => batch.target.clone(),
                    Modality::Source => batch.source.clone(),
                };
                (d, real, g.value(fake).clone())
            })
            .collect(),
    };
    let d_loss = discriminator_step(model, state, &inputs, lr, form)
        .map_err(|e| annotate(e, batch.seed, None))?;

    let mut gen_maps = Vec::new();
    for &(d, fake) in &fakes {
        if let Some(disc) = model.synth.discriminator(d) {
            gen_maps.push(DomainMaps {
                real: Vec::new(),
                fake: disc.forward(&mut g, &state.params, fake, false)?,
            });
        }
    }
    let mut terms = pass.terms;
    terms.adv = Some(losses::adversarial_loss(&mut g, form, Role::Generator, &gen_maps)?);
    let total = losses::total_loss_node(&mut g, &terms, &model.weights)?;
    let components = terms.components(&g);
    let report = losses::total_loss(&components, &model.weights)
        .map_err(|e| annotate(e, batch.seed, Some(d_loss)))?;
    if !g.scalar(total).is_finite() {
        return Err(annotate(
            Error::NonFinite(format!("generator total; components {components:?}")),
            batch.seed,
            Some(d_loss),
        ));
    }
    let grads = g.backward(total).into_params();
    debug_assert!(grads.keys().all(|k| !is_discriminator_param(k)));
    state.adam.step(&mut state.params, &grads, lr)?;
    if !state.params.all_finite() {
        let bad: Vec<&str> = state.params.iter().filter(|(_, t)| !t.is_finite()).map(|(n, _)| n).collect();
        return Err(annotate(
            Error::NonFinite(format!("parameters {bad:?} after update; losses {report:?}")),
            batch.seed,
            Some(d_loss),
        ));
    }
    state.iteration += 1;
    Ok(StepOutput { report, d_loss })
}

fn annotate(e: Error, seed: u64, d_loss: Option<f64>) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{msg}; d_loss {d_loss:?}; batch seed {seed}")),
        other => other,
    }
}

/// Normalized training case.
#[derive(Clone, Debug)]
struct Sample {
    source: Volume,
    label: Volume,
    mask: Mask,
}

fn normalized(v: Volume, window: (f32, f32)) -> Result<Volume> {
    match v.units() {
        Units::Normalized => Ok(v),
        Units::Hu => volume::normalize_intensity(&v, window.0, window.1),
    }
}

fn load_samples(dir: &Path, ids: &[String], window: (f32, f32)) -> Result<Vec<(Case, Sample)>> {
    ids.iter()
        .map(|id| {
            let case = phantom::load_case(dir, id)?;
            let sample = Sample {
                source: normalized(case.source.clone(), window)?,
                label: normalized(case.target_misaligned.clone(), window)?,
                mask: case.mask.clone(),
            };
            Ok((case, sample))
        })
        .collect()
}

fn patch_origin(mask: &Mask, patch: Dims, rng: &mut impl Rng) -> Result<[usize; 3]> {
    let dims = mask.dims();
    if (0..3).any(|a| patch[a] > dims[a]) {
        return Err(Error::Config(format!("patch {patch:?} larger than volume {dims:?}")));
    }
    let mut best = ([0; 3], -1.0f64);
    for _ in 0..PATCH_TRIES {
        let o: [usize; 3] = std::array::from_fn(|a| rng.gen_range(0..=dims[a] - patch[a]));
        let cover = mask.extract(o, patch)?.count() as f64 / volume::voxel_count(patch) as f64;
        if cover >= MIN_PATCH_COVERAGE {
            return Ok(o);
        }
        if cover > best.1 {
            best = (o, cover);
        }
        if patch == dims {
            break;
        }
    }
    Ok(best.0)
}

fn make_batch(samples: &[&Sample], patch: usize, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = [patch; 3];
    let mut src = Vec::with_capacity(samples.len());
    let mut tgt = Vec::with_capacity(samples.len());
    for s in samples {
        let o = patch_origin(&s.mask, size, &mut rng)?;
        let oi = o.map(|v| v as i64);
        src.push(volume::extract_patch(&s.source, oi, size)?);
        tgt.push(volume::extract_patch(&s.label, oi, size)?);
    }
    Ok(Batch {
        source: volume::stack(&src.iter().collect::<Vec<_>>())?,
        target: volume::stack(&tgt.iter().collect::<Vec<_>>())?,
        seed,
    })
}

/// Inference result; `padded` holds the working dims when the input had to
/// be reflect-padded to a multiple of 8.
#[derive(Clone, Debug)]
pub struct InferOutput {
    pub volume: Volume,
    pub padded: Option<Dims>,
}

/// Mirror padding at the far end of each axis (edge voxel not repeated).
fn pad_reflect(v: &Volume, to: Dims) -> Result<Volume> {
    let d = v.dims();
    let reflect = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else {
            let k = i - (n - 1);
            (n - 1).saturating_sub(k)
        }
    };
    let mut out = Vec::with_capacity(volume::voxel_count(to));
    for z in 0..to[0] {
        for y in 0..to[1] {
            for x in 0..to[2] {
                out.push(v.at(reflect(z, d[0]), reflect(y, d[1]), reflect(x, d[2])));
            }
        }
    }
    Volume::new(to, v.spacing(), out, v.units(), v.modality())
}

/// Source → target translation in HU for an HU or normalized input.
pub fn synthesize_hu(
    synth: &Synthesizer,
    params: &ParamStore<f32>,
    input: &Volume,
    window: (f32, f32),
) -> Result<InferOutput> {
    let x = normalized(input.clone(), window)?;
    let dims = x.dims();
    let padded_dims = dims.map(|d| d.div_ceil(8) * 8);
    let (x, padded) = if padded_dims != dims {
        (pad_reflect(&x, padded_dims)?, Some(padded_dims))
    } else {
        (x, None)
    };
    let mut y = acds::synthesize_s2t(synth, params, &x)?;
    if padded.is_some() {
        y = volume::extract_patch(&y, [0, 0, 0], dims)?;
    }
    let hu = volume::denormalize_intensity(&y, window.0, window.1)?;
    Ok(InferOutput {
        volume: Volume::new(dims, input.spacing(), hu.into_voxels(), Units::Hu, Modality::Target)?,
        padded,
    })
}

/// Rebuilds the model a checkpoint was trained with.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let variant = VariantRegistry::default().get(&ckpt.meta.variant)?;
    let model = Model::new(variant, ckpt.meta.channel_scale, LossWeights::default());
    let expected: ParamStore<f32> = model.init(0);
    for (name, t) in expected.iter() {
        let got = ckpt
            .params
            .peek(name)
            .ok_or_else(|| Error::Corruption(format!("checkpoint lacks tensor `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::Corruption(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    Ok(model)
}

/// Test-time translation: only the source content encoder, the target style
/// encoder (with its domain code) and the target generator are read.
pub fn infer(input: &Volume, ckpt: &Checkpoint) -> Result<InferOutput> {
    let model = model_from_checkpoint(ckpt)?;
    synthesize_hu(&model.synth, &ckpt.params, input, ckpt.meta.window)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub report: LossReport,
    pub d_loss: f64,
}

pub const LOSS_CSV_HEADER: &str = "iter,adv,self,cycle,anatomy,smooth,align,total,d_loss";

fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iter, p.adv, p.self_rec, p.cycle, p.anatomy, p.smooth, p.align, p.total, r.d_loss
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub losses: Vec<LossRow>,
    /// Per-epoch validation MAE (HU) against the training-style label.
    pub validation: Vec<(usize, f64)>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn validation_mae(model: &Model, params: &ParamStore<f32>, val: &[(Case, Sample)], window: (f32, f32)) -> Result<f64> {
    let mut total = 0.0;
    for (case, s) in val {
        let pred = synthesize_hu(&model.synth, params, &s.source, window)?.volume;
        let label = volume::denormalize_intensity(&s.label, window.0, window.1)?;
        total += metrics::mae_masked(&pred, &label, &case.mask)?;
    }
    Ok(total / val.len() as f64)
}

/// Trains `cfg.variant`, writing `ckpt_final.bin`, `losses.csv`,
/// `validation.csv` and `config.snapshot` into `run_dir`.
pub fn train(cfg: &TrainConfig, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let variant = VariantRegistry::default().get(&cfg.variant)?;
    let form = AdversarialRegistry::<f32>::default().get(&cfg.adv_form)?;
    let manifest = phantom::load_manifest(&cfg.data_dir)?;
    let window = (cfg.hu_lo, cfg.hu_hi);
    let ids = |s: Split| manifest.split(s).map(|c| c.id.clone()).collect::<Vec<_>>();
    let train_set = load_samples(&cfg.data_dir, &ids(Split::Train), window)?;
    let val_set = load_samples(&cfg.data_dir, &ids(Split::Val), window)?;
    if train_set.is_empty() {
        return Err(Error::Dataset(format!("no training cases in {}", cfg.data_dir.display())));
    }

    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write(&run_dir.join("config.snapshot"), &cfg.to_text())?;

    let model = Model::new(variant, cfg.channel_scale, cfg.weights);
    let mut state = TrainerState::new(model.init(cfg.seed));
    let mut rng = stream(cfg.seed, Stream::Sampling);
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch);
    let max_iter = cfg.epochs * steps_per_epoch;
    let mut rows = Vec::with_capacity(max_iter);
    let mut validation = Vec::new();
    log::info!(
        "training {} on {} cases ({} params, {} steps)",
        model.variant.name(),
        train_set.len(),
        state.params.num_scalars(),
        max_iter
    );

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i].1).collect();
            let batch = make_batch(&samples, cfg.patch, rng.next_u64())?;
            let lr = lr_schedule(state.iteration, max_iter, cfg.lr, cfg.poly_power);
            let iter = state.iteration;
            let out = train_step(&model, &mut state, &batch, lr, form.as_ref()).inspect_err(|_| {
                let _ = write(&run_dir.join("losses.csv"), &loss_csv(&rows));
            })?;
            rows.push(LossRow {
                iter,
                report: out.report,
                d_loss: out.d_loss,
            });
        }
        if !val_set.is_empty() {
            let mae = validation_mae(&model, &state.params, &val_set, window)?;
            validation.push((epoch, mae));
        }
        let last = &rows[rows.len() - 1].report;
        log::info!(
            "epoch {epoch}/{}: total {:.4} align {:.4} val_mae {:?}",
            cfg.epochs,
            last.total,
            last.align,
            validation.last().map(|v| v.1)
        );
        write(&run_dir.join("losses.csv"), &loss_csv(&rows))?;
    }

    let mut val_csv = String::from("epoch,val_mae_hu\n");
    for (e, m) in &validation {
        let _ = writeln!(val_csv, "{e},{m}");
    }
    write(&run_dir.join("validation.csv"), &val_csv)?;

    let meta = CheckpointMeta {
        config: cfg.to_text(),
        config_hash: cfg.hash(),
        variant: model.variant.name().to_string(),
        channel_scale: cfg.channel_scale,
        window,
        seed: cfg.seed,
        epoch: cfg.epochs,
        iteration: state.iteration,
        val_mae: validation.last().map(|v| v.1),
        tensors: Vec::new(),
    };
    let checkpoint = run_dir.join("ckpt_final.bin");
    Checkpoint::new(meta, state.params).save(&checkpoint)?;
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        checkpoint,
        losses: rows,
        validation,
    })
}

/// Paired-L1 + adversarial baseline on the same backbone and data.
pub fn train_baseline(cfg: &TrainConfig, run_dir: &Path) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        variant: "BASELINE".into(),
        ..cfg.clone()
    };
    train(&cfg, run_dir)
}

/// Recomputes the validation MAE a checkpoint was saved with.
pub fn checkpoint_validation_mae(ckpt: &Checkpoint, data_dir: &Path) -> Result<f64> {
    let model = model_from_checkpoint(ckpt)?;
    let manifest = phantom::load_manifest(data_dir)?;
    let ids: Vec<String> = manifest.split(Split::Val).map(|c| c.id.clone()).collect();
    if ids.is_empty() {
        return Err(Error::Dataset("no validation cases".into()));
    }
    let val = load_samples(data_dir, &ids, ckpt.meta.window)?;
    validation_mae(&model, &ckpt.params, &val, ckpt.meta.window)
}

/// Scores `infer` on a split against the aligned ground truth.
pub fn evaluate_split(ckpt: &Checkpoint, data_dir: &Path, split: Split) -> Result<CohortReport> {
    let manifest = phantom::load_manifest(data_dir)?;
    let (lo, hi) = ckpt.meta.window;
    let mut cases = Vec::new();
    for entry in manifest.split(split) {
        let case = phantom::load_case(data_dir, &entry.id)?;
        let pred = infer(&case.source, ckpt)?.volume;
        cases.push(metrics::evaluate_case(&entry.id, &pred, &case.target_aligned, &case.mask, EvalWindow { lo, hi })?);
    }
    if cases.is_empty() {
        return Err(Error::Dataset(format!("split {split:?} is empty")));
    }
    CohortReport::from_cases(cases)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub report: CohortReport,
    pub outcome: TrainOutcome,
}

pub const ABLATION_CSV_HEADER: &str = "variant,mae_mean,mae_std,psnr_mean,psnr_std,ssim_mean,ssim_std";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        let m = &r.report.summary;
        let (pm, ps) = m.psnr_db.map(|p| (p.mean, p.std)).unwrap_or((f64::INFINITY, 0.0));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.variant, m.mae_hu.mean, m.mae_hu.std, pm, ps, m.ssim.mean, m.ssim.std
        );
    }
    s
}

/// Trains every variant with the same seed and data, scores each on the
/// test split and writes `ablation.csv` into `run_dir`.
pub fn ablate(cfg: &TrainConfig, variants: &[String], run_dir: &Path) -> Result<Vec<AblationRow>> {
    let registry = VariantRegistry::default();
    for v in variants {
        registry.get(v)?;
    }
    let mut rows = Vec::new();
    for v in variants {
        let vcfg = TrainConfig {
            variant: v.clone(),
            ..cfg.clone()
        };
        let outcome = train(&vcfg, &run_dir.join(v))?;
        let ckpt = Checkpoint::load(&outcome.checkpoint)?;
        let report = evaluate_split(&ckpt, &cfg.data_dir, Split::Test)?;
        log::info!("{v}: test MAE {:.2} HU", report.summary.mae_hu.mean);
        rows.push(AblationRow {
            variant: v.clone(),
            report,
            outcome,
        });
    }
    write(&run_dir.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}
