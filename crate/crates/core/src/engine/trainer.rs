use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::checkpoint::CheckpointState;
use super::cycle::{first_conversion, second_conversion, style_routings, CycleBatch, StyleRouting};
use super::optim::{lr_schedules, Adam};
use super::same_route::{same_loss_gradients, SameLossGradient};
use super::{SameLossStage, TrainingConfig};
use crate::audio::{pad_policies, FeatureBank, MelSpectrogram, MelStats, PairSampler, SampledPair};
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::losses::{LossInputs, LossReport, LossSet, LossWeights};
use crate::model::{grl_lambda_schedule, grl_placements, mels_to_tensor, Drvc, GrlConfig, GrlPlacement};
use crate::rng::seeded;

/// RNG stream ids derived from the training seed.
pub const INIT_STREAM: u64 = 1;
pub const SAMPLER_STREAM: u64 = 2;

/// A batch of `[B, T, M]` segment pairs with one-hot speaker labels `[B, K]`.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub a: Tensor,
    pub b: Tensor,
    pub labels_a: Tensor,
    pub labels_b: Tensor,
}

fn one_hot(indices: &[usize], k: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![0f32; indices.len() * k];
    for (row, &i) in indices.iter().enumerate() {
        if i >= k {
            return Err(Error::Contract(format!("speaker index {i} out of range for {k} speakers")));
        }
        v[row * k + i] = 1.0;
    }
    Ok(Tensor::from_vec(v, (indices.len(), k), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

impl TrainBatch {
    pub fn from_pairs(pairs: &[SampledPair], n_speakers: usize, dtype: DType) -> Result<Self> {
        let a: Vec<MelSpectrogram> = pairs.iter().map(|p| p.a.clone()).collect();
        let b: Vec<MelSpectrogram> = pairs.iter().map(|p| p.b.clone()).collect();
        let sa: Vec<usize> = pairs.iter().map(|p| p.speaker_a).collect();
        let sb: Vec<usize> = pairs.iter().map(|p| p.speaker_b).collect();
        Ok(Self {
            a: mels_to_tensor(&a, dtype)?,
            b: mels_to_tensor(&b, dtype)?,
            labels_a: one_hot(&sa, n_speakers, dtype)?,
            labels_b: one_hot(&sb, n_speakers, dtype)?,
        })
    }
}

/// The strategy objects and weights one training step needs.
pub struct StepContext {
    pub losses: LossSet,
    pub weights: LossWeights,
    pub placement: Box<dyn GrlPlacement>,
    pub routing: Box<dyn StyleRouting>,
    pub same_loss_stage: SameLossStage,
    pub same_loss_grad: Box<dyn SameLossGradient>,
}

impl StepContext {
    pub fn from_config(cfg: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            losses: LossSet::without(&cfg.ablate)?,
            weights: cfg.weights,
            placement: grl_placements().create(&cfg.grl_placement)?,
            routing: style_routings().create(&cfg.style_routing)?,
            same_loss_stage: cfg.same_loss_stage,
            same_loss_grad: same_loss_gradients().create(&cfg.same_loss_grad)?,
        })
    }
}

/// Everything computed by one forward pass.
pub struct Forward {
    pub cycle: CycleBatch,
    pub total: Tensor,
    pub report: LossReport,
}

/// Double exchange, identity reconstructions, discriminator and classifier
/// passes, and the weighted objective.
pub fn forward_losses(model: &Drvc, ctx: &StepContext, batch: &TrainBatch, lambda: f64) -> Result<Forward> {
    let n = batch.a.dim(0)?;
    let first = first_conversion(model, &batch.a, &batch.b, ctx.routing.as_ref())?;
    let cycle = second_conversion(model, first, ctx.routing.as_ref())?;
    let f = &cycle.first;

    // Codes the same-losses compare: `a` against its cycle output `a_hat`,
    // or against the conversion that kept its content (`a_tilde`) and the
    // one that took its style (`b_tilde`).
    let route = ctx.same_loss_grad.as_ref();
    let wants_same = ctx.losses.contains("same-content") || ctx.losses.contains("same-style");
    let (a_c, b_c) = (route.original(&f.a_c), route.original(&f.b_c));
    let (a_s, b_s) = (route.original(&f.a_s), route.original(&f.b_s));
    let (kept_c, took_s) = match (wants_same, ctx.same_loss_stage) {
        (false, _) => ((f.a_c.clone(), f.b_c.clone()), (f.a_s.clone(), f.b_s.clone())),
        (true, SameLossStage::Second) => {
            let (c, s) = route.reencode(model, &Tensor::cat(&[&cycle.a_hat, &cycle.b_hat], 0)?)?;
            ((c.narrow(0, 0, n)?, c.narrow(0, n, n)?), (s.narrow(0, 0, n)?, s.narrow(0, n, n)?))
        }
        (true, SameLossStage::First) => {
            let (c, s) = route.reencode(model, &Tensor::cat(&[&f.a_tilde, &f.b_tilde], 0)?)?;
            ((c.narrow(0, 0, n)?, c.narrow(0, n, n)?), (s.narrow(0, n, n)?, s.narrow(0, 0, n)?))
        }
    };
    let content_pairs = [(&a_c, &kept_c.0), (&b_c, &kept_c.1)];
    let style_pairs = [(&a_s, &took_s.0), (&b_s, &took_s.1)];

    let grl = GrlConfig { lambda_value: lambda };
    let styles = ctx.placement.domain_input(&Tensor::cat(&[&f.a_s, &f.b_s], 0)?, grl)?;
    let probs = model.domain_probs(&styles)?;
    let probs_a = probs.narrow(0, 0, n)?;
    let probs_b = probs.narrow(0, n, n)?;

    let fakes = ctx.placement.voice_input(&Tensor::cat(&[&f.a_tilde, &f.b_tilde], 0)?, grl)?;
    let logits = model.voice_logits(&Tensor::cat(&[&batch.a, &batch.b, &fakes], 0)?)?;
    let logit = |i: usize| logits.narrow(0, i * n, n);
    let (lra, lrb, lfa, lfb) = (logit(0)?, logit(1)?, logit(2)?, logit(3)?);

    let inputs = LossInputs {
        a: &batch.a,
        b: &batch.b,
        a_hat: &cycle.a_hat,
        b_hat: &cycle.b_hat,
        a_rec: &f.a_rec,
        b_rec: &f.b_rec,
        content_pairs,
        style_pairs,
        probs_a: &probs_a,
        probs_b: &probs_b,
        labels_a: &batch.labels_a,
        labels_b: &batch.labels_b,
        logit_real_a: &lra,
        logit_fake_a: &lfa,
        logit_real_b: &lrb,
        logit_fake_b: &lfb,
    };
    let (total, report) = ctx.losses.evaluate(&inputs, &ctx.weights)?;
    Ok(Forward { cycle, total, report })
}

/// One Adam update of every component on the objective at progress `k`.
pub fn training_step(
    model: &Drvc,
    adam: &mut Adam,
    ctx: &StepContext,
    batch: &TrainBatch,
    progress: f64,
    lr: f64,
) -> Result<(LossReport, f64)> {
    let lambda = grl_lambda_schedule(progress);
    let fwd = forward_losses(model, ctx, batch, lambda)?;
    let grads = fwd.total.backward()?;
    adam.step(&model.params, &grads, lr)?;
    if let Some(name) = model.params.first_non_finite()? {
        return Err(Error::Divergence(format!("parameters of {name}")));
    }
    Ok((fwd.report, lambda))
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossReport,
    pub lambda_grl: f64,
    pub lr: f64,
}

#[derive(Default, Clone)]
pub struct RunOptions {
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
    /// Polled before every step; when set, a checkpoint is written and the
    /// run returns.
    pub stop: Option<Arc<AtomicBool>>,
    /// Behave as if interrupted once this many global steps are done.
    pub stop_after: Option<usize>,
    /// Append to the JSON-lines training log under `work_dir`.
    pub write_log: bool,
    /// Also write `epoch_NNNN.safetensors` at every epoch boundary.
    pub keep_epoch_checkpoints: bool,
}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub state: CheckpointState,
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub interrupted: bool,
}

fn read_log_prefix(path: &Path, upto: usize) -> Result<Vec<String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: StepRecord = serde_json::from_str(line)?;
        if rec.step <= upto {
            kept.push(line.to_string());
        }
    }
    Ok(kept)
}

/// Trains on `train` (normalized features) for `epochs x steps_per_epoch`
/// steps, checkpointing at every epoch boundary and on interruption.
pub fn run_training(cfg: &AppConfig, train: &FeatureBank, stats: &MelStats, opts: &RunOptions) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let tc = &cfg.training;
    if train.n_speakers() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 speakers, found {}",
            train.n_speakers()
        )));
    }
    let ctx = StepContext::from_config(tc)?;
    let schedule = lr_schedules().create(&tc.lr_schedule)?;
    let steps_per_epoch = tc.steps_per_epoch_for(train.n_utterances());
    let total_steps = tc.epochs * steps_per_epoch;
    let mut sampler = PairSampler::new(
        seeded(tc.seed, SAMPLER_STREAM),
        tc.segment_frames,
        pad_policies().create(&cfg.data.pad_policy)?,
    );

    let (model, mut adam, mut global_step) = match &opts.resume {
        Some(path) => {
            let state = CheckpointState::load(path)?;
            if state.speakers != train.speakers {
                return Err(Error::Config(format!(
                    "checkpoint speakers {:?} differ from training speakers {:?}",
                    state.speakers, train.speakers
                )));
            }
            if state.stats != *stats {
                log::warn!("checkpoint normalization statistics differ from the supplied ones");
            }
            let model = state.build_model()?;
            sampler.set_rng_state(&state.rng);
            (model, state.adam, state.global_step)
        }
        None => {
            let mut rng = seeded(tc.seed, INIT_STREAM);
            let model = Drvc::new(&cfg.model, cfg.mel.n_mels, train.n_speakers(), DType::F32, &mut rng)?;
            let adam = Adam::from_config(&model.params, tc)?;
            (model, adam, 0)
        }
    };

    let ckpt_dir = cfg.checkpoint_dir();
    let latest = ckpt_dir.join("latest.safetensors");
    let log_path = cfg.training_log_path();
    let mut log = if opts.write_log {
        let kept = if opts.resume.is_some() {
            read_log_prefix(&log_path, global_step)?
        } else {
            Vec::new()
        };
        if let Some(dir) = log_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        for line in kept {
            writeln!(f, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        Some(f)
    } else {
        None
    };

    let capture = |model: &Drvc, adam: &Adam, step: usize, sampler: &PairSampler| {
        CheckpointState::capture(
            model,
            adam,
            step / steps_per_epoch,
            step,
            sampler.rng_state(),
            cfg,
            &train.speakers,
            stats,
        )
    };

    if opts.resume.is_none() && total_steps == 0 {
        let state = capture(&model, &adam, 0, &sampler)?;
        state.save(&latest)?;
        return Ok(TrainingOutcome {
            state,
            records: Vec::new(),
            checkpoint: latest,
            interrupted: false,
        });
    }

    let mut records = Vec::new();
    while global_step < total_steps {
        let stop_requested = opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst));
        if stop_requested || opts.stop_after == Some(global_step) {
            let state = capture(&model, &adam, global_step, &sampler)?;
            let path = ckpt_dir.join(format!("step_{global_step:08}.safetensors"));
            state.save(&path)?;
            state.save(&latest)?;
            return Ok(TrainingOutcome {
                state,
                records,
                checkpoint: path,
                interrupted: true,
            });
        }
        let epoch = global_step / steps_per_epoch;
        let lr = schedule.lr(epoch, tc);
        let progress = global_step as f64 / total_steps as f64;
        let pairs = sampler.sample_batch(train, tc.batch_size)?;
        let batch = TrainBatch::from_pairs(&pairs, train.n_speakers(), model.dtype())?;
        let (losses, lambda_grl) = training_step(&model, &mut adam, &ctx, &batch, progress, lr)?;
        global_step += 1;
        let record = StepRecord {
            step: global_step,
            epoch,
            losses,
            lambda_grl,
            lr,
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&log_path, e))?;
        }
        records.push(record);
        if global_step % steps_per_epoch == 0 || global_step == total_steps {
            let state = capture(&model, &adam, global_step, &sampler)?;
            if opts.keep_epoch_checkpoints {
                let done = global_step.div_ceil(steps_per_epoch);
                state.save(&ckpt_dir.join(format!("epoch_{done:04}.safetensors")))?;
            }
            state.save(&latest)?;
        }
    }
    let state = capture(&model, &adam, global_step, &sampler)?;
    if !latest.exists() {
        state.save(&latest)?;
    }
    Ok(TrainingOutcome {
        state,
        records,
        checkpoint: latest,
        interrupted: false,
    })
}

/// `G(E_content(source), E_style(target))` on normalized mels. The output
/// has the source's frame count.
pub fn convert(model: &Drvc, source: &MelSpectrogram, target: &MelSpectrogram) -> Result<MelSpectrogram> {
    if let Some(name) = model.params.first_non_finite()? {
        return Err(Error::Contract(format!("parameter {name} is not finite")));
    }
    let content = model.encode_content(source)?;
    let style = model.encode_style(target)?;
    model.generate_mel(&content, &style, source, &target.speaker_id)
}
