//! The training stages: base pre-training, plastic meta-training with a
//! privileged encoder, estimator regression, and the baselines.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::{add_estimator, base_model, latent_model, modulated_model, stdp_model};
use super::run_dir::{derive_seed, RunDir};
use super::train::{run_training, LoopSpec, Update};
use crate::agent::ContextInput;
use crate::config::{AdaptConfig, Algo, EstimatorTrainConfig, RunConfig};
use crate::env::{EnvConfig, VecEnv};
use crate::error::{Result, SmaError};
use crate::metagrad::{Gradients, ParameterSet, Tape};
use crate::persist::{Checkpoint, MetricRecord, MetricsWriter};
use crate::rl::{ActorCritic, Collector, ContextSource, EstimatorSpec, ExtraLoss, LrGroup, LrSchedule, Optimizer, RolloutBuffer};

/// Progress callback receiving every metrics record.
pub type Progress<'a> = dyn FnMut(&MetricRecord) + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub checkpoint: PathBuf,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl StageReport {
    fn new(stage: &str, checkpoint: PathBuf) -> Self {
        Self {
            stage: stage.to_string(),
            checkpoint,
            summary: serde_json::Map::new(),
        }
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        if let Ok(v) = serde_json::to_value(value) {
            self.summary.insert(key.to_string(), v);
        }
        self
    }
}

/// Mean return of deterministic episodes, one per env.
pub fn mean_eval_return(
    ac: &ActorCritic,
    ps: &ParameterSet,
    source: &ContextSource,
    env_cfg: &EnvConfig,
    episodes: usize,
    history: usize,
    seed: u64,
) -> Result<f64> {
    let mut env = VecEnv::new(env_cfg.clone(), episodes, seed)?;
    let mut collector = Collector::new(ac, episodes, history, seed);
    let out = collector.evaluate(ac, ps, &mut env, source)?;
    Ok(out.returns.iter().sum::<f64>() / episodes as f64)
}

fn adapt_optimizer(c: &AdaptConfig, trainable: &[&str]) -> Optimizer {
    Optimizer::new(
        LrSchedule::new(c.lr, c.lr_decay),
        vec![LrGroup {
            prefix: "plastic.".into(),
            schedule: LrSchedule::new(c.lr, c.plastic_lr_decay),
        }],
        trainable,
    )
}

fn adapt_update(c: &AdaptConfig) -> Update {
    match c.algo {
        Algo::A2c => Update::A2c(c.a2c.clone()),
        Algo::Ppo => Update::Ppo(c.ppo.clone()),
    }
}

fn adapt_loop(cfg: &RunConfig, stage: &str, source: ContextSource, history: usize, record_history: bool) -> LoopSpec {
    let c = &cfg.phase1;
    LoopSpec {
        stage: stage.to_string(),
        env: cfg.env.clone(),
        n_envs: c.n_envs,
        n_steps: c.n_steps,
        iterations: c.iterations,
        update: adapt_update(c),
        source,
        seed: derive_seed(cfg.seed, stage),
        max_delta_norm: c.max_delta_norm,
        history,
        record_history,
    }
}

/// Train and checkpoint, saving the last good parameters if training fails.
fn train_and_save(
    dir: &RunDir,
    stage: &str,
    ac: &ActorCritic,
    ps: &mut ParameterSet,
    opt: &mut Optimizer,
    spec: &LoopSpec,
    extra: Option<&ExtraLoss<'_>>,
    progress: &mut Progress<'_>,
) -> Result<Option<MetricRecord>> {
    let mut metrics = MetricsWriter::create(&dir.metrics(stage))?;
    match run_training(ac, ps, opt, spec, &mut metrics, extra, progress) {
        Ok(last) => Ok(last),
        Err(e) => {
            Checkpoint::new(stage, ac.clone(), ps.clone())
                .with_meta("error", e.to_string())
                .save(&dir.file(&format!("{stage}.last_good.ckpt")))?;
            Err(e)
        }
    }
}

/// Phase 0: PPO on nominal, noise-free dynamics with a fixed-weight SNN.
pub fn pretrain_base(cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    let stage = "pretrain";
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pretrain.init"));
    let (ac, mut ps) = base_model(&cfg.net, &cfg.env, &mut rng);
    let p = &cfg.pretrain;
    let env = cfg.env.noise_free();
    let spec = LoopSpec {
        stage: stage.into(),
        env: env.clone(),
        n_envs: p.n_envs,
        n_steps: p.n_steps,
        iterations: p.iterations,
        update: Update::Ppo(p.ppo.clone()),
        source: ContextSource::None,
        seed: derive_seed(cfg.seed, stage),
        max_delta_norm: f64::INFINITY,
        history: 0,
        record_history: false,
    };
    let mut opt = Optimizer::new(LrSchedule::new(p.lr, p.lr_decay), vec![], &["pi.", "vf."]);
    train_and_save(dir, stage, &ac, &mut ps, &mut opt, &spec, None, progress)?;
    let eval = mean_eval_return(&ac, &ps, &ContextSource::None, &env, p.eval_episodes, 0, cfg.eval.seed)?;
    let converged = eval >= p.return_threshold;
    let path = dir.checkpoint(stage);
    Checkpoint::new(stage, ac, ps)
        .with_meta("eval_return", eval)
        .with_meta("converged", converged)
        .save(&path)?;
    Ok(StageReport::new(stage, path)
        .with("eval_return", eval)
        .with("threshold", p.return_threshold)
        .with("converged", converged))
}

/// Phase 1: meta-train the modulated plastic layer and the privileged
/// encoder (jointly with the static weights) under randomized dynamics.
pub fn phase1_train(cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    let stage = "phase1";
    let base = dir.require("pretrain")?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "phase1.init"));
    let (ac, mut ps) = modulated_model(&cfg.net, &base.model, &base.params, &mut rng)?;
    let spec = adapt_loop(cfg, stage, ContextSource::Privileged, 0, false);
    let mut opt = adapt_optimizer(&cfg.phase1, &["pi.", "plastic.", "enc.", "vf."]);
    let last = train_and_save(dir, stage, &ac, &mut ps, &mut opt, &spec, None, progress)?;
    let path = dir.checkpoint(stage);
    Checkpoint::new(stage, ac, ps).save(&path)?;
    Ok(StageReport::new(stage, path).with("last", last))
}

/// STDP baseline: an unmodulated plastic layer trained under randomized
/// dynamics with the same schedule as phase 1.
pub fn plastic_baseline_train(cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    let stage = "plastic";
    let base = dir.require("pretrain")?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "plastic.init"));
    let (ac, mut ps) = stdp_model(&cfg.net, &base.model, &base.params, &mut rng)?;
    let spec = adapt_loop(cfg, stage, ContextSource::None, 0, false);
    let mut opt = adapt_optimizer(&cfg.phase1, &["pi.", "plastic.", "vf."]);
    let last = train_and_save(dir, stage, &ac, &mut ps, &mut opt, &spec, None, progress)?;
    let path = dir.checkpoint(stage);
    Checkpoint::new(stage, ac, ps).save(&path)?;
    Ok(StageReport::new(stage, path).with("last", last))
}

/// Result of a supervised estimator fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub train_mse: f64,
    pub holdout_mse: f64,
    /// Held-out MSE of the per-dimension training mean.
    pub baseline_mse: f64,
}

/// Progress of one estimator-fitting epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitEpoch {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    /// MSE on the validation envs, when there are any.
    pub validation_mse: Option<f64>,
}

/// Estimator inputs and context targets, grouped by env.
#[derive(Debug, Clone, Default)]
pub struct RegressionData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub env: Vec<usize>,
}

/// Roll out the frozen expert and record `(history, context)` pairs.
pub fn collect_regression_data(
    ac: &ActorCritic,
    ps: &ParameterSet,
    env_cfg: &EnvConfig,
    c: &EstimatorTrainConfig,
    history: usize,
    seed: u64,
) -> Result<RegressionData> {
    let mut env = VecEnv::new(env_cfg.clone(), c.n_envs, derive_seed(seed, "env"))?;
    let mut collector = Collector::new(ac, c.n_envs, history, derive_seed(seed, "policy"));
    let buffer = collector.collect(ac, ps, &mut env, &ContextSource::Privileged, c.steps, true, true)?;
    let mut data = RegressionData::default();
    for t in 0..buffer.n_steps {
        for e in 0..buffer.n_envs {
            let tr = buffer.get(t, e);
            let (Some(h), Some(target)) = (&tr.history, &tr.context_value) else {
                return Err(SmaError::InvalidArgument("expert rollout lacks context or history".into()));
            };
            data.inputs.push(h.clone());
            data.targets.push(target.clone());
            data.env.push(e);
        }
    }
    Ok(data)
}

fn mse(pred: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(targets) {
        for (a, b) in p.iter().zip(t) {
            s += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean squared error of the estimator over a data set.
pub fn estimator_mse(est: &EstimatorSpec, ps: &ParameterSet, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let ids = est.net.resolve(ps)?;
    let pred: Vec<Vec<f64>> = inputs.iter().map(|x| ids.eval(ps, x)).collect();
    Ok(mse(&pred, targets))
}

/// Gradient of the mean squared error over a batch.
fn estimator_grads(est: &EstimatorSpec, ps: &ParameterSet, inputs: &[&Vec<f64>], targets: &[&Vec<f64>]) -> Result<(f64, Gradients)> {
    let ids = est.net.resolve(ps)?;
    let mut tape = Tape::new(ps);
    let dim = est.net.output_dim();
    let scale = 1.0 / (inputs.len() * dim) as f64;
    let mut seeds = Vec::with_capacity(inputs.len());
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let xv = tape.constant((*x).clone());
        let y = ids.forward(&mut tape, xv);
        let g: Vec<f64> = tape.value(y).iter().zip(t.iter()).map(|(a, b)| 2.0 * scale * (a - b)).collect();
        loss += tape.value(y).iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
        seeds.push((y, g));
    }
    let refs: Vec<_> = seeds.iter().map(|(v, g)| (*v, g.as_slice())).collect();
    Ok((loss, tape.backward(&refs).params))
}

/// Fit the estimator by minibatch Adam on the MSE. Envs are split into
/// training and held-out sets so that no episode contributes to both.
pub fn fit_estimator(
    est: &EstimatorSpec,
    ps: &mut ParameterSet,
    data: &RegressionData,
    c: &EstimatorTrainConfig,
    n_envs: usize,
    seed: u64,
    on_epoch: &mut dyn FnMut(&FitEpoch) -> Result<()>,
) -> Result<FitReport> {
    let n_hold = ((n_envs as f64) * c.holdout_fraction).round() as usize;
    let first_hold = n_envs - n_hold.min(n_envs.saturating_sub(1));
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for i in 0..data.inputs.len() {
        if data.env[i] >= first_hold {
            hold.push(i);
        } else {
            train.push(i);
        }
    }
    let dim = est.net.output_dim();
    let mut mean = vec![0.0; dim];
    for &i in &train {
        for (m, t) in mean.iter_mut().zip(&data.targets[i]) {
            *m += t / train.len() as f64;
        }
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            idx.iter().map(|&i| data.inputs[i].clone()).collect(),
            idx.iter().map(|&i| data.targets[i].clone()).collect(),
        )
    };
    let (hx, ht) = pick(&hold);
    let baseline_mse = mse(&vec![mean.clone(); ht.len()], &ht);

    // Early stopping on a validation slice of the training envs.
    let n_train_envs = first_hold;
    let n_val = ((n_train_envs as f64) * c.validation_fraction).round() as usize;
    let first_val = n_train_envs - n_val.min(n_train_envs.saturating_sub(1));
    let (fit, val): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| data.env[i] < first_val);
    let (vx, vt) = pick(&val);

    let prefix = format!("{}.", est.net.prefix);
    let mut opt = Optimizer::new(LrSchedule::new(c.lr, 1.0), vec![], &[prefix.as_str()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = fit.clone();
    let mut best: Option<(f64, ParameterSet)> = None;
    for epoch in 0..c.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(c.batch_size.max(1)) {
            let xs: Vec<&Vec<f64>> = chunk.iter().map(|&i| &data.inputs[i]).collect();
            let ts: Vec<&Vec<f64>> = chunk.iter().map(|&i| &data.targets[i]).collect();
            let (loss, g) = estimator_grads(est, ps, &xs, &ts)?;
            if !loss.is_finite() {
                return Err(SmaError::Diverged(format!("estimator loss {loss}")));
            }
            opt.step(ps, &g)?;
            loss_sum += loss;
            batches += 1;
        }
        opt.advance();
        let mut validation_mse = None;
        if !val.is_empty() {
            let v = estimator_mse(est, ps, &vx, &vt)?;
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, ps.clone()));
            }
            validation_mse = Some(v);
        }
        on_epoch(&FitEpoch {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            validation_mse,
        })?;
    }
    if let Some((_, p)) = best {
        *ps = p;
    }
    let (tx, tt) = pick(&train);
    Ok(FitReport {
        train_samples: train.len(),
        holdout_samples: hold.len(),
        train_mse: estimator_mse(est, ps, &tx, &tt)?,
        holdout_mse: if hold.is_empty() { f64::NAN } else { estimator_mse(est, ps, &hx, &ht)? },
        baseline_mse,
    })
}

/// Phase 2: regress the estimator onto the phase-1 encoder's modulators
/// from local history. Policy and encoder stay frozen.
pub fn phase2_train_estimator(cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    let stage = "phase2";
    let p1 = dir.require("phase1")?;
    let _ = progress;
    let (ac, mut ps) = (p1.model, p1.params);
    let frozen = frozen_checksum(&ps);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "phase2.init"));
    let est = add_estimator(&cfg.net, &cfg.env, &ac, &mut ps, &mut rng);
    let data = collect_regression_data(&ac, &ps, &cfg.env, &cfg.phase2, cfg.net.history, derive_seed(cfg.seed, stage))?;
    let mut metrics = MetricsWriter::create(&dir.metrics(stage))?;
    let fit = fit_estimator(
        &est,
        &mut ps,
        &data,
        &cfg.phase2,
        cfg.phase2.n_envs,
        derive_seed(cfg.seed, "phase2.fit"),
        &mut |e| metrics.write(e),
    )?;
    if frozen_checksum(&ps) != frozen {
        return Err(SmaError::InvalidArgument("estimator training modified frozen parameters".into()));
    }
    metrics.write(&fit)?;
    let path = dir.checkpoint(stage);
    let mut ck = Checkpoint::new(stage, ac, ps).with_meta("fit", fit);
    ck.estimator = Some(est);
    ck.save(&path)?;
    Ok(StageReport::new(stage, path).with("fit", fit))
}

/// Checksum of everything except the estimator.
pub fn frozen_checksum(ps: &ParameterSet) -> u64 {
    ["pi.", "plastic.", "enc.", "vf."]
        .iter()
        .fold(0u64, |h, p| h.rotate_left(7) ^ ps.checksum_prefix(p))
}

/// Latent-context baseline: phase 1 trains a `z`-conditioned policy with a
/// privileged encoder, phase 2 regresses an estimator onto `z`.
pub fn rma_baseline_train(cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    let stage = "rma";
    let base = dir.require("pretrain")?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "rma.init"));
    let (ac, mut ps) = latent_model(&cfg.net, &base.model, &base.params, &mut rng)?;
    let spec = adapt_loop(cfg, stage, ContextSource::Privileged, 0, false);
    let mut opt = adapt_optimizer(&cfg.phase1, &["pi.", "enc.", "vf."]);
    let last = train_and_save(dir, stage, &ac, &mut ps, &mut opt, &spec, None, progress)?;
    let est = add_estimator(&cfg.net, &cfg.env, &ac, &mut ps, &mut rng);
    let data = collect_regression_data(&ac, &ps, &cfg.env, &cfg.phase2, cfg.net.history, derive_seed(cfg.seed, "rma.data"))?;
    let fit = fit_estimator(&est, &mut ps, &data, &cfg.phase2, cfg.phase2.n_envs, derive_seed(cfg.seed, "rma.fit"), &mut |_| Ok(()))?;
    let path = dir.checkpoint(stage);
    let mut ck = Checkpoint::new(stage, ac, ps).with_meta("fit", fit);
    ck.estimator = Some(est);
    ck.save(&path)?;
    Ok(StageReport::new(stage, path).with("last", last).with("fit", fit))
}

/// Stop-gradient regularizers of joint encoder/estimator training:
/// `λ‖z_μ − sg[z_φ]‖² + ‖sg[z_μ] − z_φ‖²` for one sample. Returns the
/// loss and parameter gradients scaled by `scale`.
pub fn roa_regularizer(
    ac: &ActorCritic,
    est: &EstimatorSpec,
    ps: &ParameterSet,
    extrinsics: &[f64],
    history: &[f64],
    lambda: f64,
    scale: f64,
) -> Result<(RoaTerms, Gradients)> {
    let enc = ac
        .agent
        .encoder
        .as_ref()
        .ok_or_else(|| SmaError::Config("joint training needs an encoder".into()))?
        .resolve(ps)?;
    let phi = est.net.resolve(ps)?;
    let mut tape = Tape::new(ps);
    let e = tape.constant(extrinsics.to_vec());
    let h = tape.constant(history.to_vec());
    let z_mu = enc.forward(&mut tape, e);
    let z_phi = phi.forward(&mut tape, h);
    let phi_sg = tape.detach(z_phi);
    let mu_sg = tape.detach(z_mu);
    let d_enc = tape.sub(z_mu, phi_sg);
    let d_est = tape.sub(mu_sg, z_phi);
    let enc_term = tape.dot(d_enc, d_enc);
    let est_term = tape.dot(d_est, d_est);
    let terms = RoaTerms {
        encoder: tape.scalar(enc_term),
        estimator: tape.scalar(est_term),
    };
    let g = tape
        .backward(&[(enc_term, &[scale * lambda][..]), (est_term, &[scale][..])])
        .params;
    Ok((terms, g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoaTerms {
    pub encoder: f64,
    pub estimator: f64,
}

/// Joint single-stage training of policy, encoder and estimator with the
/// stop-gradient regularized loss. The policy acts on the encoder's latent.
pub fn roa_joint_train(cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    let stage = "roa";
    let base = dir.require("pretrain")?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "roa.init"));
    let (ac, mut ps) = latent_model(&cfg.net, &base.model, &base.params, &mut rng)?;
    let est = add_estimator(&cfg.net, &cfg.env, &ac, &mut ps, &mut rng);
    let lambda = cfg.roa.lambda;
    let spec = adapt_loop(cfg, stage, ContextSource::Privileged, cfg.net.history, true);
    let mut opt = adapt_optimizer(&cfg.phase1, &["pi.", "enc.", "est.", "vf."]);
    let ac_ref = &ac;
    let est_ref = &est;
    let extra = move |ps: &ParameterSet, buffer: &RolloutBuffer, envs: &[usize]| -> Result<(f64, Gradients)> {
        let n = (envs.len() * buffer.n_steps) as f64;
        let mut total = ps.zero_grads();
        let mut loss = 0.0;
        for &e in envs {
            for tr in buffer.trajectory(e) {
                let (ContextInput::Privileged(x), Some(h)) = (&tr.context, &tr.history) else {
                    return Err(SmaError::InvalidArgument("joint training needs privileged context and history".into()));
                };
                let (terms, g) = roa_regularizer(ac_ref, est_ref, ps, x, h, lambda, 1.0 / n)?;
                loss += (lambda * terms.encoder + terms.estimator) / n;
                total.add_assign(&g);
            }
        }
        Ok((loss, total))
    };
    let last = train_and_save(dir, stage, &ac, &mut ps, &mut opt, &spec, Some(&extra), progress)?;
    let path = dir.checkpoint(stage);
    let mut ck = Checkpoint::new(stage, ac, ps);
    ck.estimator = Some(est);
    ck.save(&path)?;
    Ok(StageReport::new(stage, path).with("last", last))
}

/// Run a training stage by name.
pub fn run_stage(stage: &str, cfg: &RunConfig, dir: &RunDir, progress: &mut Progress<'_>) -> Result<StageReport> {
    match stage {
        "pretrain" => pretrain_base(cfg, dir, progress),
        "phase1" => phase1_train(cfg, dir, progress),
        "phase2" => phase2_train_estimator(cfg, dir, progress),
        "plastic" => plastic_baseline_train(cfg, dir, progress),
        "rma" => rma_baseline_train(cfg, dir, progress),
        "roa" => roa_joint_train(cfg, dir, progress),
        other => Err(SmaError::InvalidArgument(format!("unknown stage {other:?}"))),
    }
}
