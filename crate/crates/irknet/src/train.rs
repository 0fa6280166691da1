//! Penalty-method training loop for stage-prediction networks.
//!
//! The outer loop solves a sequence of unconstrained problems with penalty
//! weights w_f, w_g growing by a constant factor beta each iteration, warm
//! starting from the previous solution. Each inner solve runs full-batch
//! Adam on the physics loss until the total drops below the convergence
//! tolerance or an epoch cap is reached, with plateau-triggered learning
//! rate decay.

use crate::autodiff::Tape;
use crate::dae::SemiExplicitDae;
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown};
use crate::network::PinnAssembly;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct PlateauConfig {
    /// Epochs of history consulted before a decay can fire.
    pub window: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            window: 2000,
            factor: 0.5,
            min_lr: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Epoch cap per outer iteration.
    pub epochs_per_outer: usize,
    /// Number of penalty increases after the initial solve.
    pub outer_iterations: usize,
    pub w_f0: f64,
    pub w_g0: f64,
    pub beta: f64,
    pub convergence_tol: f64,
    pub lr0: f64,
    pub plateau: PlateauConfig,
    /// Sampling seed for the training set; the test set uses seed + 1.
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub eval_every: usize,
    /// Per-coordinate closed sampling bounds for initial conditions.
    pub ic_ranges: Vec<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        TrainConfig {
            epochs_per_outer: 50_000,
            outer_iterations: 5,
            w_f0: 1.0,
            w_g0: 1.0,
            beta: 2.0,
            convergence_tol: 1e-5,
            lr0: 1e-3,
            plateau: PlateauConfig::default(),
            seed: 0,
            train_size: 2000,
            test_size: 1500,
            eval_every: 1000,
            ic_ranges: vec![(-PI, PI), (-PI, PI), (-0.1, 0.1), (-0.1, 0.1)],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_outer == 0 {
            return Err(Error::InvalidArgument(
                "epoch cap must be at least 1".into(),
            ));
        }
        if !(self.beta.is_finite() && self.beta > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty factor must exceed 1, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("w_f0", self.w_f0),
            ("w_g0", self.w_g0),
            ("convergence_tol", self.convergence_tol),
            ("lr0", self.lr0),
            ("plateau factor", self.plateau.factor),
            ("plateau min_lr", self.plateau.min_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.plateau.factor >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "plateau factor must be below 1, got {}",
                self.plateau.factor
            )));
        }
        if self.plateau.window < 2 {
            return Err(Error::InvalidArgument(
                "plateau window must be at least 2 epochs".into(),
            ));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidArgument(
                "train and test sets must be nonempty".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "eval_every must be at least 1".into(),
            ));
        }
        if self.ic_ranges.is_empty() {
            return Err(Error::InvalidArgument(
                "initial-condition ranges are empty".into(),
            ));
        }
        for &(lo, hi) in &self.ic_ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "initial-condition range [{lo}, {hi}] is invalid"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform i.i.d. initial conditions, one point per row, deterministic in
/// the seed. Zero-width ranges produce the constant bound.
pub fn sample_initial_conditions(
    count: usize,
    ic_ranges: &[(f64, f64)],
    seed: u64,
) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    for &(lo, hi) in ic_ranges {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "sampling range [{lo}, {hi}] is invalid"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensor::zeros(count, ic_ranges.len());
    for r in 0..count {
        for (c, &(lo, hi)) in ic_ranges.iter().enumerate() {
            let v = if lo == hi { lo } else { rng.random_range(lo..hi) };
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Adam accumulators, one pair of moment tensors per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Step counter; increments by exactly one per `step`.
    pub t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &[&Tensor]) -> AdamState {
        AdamState {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update over every parameter in place.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam_step: got {} parameters and {} gradients for state of {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: params[i].shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::TrainingDivergence {
                    outer: 0,
                    epoch: self.t as usize,
                    detail: format!("non-finite gradient in parameter {i}"),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..grads.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for k in 0..g.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Learning-rate plateau rule: when the mean loss over the later half of
/// the window fails to beat the earlier half by 1%, decay toward min_lr.
/// `recent` must hold only the epochs since the last decay.
pub fn reduce_lr_on_plateau(recent: &[f64], cfg: &PlateauConfig, lr: f64) -> f64 {
    if recent.len() < cfg.window {
        return lr;
    }
    let window = &recent[recent.len() - cfg.window..];
    let half = cfg.window / 2;
    let early: f64 = window[..half].iter().sum::<f64>() / half as f64;
    let late: f64 = window[half..].iter().sum::<f64>() / (cfg.window - half) as f64;
    if late > 0.99 * early {
        (lr * cfg.factor).max(cfg.min_lr)
    } else {
        lr
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub outer_iter: usize,
    pub w_f: f64,
    pub w_g: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub total: f64,
    pub learning_rate: f64,
}

pub fn log_header() -> &'static str {
    "epoch,outer_iter,w_f,w_g,l_f,l_g,total,learning_rate"
}

impl EpochRecord {
    pub fn to_log_line(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.epoch,
            self.outer_iter,
            self.w_f,
            self.w_g,
            self.l_f,
            self.l_g,
            self.total,
            self.learning_rate
        )
    }
}

/// Held-out loss evaluated every `eval_every` epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TestRecord {
    pub epoch: usize,
    pub outer_iter: usize,
    pub l_f: f64,
    pub l_g: f64,
    pub total: f64,
}

/// Outcome of one inner (fixed-weight) solve.
#[derive(Clone, Debug)]
pub struct InnerResult {
    pub converged: bool,
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub test_history: Vec<TestRecord>,
    pub final_loss: LossBreakdown,
}

/// Loss with gradients in the assembly's canonical parameter order.
fn loss_and_grads(
    assembly: &PinnAssembly,
    dae: &dyn SemiExplicitDae,
    dataset: &Tensor,
    w_f: f64,
    w_g: f64,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let input = tape.constant(dataset.clone());
    let nodes = assembly.stage_nodes(&mut tape, input, true)?;
    let l = loss::physics_loss_nodes(
        &mut tape,
        dae,
        input,
        &nodes.ys,
        &nodes.zs,
        &assembly.tableau,
        assembly.step,
        w_f,
        w_g,
    )?;
    let breakdown = loss::total_loss(
        tape.value(l.l_f).get(0, 0),
        tape.value(l.l_g).get(0, 0),
        w_f,
        w_g,
    )?;
    let grads = tape.backward(l.total)?;
    let out = nodes
        .params
        .iter()
        .map(|&id| {
            grads.wrt(id).cloned().unwrap_or_else(|| {
                let p = tape.value(id);
                Tensor::zeros(p.rows(), p.cols())
            })
        })
        .collect();
    Ok((breakdown, out))
}

fn held_out_loss(
    assembly: &PinnAssembly,
    dae: &dyn SemiExplicitDae,
    dataset: &Tensor,
    w_f: f64,
    w_g: f64,
) -> Result<LossBreakdown> {
    let pred = assembly.predict_stages(dataset)?;
    loss::physics_loss(
        dae,
        dataset,
        &pred,
        &assembly.tableau,
        assembly.step,
        w_f,
        w_g,
    )
}

fn snapshot(assembly: &PinnAssembly) -> Vec<Tensor> {
    assembly.params().into_iter().cloned().collect()
}

fn restore(assembly: &mut PinnAssembly, saved: &[Tensor]) {
    for (dst, src) in assembly.params_mut().into_iter().zip(saved) {
        *dst = src.clone();
    }
}

/// Full-batch Adam on the physics loss at fixed penalty weights, from the
/// assembly's current parameters. Stops when the total loss reaches the
/// tolerance; at the epoch cap the best parameters seen are restored and
/// the result is flagged unconverged.
pub fn train_inner(
    assembly: &mut PinnAssembly,
    dae: &dyn SemiExplicitDae,
    dataset: &Tensor,
    test_set: &Tensor,
    w_f: f64,
    w_g: f64,
    outer_iter: usize,
    cfg: &TrainConfig,
) -> Result<InnerResult> {
    cfg.validate()?;
    if dataset.rows() == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut adam = AdamState::new(&assembly.params());
    let mut lr = cfg.lr0;
    let mut history = Vec::new();
    let mut test_history = Vec::new();
    let mut since_decay: Vec<f64> = Vec::new();

    let mut best_total = f64::INFINITY;
    let mut best_params: Vec<Tensor> = Vec::new();
    let mut epochs = 0usize;
    let converged;
    let final_loss;

    loop {
        let (breakdown, grads) = loss_and_grads(assembly, dae, dataset, w_f, w_g)?;
        if !breakdown.total.is_finite() {
            return Err(Error::TrainingDivergence {
                outer: outer_iter,
                epoch: epochs,
                detail: format!("loss became non-finite ({})", breakdown.total),
            });
        }
        if breakdown.total < best_total {
            best_total = breakdown.total;
            best_params = snapshot(assembly);
        }
        if breakdown.total <= cfg.convergence_tol {
            converged = true;
            final_loss = breakdown;
            break;
        }
        if epochs == cfg.epochs_per_outer {
            converged = false;
            final_loss = breakdown;
            break;
        }

        history.push(EpochRecord {
            epoch: epochs,
            outer_iter,
            w_f,
            w_g,
            l_f: breakdown.l_f,
            l_g: breakdown.l_g,
            total: breakdown.total,
            learning_rate: lr,
        });
        adam.step(&mut assembly.params_mut(), &grads, lr)
            .map_err(|e| match e {
                Error::TrainingDivergence { detail, .. } => Error::TrainingDivergence {
                    outer: outer_iter,
                    epoch: epochs,
                    detail,
                },
                other => other,
            })?;
        epochs += 1;

        if epochs % cfg.eval_every == 0 {
            let t = held_out_loss(assembly, dae, test_set, w_f, w_g)?;
            test_history.push(TestRecord {
                epoch: epochs,
                outer_iter,
                l_f: t.l_f,
                l_g: t.l_g,
                total: t.total,
            });
        }

        since_decay.push(breakdown.total);
        let new_lr = reduce_lr_on_plateau(&since_decay, &cfg.plateau, lr);
        if new_lr != lr {
            lr = new_lr;
            since_decay.clear();
        }
    }

    let final_loss = if converged {
        final_loss
    } else {
        restore(assembly, &best_params);
        let pred = held_out_loss(assembly, dae, dataset, w_f, w_g)?;
        pred
    };
    Ok(InnerResult {
        converged,
        epochs,
        history,
        test_history,
        final_loss,
    })
}

/// Outcome of the full penalty schedule.
#[derive(Clone, Debug)]
pub struct PenaltyTrainState {
    /// Outer iterations performed after the initial solve.
    pub outer_completed: usize,
    /// Final penalty weights, exactly beta^K times the initial weights.
    pub w_f: f64,
    pub w_g: f64,
    pub history: Vec<EpochRecord>,
    pub test_history: Vec<TestRecord>,
    /// Convergence flag per inner solve (element 0 is the initial solve).
    pub outer_converged: Vec<bool>,
    pub final_loss: LossBreakdown,
    pub train_set: Tensor,
    pub test_set: Tensor,
}

/// Penalty-method training: an initial solve at the base weights followed
/// by `outer_iterations` warm-started solves with both weights scaled by
/// beta each round. Training and test sets are sampled from distinct seeds
/// and checked disjoint.
pub fn penalty_train(
    assembly: &mut PinnAssembly,
    dae: &dyn SemiExplicitDae,
    cfg: &TrainConfig,
) -> Result<PenaltyTrainState> {
    cfg.validate()?;
    if cfg.ic_ranges.len() != assembly.n() {
        return Err(Error::InvalidArgument(format!(
            "got {} sampling ranges for {} dynamic states",
            cfg.ic_ranges.len(),
            assembly.n()
        )));
    }
    let train_set = sample_initial_conditions(cfg.train_size, &cfg.ic_ranges, cfg.seed)?;
    let test_set = sample_initial_conditions(cfg.test_size, &cfg.ic_ranges, cfg.seed + 1)?;
    for r in 0..test_set.rows() {
        for q in 0..train_set.rows() {
            if test_set.row(r) == train_set.row(q) {
                return Err(Error::InvalidArgument(format!(
                    "train row {q} and test row {r} coincide; use different seeds"
                )));
            }
        }
    }

    let mut history = Vec::new();
    let mut test_history = Vec::new();
    let mut outer_converged = Vec::with_capacity(cfg.outer_iterations + 1);
    let mut w_f = cfg.w_f0;
    let mut w_g = cfg.w_g0;
    let mut final_loss = None;

    for k in 0..=cfg.outer_iterations {
        w_f = cfg.w_f0 * cfg.beta.powi(k as i32);
        w_g = cfg.w_g0 * cfg.beta.powi(k as i32);
        let inner = train_inner(assembly, dae, &train_set, &test_set, w_f, w_g, k, cfg)?;
        history.extend(inner.history);
        test_history.extend(inner.test_history);
        outer_converged.push(inner.converged);
        final_loss = Some(inner.final_loss);
    }

    Ok(PenaltyTrainState {
        outer_completed: cfg.outer_iterations,
        w_f,
        w_g,
        history,
        test_history,
        outer_converged,
        final_loss: final_loss.expect("at least the initial solve ran"),
        train_set,
        test_set,
    })
}
