//! Long-horizon simulation by recurrent stage prediction, and the
//! L2-relative-error metrics used to score simulations against a reference
//! trajectory.
//!
//! One forward pass maps the step-start state to every collocation stage
//! plus the step endpoint; the endpoint is fed back as the next step's
//! input. The algebraic states are taken from the predictor as-is: drift
//! off the constraint manifold is measured per step, never corrected.

use crate::dae::{self, eval_f_batch, eval_g_batch, SemiExplicitDae};
use crate::error::{Error, Result};
use crate::network::{PinnAssembly, StagePrediction};
use crate::solver::{self, SolverConfig, Trajectory, TrajectoryMeta};
use crate::tableau::ButcherTableau;
use crate::tensor::Tensor;

/// Anything that maps a batch of step-start states to full stage
/// predictions (nu collocation stages plus the step endpoint) for one
/// implicit Runge-Kutta step of fixed size.
pub trait StagePredictor {
    fn predict_stages(&self, y_n: &Tensor) -> Result<StagePrediction>;
    fn tableau(&self) -> &ButcherTableau;
    fn step(&self) -> f64;
    fn n(&self) -> usize;
    fn m(&self) -> usize;
}

impl StagePredictor for PinnAssembly {
    fn predict_stages(&self, y_n: &Tensor) -> Result<StagePrediction> {
        PinnAssembly::predict_stages(self, y_n)
    }

    fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    fn step(&self) -> f64 {
        self.step
    }

    fn n(&self) -> usize {
        PinnAssembly::n(self)
    }

    fn m(&self) -> usize {
        PinnAssembly::m(self)
    }
}

/// Stage predictor that answers with the converged stage values of the
/// classical implicit solver. Used to validate the rollout plumbing
/// independently of any trained network.
pub struct OracleStagePredictor<'a> {
    pub dae: &'a dyn SemiExplicitDae,
    pub cfg: SolverConfig,
    /// Branch selector for the consistency solve at each step start.
    pub z_guess: Vec<f64>,
}

impl StagePredictor for OracleStagePredictor<'_> {
    fn predict_stages(&self, y_n: &Tensor) -> Result<StagePrediction> {
        let nu = self.cfg.tableau.nu;
        let slots = nu + 1;
        let (n, m) = (self.dae.n(), self.dae.m());
        if y_n.cols() != n {
            return Err(Error::InvalidArgument(format!(
                "predictor input has {} columns for a {n}-state model",
                y_n.cols()
            )));
        }
        let mut ys = vec![Tensor::zeros(y_n.rows(), n); slots];
        let mut zs = vec![Tensor::zeros(y_n.rows(), m); slots];
        for r in 0..y_n.rows() {
            let y = y_n.row(r);
            let z = dae::consistent_z(self.dae, y, &self.z_guess)?;
            let res = solver::irk_step(self.dae, y, &z, &self.cfg)?;
            for j in 0..nu {
                for c in 0..n {
                    ys[j].set(r, c, res.stages_y.get(j, c));
                }
                for c in 0..m {
                    zs[j].set(r, c, res.stages_z.get(j, c));
                }
            }
            for c in 0..n {
                ys[nu].set(r, c, res.y_next[c]);
            }
            for c in 0..m {
                zs[nu].set(r, c, res.z_next[c]);
            }
        }
        Ok(StagePrediction { ys, zs })
    }

    fn tableau(&self) -> &ButcherTableau {
        &self.cfg.tableau
    }

    fn step(&self) -> f64 {
        self.cfg.h_ref
    }

    fn n(&self) -> usize {
        self.dae.n()
    }

    fn m(&self) -> usize {
        self.dae.m()
    }
}

/// A simulated trajectory on the stage-time grid: for each step k starting
/// at t_k, the grid holds t_k + c_j h for every stage, then t_k + h.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    pub n_steps: usize,
    /// Largest constraint violation among the nu+1 slots of each step.
    pub drift: Vec<f64>,
    /// Per-state L2 relative errors against a reference, once scored.
    pub errors: Option<Vec<f64>>,
}

impl RolloutResult {
    /// Largest constraint violation over the whole simulation.
    pub fn max_drift(&self) -> f64 {
        self.drift.iter().cloned().fold(0.0, f64::max)
    }

    /// Score against a reference trajectory and store the result.
    pub fn score_against(&mut self, truth: &Trajectory) -> Result<&[f64]> {
        let e = l2_relative_error(&self.trajectory, truth)?;
        self.errors = Some(e);
        Ok(self.errors.as_deref().expect("just stored"))
    }
}

/// Simulate `n_steps` implicit Runge-Kutta steps by recurrent prediction:
/// each forward pass produces the stage grid of one step and the endpoint
/// state that seeds the next pass. Steps are numbered from 1 in errors.
pub fn simulate(
    predictor: &dyn StagePredictor,
    dae: &dyn SemiExplicitDae,
    y0: &[f64],
    n_steps: usize,
) -> Result<RolloutResult> {
    let (n, m) = (dae.n(), dae.m());
    if predictor.n() != n || predictor.m() != m {
        return Err(Error::InvalidArgument(format!(
            "predictor is sized for ({}, {}) states, model has ({n}, {m})",
            predictor.n(),
            predictor.m()
        )));
    }
    if y0.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} entries for a {n}-state model",
            y0.len()
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial state must be finite".into(),
        ));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument(
            "simulation needs at least one step".into(),
        ));
    }

    let tableau = predictor.tableau().clone();
    let h = predictor.step();
    let slots = tableau.nu + 1;
    let rows = n_steps * slots;
    let mut times = Vec::with_capacity(rows);
    let mut y = Tensor::zeros(rows, n);
    let mut z = Tensor::zeros(rows, m);

    let mut state = y0.to_vec();
    for k in 0..n_steps {
        let input = Tensor::row_vector(&state);
        let pred = predictor.predict_stages(&input)?;
        if pred.ys.len() != slots || pred.zs.len() != slots {
            return Err(Error::InvalidArgument(format!(
                "predictor returned {} slots, expected {slots}",
                pred.ys.len()
            )));
        }
        let finite = pred.ys.iter().all(|t| t.all_finite())
            && pred.zs.iter().all(|t| t.all_finite());
        if !finite {
            return Err(Error::RolloutDivergence {
                step: k + 1,
                detail: "prediction contains non-finite values".into(),
            });
        }
        let t_n = k as f64 * h;
        for j in 0..slots {
            let t = if j < tableau.nu {
                t_n + tableau.c[j] * h
            } else {
                t_n + h
            };
            times.push(t);
            let row = k * slots + j;
            for c in 0..n {
                y.set(row, c, pred.ys[j].get(0, c));
            }
            for c in 0..m {
                z.set(row, c, pred.zs[j].get(0, c));
            }
        }
        state = pred.ys[slots - 1].row(0).to_vec();
    }

    let g_all = eval_g_batch(dae, &y, &z)?;
    let mut drift = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let mut worst = 0.0f64;
        for row in k * slots..(k + 1) * slots {
            for c in 0..m {
                worst = worst.max(g_all.get(row, c).abs());
            }
        }
        drift.push(worst);
    }
    let yd = eval_f_batch(dae, &y, &z)?;

    Ok(RolloutResult {
        trajectory: Trajectory {
            times,
            y,
            z,
            yd,
            names: dae.state_names(),
            // No Newton solve behind these values: tolerance 0 and an
            // empty branch guess mark a predictor-generated trajectory.
            meta: TrajectoryMeta {
                model: dae.name(),
                scheme: tableau.scheme,
                nu: tableau.nu,
                h_ref: h,
                newton_tol: 0.0,
                z_guess: Vec::new(),
            },
        },
        n_steps,
        drift,
        errors: None,
    })
}

/// Per-state relative L2 error of `pred` against `truth`, sampled on the
/// prediction's own time grid with `truth` evaluated by dense
/// interpolation. States are ordered dynamic first, then algebraic.
pub fn l2_relative_error(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    if pred.n() != truth.n() || pred.m() != truth.m() {
        return Err(Error::InvalidArgument(format!(
            "trajectories disagree on state counts: ({}, {}) vs ({}, {})",
            pred.n(),
            pred.m(),
            truth.n(),
            truth.m()
        )));
    }
    let (n, m) = (pred.n(), pred.m());
    let states = n + m;
    let mut diff_sq = vec![0.0f64; states];
    let mut ref_sq = vec![0.0f64; states];
    for (row, &t) in pred.times.iter().enumerate() {
        let p = truth.dense_eval(t)?;
        for c in 0..n {
            let d = pred.y.get(row, c) - p.y[c];
            diff_sq[c] += d * d;
            ref_sq[c] += p.y[c] * p.y[c];
        }
        for c in 0..m {
            let d = pred.z.get(row, c) - p.z[c];
            diff_sq[n + c] += d * d;
            ref_sq[n + c] += p.z[c] * p.z[c];
        }
    }
    let mut out = Vec::with_capacity(states);
    for s in 0..states {
        if ref_sq[s] == 0.0 {
            let name = pred
                .names
                .get(s)
                .cloned()
                .unwrap_or_else(|| format!("state {s}"));
            return Err(Error::DegenerateDenominator(name));
        }
        out.push((diff_sq[s] / ref_sq[s]).sqrt());
    }
    Ok(out)
}

/// Ensemble error statistics over a set of initial conditions. Failed
/// rollouts are excluded from the statistics and reported with the reason.
#[derive(Clone, Debug)]
pub struct EnsembleReport {
    pub state_names: Vec<String>,
    /// Per-state mean L2 relative error over the successful rollouts.
    pub mean: Vec<f64>,
    /// Per-state population standard deviation over the same set.
    pub std: Vec<f64>,
    pub evaluated: usize,
    /// (initial-condition index, reason) for each failed rollout.
    pub failures: Vec<(usize, String)>,
    /// Per-IC error vectors in input order; None marks a failure.
    pub per_ic: Vec<Option<Vec<f64>>>,
}

/// Roll out every initial condition (one per row), solve the same problem
/// with the classical reference solver, and aggregate per-state L2
/// relative errors. Individual failures become data, not errors.
pub fn evaluate_ensemble(
    predictor: &dyn StagePredictor,
    dae: &dyn SemiExplicitDae,
    ic_set: &Tensor,
    n_steps: usize,
    oracle_cfg: &SolverConfig,
    z_guess: &[f64],
) -> Result<EnsembleReport> {
    if ic_set.rows() == 0 {
        return Err(Error::InvalidArgument(
            "ensemble needs at least one initial condition".into(),
        ));
    }
    if ic_set.cols() != dae.n() {
        return Err(Error::InvalidArgument(format!(
            "initial conditions have {} columns for a {}-state model",
            ic_set.cols(),
            dae.n()
        )));
    }
    let states = dae.n() + dae.m();
    let horizon = n_steps as f64 * predictor.step();
    let mut per_ic: Vec<Option<Vec<f64>>> = Vec::with_capacity(ic_set.rows());
    let mut failures = Vec::new();
    for r in 0..ic_set.rows() {
        let y0 = ic_set.row(r);
        let outcome = simulate(predictor, dae, y0, n_steps).and_then(|roll| {
            let truth = solver::solve(dae, y0, z_guess, horizon, oracle_cfg)?;
            l2_relative_error(&roll.trajectory, &truth)
        });
        match outcome {
            Ok(errs) => per_ic.push(Some(errs)),
            Err(e) => {
                failures.push((r, e.to_string()));
                per_ic.push(None);
            }
        }
    }

    let ok: Vec<&Vec<f64>> = per_ic.iter().flatten().collect();
    let evaluated = ok.len();
    let (mean, std) = if evaluated == 0 {
        (vec![f64::NAN; states], vec![f64::NAN; states])
    } else {
        let mut mean = vec![0.0f64; states];
        for e in &ok {
            for s in 0..states {
                mean[s] += e[s] / evaluated as f64;
            }
        }
        let mut var = vec![0.0f64; states];
        for e in &ok {
            for s in 0..states {
                let d = e[s] - mean[s];
                var[s] += d * d / evaluated as f64;
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    };

    Ok(EnsembleReport {
        state_names: dae.state_names(),
        mean,
        std,
        evaluated,
        failures,
        per_ic,
    })
}

/// Error-vs-step-count curve of one predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeCurve {
    pub label: String,
    /// `errors[k][s]`: per-state L2 relative error of the rollout truncated
    /// to its first k+1 steps.
    pub errors: Vec<Vec<f64>>,
}

/// Compare predictors trained for the same step size on one initial
/// condition: each is rolled out once for `n_steps`, and the L2 relative
/// error of every truncation 1..=n_steps is recorded against a single
/// reference solution.
pub fn compare_schemes(
    predictors: &[(&str, &dyn StagePredictor)],
    dae: &dyn SemiExplicitDae,
    y0: &[f64],
    n_steps: usize,
    oracle_cfg: &SolverConfig,
    z_guess: &[f64],
) -> Result<Vec<SchemeCurve>> {
    if predictors.is_empty() {
        return Err(Error::InvalidArgument(
            "scheme comparison needs at least one predictor".into(),
        ));
    }
    let h = predictors[0].1.step();
    for (label, p) in predictors {
        if p.step() != h {
            return Err(Error::InvalidArgument(format!(
                "predictor '{label}' uses step {} while the first uses {h}; \
                 curves are only comparable at a common step size",
                p.step()
            )));
        }
        if p.n() != dae.n() || p.m() != dae.m() {
            return Err(Error::InvalidArgument(format!(
                "predictor '{label}' is sized for ({}, {}) states, model has ({}, {})",
                p.n(),
                p.m(),
                dae.n(),
                dae.m()
            )));
        }
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument(
            "scheme comparison needs at least one step".into(),
        ));
    }

    let truth = solver::solve(dae, y0, z_guess, n_steps as f64 * h, oracle_cfg)?;
    let (n, m) = (dae.n(), dae.m());
    let states = n + m;
    let mut out = Vec::with_capacity(predictors.len());
    for (label, p) in predictors {
        let roll = simulate(*p, dae, y0, n_steps)?;
        let traj = &roll.trajectory;
        let slots = p.tableau().nu + 1;
        let mut diff_sq = vec![0.0f64; states];
        let mut ref_sq = vec![0.0f64; states];
        let mut curve = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            for row in k * slots..(k + 1) * slots {
                let pt = truth.dense_eval(traj.times[row])?;
                for c in 0..n {
                    let d = traj.y.get(row, c) - pt.y[c];
                    diff_sq[c] += d * d;
                    ref_sq[c] += pt.y[c] * pt.y[c];
                }
                for c in 0..m {
                    let d = traj.z.get(row, c) - pt.z[c];
                    diff_sq[n + c] += d * d;
                    ref_sq[n + c] += pt.z[c] * pt.z[c];
                }
            }
            let mut point = Vec::with_capacity(states);
            for s in 0..states {
                if ref_sq[s] == 0.0 {
                    let name = traj
                        .names
                        .get(s)
                        .cloned()
                        .unwrap_or_else(|| format!("state {s}"));
                    return Err(Error::DegenerateDenominator(name));
                }
                point.push((diff_sq[s] / ref_sq[s]).sqrt());
            }
            curve.push(point);
        }
        out.push(SchemeCurve {
            label: label.to_string(),
            errors: curve,
        });
    }
    Ok(out)
}
