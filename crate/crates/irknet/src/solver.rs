//! Classical implicit Runge-Kutta solver for semi-explicit index-1 DAEs.
//!
//! Each step solves the coupled stage system
//!
//! ```text
//! xi_j = y_n + h sum_i a[j][i] f(xi_i, zeta_i)      j = 1..nu
//! 0    = g(xi_j, zeta_j)
//! ```
//!
//! by damped Newton on the nu*n dynamic stage unknowns with the algebraic
//! stages slaved to the constraint: every residual evaluation re-solves
//! g(xi_j, zeta_j) = 0 for zeta_j, so trial iterates never leave the
//! manifold. (Newton on the full coupled system stalls on stiff problems:
//! the linearized step cuts across the curved manifold and the constraint
//! residual explodes.) The reduced Jacobian uses the implicit-function
//! blocks f_y - f_z g_z^{-1} g_y, assembled from seeded backward sweeps
//! over one tape with the stages laid out as batch rows.
//!
//! The endpoint is y_{n+1} = y_n + h sum_j b[j] f_j, with z_{n+1} from the
//! constraint. This solver serves as ground truth for evaluating trained
//! surrogates and as the source of exact collocation solutions in tests.

use crate::autodiff::Tape;
use crate::dae::{self, eval_f_batch, eval_g_batch, SemiExplicitDae, StatePoint};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tableau::{ButcherTableau, Scheme};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub tableau: ButcherTableau,
    /// Step size in seconds.
    pub h_ref: f64,
    /// Stage-system residual tolerance (infinity norm).
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tableau: ButcherTableau::gauss(3).expect("3 is a valid stage count"),
            h_ref: 1e-3,
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.h_ref.is_finite() && self.h_ref > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver step size must be positive, got {}",
                self.h_ref
            )));
        }
        if !(self.newton_tol.is_finite() && self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Newton tolerance must be positive, got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "Newton iteration limit must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IrkStepResult {
    pub y_next: Vec<f64>,
    pub z_next: Vec<f64>,
    /// Converged stage values, one row per stage.
    pub stages_y: Tensor,
    pub stages_z: Tensor,
}

/// Solve the constraint rows g(xi_j, zeta_j) = 0 for every stage, warm
/// started from `warm`. Any row failing to converge fails the whole call.
fn slave_algebraic_stages(
    dae: &dyn SemiExplicitDae,
    sy: &Tensor,
    warm: &Tensor,
    tol: f64,
    max_iter: usize,
) -> Result<Tensor> {
    let (nu, m) = (sy.rows(), warm.cols());
    let mut sz = Tensor::zeros(nu, m);
    for j in 0..nu {
        let zj = dae::newton_z(dae, sy.row(j), warm.row(j), tol, max_iter)?;
        sz.row_mut(j).copy_from_slice(&zj);
    }
    Ok(sz)
}

/// Residual of the dynamic stage rows together with the f values it used.
fn dynamic_residual(
    dae: &dyn SemiExplicitDae,
    y_n: &[f64],
    h: f64,
    tableau: &ButcherTableau,
    sy: &Tensor,
    sz: &Tensor,
) -> Result<(Vec<f64>, Tensor)> {
    let (nu, n) = (tableau.nu, dae.n());
    let f = eval_f_batch(dae, sy, sz)?;
    let mut r = vec![0.0; nu * n];
    for j in 0..nu {
        for c in 0..n {
            let mut quad = 0.0;
            for i in 0..nu {
                quad += tableau.a[j][i] * f.get(i, c);
            }
            r[j * n + c] = sy.get(j, c) - y_n[c] - h * quad;
        }
    }
    Ok((r, f))
}

/// Jacobian of the dynamic stage rows with the algebraic stages slaved to
/// the constraint: the per-stage field derivative is f_y - f_z g_z^{-1} g_y.
/// Built from n+m seeded backward sweeps over a single tape; the stages sit
/// in batch rows, so each sweep covers every stage at once. Row-major,
/// dimension nu*n.
fn reduced_jacobian(
    dae: &dyn SemiExplicitDae,
    h: f64,
    tableau: &ButcherTableau,
    sy: &Tensor,
    sz: &Tensor,
) -> Result<Vec<f64>> {
    let (nu, n, m) = (tableau.nu, dae.n(), dae.m());

    let mut tape = Tape::new();
    let ynode = tape.constant(sy.clone());
    let znode = tape.constant(sz.clone());
    let fnode = dae.f(&mut tape, ynode, znode)?;
    let gnode = dae.g(&mut tape, ynode, znode)?;

    // Per output component c: one tensor of stage rows per input family.
    let mut fy = Vec::with_capacity(n);
    let mut fz = Vec::with_capacity(n);
    for c in 0..n {
        let mut seed = Tensor::zeros(nu, n);
        for j in 0..nu {
            seed.set(j, c, 1.0);
        }
        let grads = tape.backward_seeded(fnode, seed)?;
        fy.push(grads.wrt(ynode).cloned().unwrap_or_else(|| Tensor::zeros(nu, n)));
        fz.push(grads.wrt(znode).cloned().unwrap_or_else(|| Tensor::zeros(nu, m)));
    }
    let mut gy = Vec::with_capacity(m);
    let mut gz = Vec::with_capacity(m);
    for c in 0..m {
        let mut seed = Tensor::zeros(nu, m);
        for j in 0..nu {
            seed.set(j, c, 1.0);
        }
        let grads = tape.backward_seeded(gnode, seed)?;
        gy.push(grads.wrt(ynode).cloned().unwrap_or_else(|| Tensor::zeros(nu, n)));
        gz.push(grads.wrt(znode).cloned().unwrap_or_else(|| Tensor::zeros(nu, m)));
    }

    let mut blocks = Vec::with_capacity(nu);
    for i in 0..nu {
        let mut gzi = Tensor::zeros(m, m);
        let mut gyi = Tensor::zeros(m, n);
        for c in 0..m {
            for q in 0..m {
                gzi.set(c, q, gz[c].get(i, q));
            }
            for k in 0..n {
                gyi.set(c, k, gy[c].get(i, k));
            }
        }
        let x = linalg::lu_solve_matrix(&gzi, &gyi, "slaved stage block")?;
        let mut block = vec![0.0; n * n];
        for c in 0..n {
            for k in 0..n {
                let mut v = fy[c].get(i, k);
                for q in 0..m {
                    v -= fz[c].get(i, q) * x.get(q, k);
                }
                block[c * n + k] = v;
            }
        }
        blocks.push(block);
    }

    let dim = nu * n;
    let mut jac = vec![0.0; dim * dim];
    for j in 0..nu {
        for i in 0..nu {
            let coeff = h * tableau.a[j][i];
            if coeff == 0.0 {
                continue;
            }
            for c in 0..n {
                let row = (j * n + c) * dim;
                for k in 0..n {
                    jac[row + i * n + k] -= coeff * blocks[i][c * n + k];
                }
            }
        }
    }
    for idx in 0..dim {
        jac[idx * dim + idx] += 1.0;
    }
    Ok(jac)
}

fn apply_delta(sy: &Tensor, delta: &[f64], lambda: f64) -> Tensor {
    let (nu, n) = (sy.rows(), sy.cols());
    let mut ty = sy.clone();
    for j in 0..nu {
        for c in 0..n {
            ty.set(j, c, sy.get(j, c) + lambda * delta[j * n + c]);
        }
    }
    ty
}

/// Solve the stage system by damped Newton from the constant predictor
/// (all stages start at the step input), holding the algebraic stages on
/// the constraint throughout. Returns stages and final f values.
fn solve_stages(
    dae: &dyn SemiExplicitDae,
    y_n: &[f64],
    z_n: &[f64],
    h: f64,
    cfg: &SolverConfig,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (nu, n) = (cfg.tableau.nu, dae.n());
    let dim = nu * n;
    // Constraint solves run an order tighter than the dynamic rows so the
    // converged stages satisfy the full coupled system at newton_tol.
    let ztol = (cfg.newton_tol * 0.1).max(1e-15);
    let mut sy = Tensor::zeros(nu, n);
    let mut warm = Tensor::zeros(nu, dae.m());
    for j in 0..nu {
        sy.row_mut(j).copy_from_slice(y_n);
        warm.row_mut(j).copy_from_slice(z_n);
    }

    let mut sz = slave_algebraic_stages(dae, &sy, &warm, ztol, cfg.newton_max_iter)?;
    let (mut r, mut f) = dynamic_residual(dae, y_n, h, &cfg.tableau, &sy, &sz)?;
    let mut res = dae::inf_norm(&r);
    for _ in 0..cfg.newton_max_iter {
        if res <= cfg.newton_tol {
            return Ok((sy, sz, f));
        }
        if !res.is_finite() {
            return Err(Error::StepFailure { t: 0.0, residual: res });
        }
        let mut jac = reduced_jacobian(dae, h, &cfg.tableau, &sy, &sz)?;
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        if linalg::lu_solve(&mut jac, dim, &mut delta, "stage system").is_err() {
            return Err(Error::StepFailure { t: 0.0, residual: res });
        }

        let mut accepted = false;
        let mut lambda = 1.0;
        for _ in 0..=20 {
            let ty = apply_delta(&sy, &delta, lambda);
            // Trials whose constraint solve diverges (for example V3 pushed
            // past the fold of its branch) count as non-improving steps.
            let trial = slave_algebraic_stages(dae, &ty, &sz, ztol, cfg.newton_max_iter)
                .and_then(|tz| {
                    dynamic_residual(dae, y_n, h, &cfg.tableau, &ty, &tz)
                        .map(|(r2, f2)| (tz, r2, f2))
                });
            if let Ok((tz, r2, f2)) = trial {
                let res2 = dae::inf_norm(&r2);
                if res2.is_finite() && res2 < res {
                    sy = ty;
                    sz = tz;
                    r = r2;
                    f = f2;
                    res = res2;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::StepFailure { t: 0.0, residual: res });
        }
    }
    if res <= cfg.newton_tol {
        return Ok((sy, sz, f));
    }
    Err(Error::StepFailure { t: 0.0, residual: res })
}

/// One implicit Runge-Kutta step from a consistent point.
pub fn irk_step(
    dae: &dyn SemiExplicitDae,
    y_n: &[f64],
    z_n: &[f64],
    cfg: &SolverConfig,
) -> Result<IrkStepResult> {
    cfg.validate()?;
    if y_n.len() != dae.n() || z_n.len() != dae.m() {
        return Err(Error::InvalidArgument(format!(
            "irk_step: state dims ({}, {}) do not match the model ({}, {})",
            y_n.len(),
            z_n.len(),
            dae.n(),
            dae.m()
        )));
    }
    let h = cfg.h_ref;
    let (sy, sz, f) = solve_stages(dae, y_n, z_n, h, cfg)?;

    let mut y_next = y_n.to_vec();
    for (j, &bj) in cfg.tableau.b.iter().enumerate() {
        for (c, y) in y_next.iter_mut().enumerate() {
            *y += h * bj * f.get(j, c);
        }
    }
    let z_next = dae::newton_z(
        dae,
        &y_next,
        sz.row(sz.rows() - 1),
        cfg.newton_tol,
        cfg.newton_max_iter,
    )?;
    Ok(IrkStepResult {
        y_next,
        z_next,
        stages_y: sy,
        stages_z: sz,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMeta {
    pub model: String,
    pub scheme: Scheme,
    pub nu: usize,
    pub h_ref: f64,
    pub newton_tol: f64,
    /// The algebraic guess that selected the solution branch.
    pub z_guess: Vec<f64>,
}

/// A solved trajectory on a fixed time grid, with stored state derivatives
/// for dense evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Dynamic states, one row per grid point.
    pub y: Tensor,
    /// Algebraic states, one row per grid point.
    pub z: Tensor,
    /// f(y, z) at each grid point.
    pub yd: Tensor,
    pub names: Vec<String>,
    pub meta: TrajectoryMeta,
}

/// Integrate from (y0, consistent z near z_guess) to t_end with fixed steps
/// of cfg.h_ref; a shorter final step lands exactly on t_end when needed.
pub fn solve(
    dae: &dyn SemiExplicitDae,
    y0: &[f64],
    z_guess: &[f64],
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "integration horizon must be positive, got {t_end}"
        )));
    }
    let z0 = dae::newton_z(dae, y0, z_guess, cfg.newton_tol, cfg.newton_max_iter)?;

    let h = cfg.h_ref;
    let full_steps = (t_end / h + 1e-9).floor() as usize;
    let remainder = t_end - full_steps as f64 * h;
    let take_partial = remainder > 1e-9 * h;

    let mut times = Vec::with_capacity(full_steps + 2);
    let mut ys = Vec::with_capacity(full_steps + 2);
    let mut zs = Vec::with_capacity(full_steps + 2);
    times.push(0.0);
    ys.push(y0.to_vec());
    zs.push(z0);

    let attach_time = |e: Error, t: f64| match e {
        Error::StepFailure { residual, .. } => Error::StepFailure { t, residual },
        other => other,
    };

    for k in 1..=full_steps {
        let t_start = (k - 1) as f64 * h;
        let step = irk_step(dae, ys.last().unwrap(), zs.last().unwrap(), cfg)
            .map_err(|e| attach_time(e, t_start))?;
        times.push(k as f64 * h);
        ys.push(step.y_next);
        zs.push(step.z_next);
    }
    if take_partial {
        let mut last_cfg = cfg.clone();
        last_cfg.h_ref = remainder;
        let t_start = full_steps as f64 * h;
        let step = irk_step(dae, ys.last().unwrap(), zs.last().unwrap(), &last_cfg)
            .map_err(|e| attach_time(e, t_start))?;
        times.push(t_end);
        ys.push(step.y_next);
        zs.push(step.z_next);
    }

    let y = Tensor::from_rows(&ys)?;
    let z = Tensor::from_rows(&zs)?;
    let yd = eval_f_batch(dae, &y, &z)?;
    Ok(Trajectory {
        times,
        y,
        z,
        yd,
        names: dae.state_names(),
        meta: TrajectoryMeta {
            model: dae.name(),
            scheme: cfg.tableau.scheme,
            nu: cfg.tableau.nu,
            h_ref: cfg.h_ref,
            newton_tol: cfg.newton_tol,
            z_guess: z_guess.to_vec(),
        },
    })
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.y.cols()
    }

    pub fn m(&self) -> usize {
        self.z.cols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at an arbitrary time inside the span: cubic Hermite in the
    /// dynamic states (using the stored derivatives), linear in the
    /// algebraic states, and exactly the stored values on grid points.
    pub fn dense_eval(&self, t: f64) -> Result<StatePoint> {
        let lo = self.times[0];
        let hi = *self.times.last().expect("nonempty trajectory");
        let slack = 1e-12 * (hi - lo).max(1.0);
        let tq = if t >= lo && t <= hi {
            t
        } else if t >= lo - slack && t <= hi + slack {
            t.clamp(lo, hi)
        } else {
            return Err(Error::OutOfRange { t, lo, hi });
        };

        // First index with time > tq; the bracket is [idx-1, idx].
        let idx = self.times.partition_point(|&x| x <= tq);
        let k = idx.saturating_sub(1);
        if self.times[k] == tq {
            return Ok(StatePoint {
                t: tq,
                y: self.y.row(k).to_vec(),
                z: self.z.row(k).to_vec(),
            });
        }
        let k1 = k + 1;
        let dt = self.times[k1] - self.times[k];
        let s = (tq - self.times[k]) / dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;

        let y = (0..self.n())
            .map(|c| {
                h00 * self.y.get(k, c)
                    + h10 * dt * self.yd.get(k, c)
                    + h01 * self.y.get(k1, c)
                    + h11 * dt * self.yd.get(k1, c)
            })
            .collect();
        let z = (0..self.m())
            .map(|c| (1.0 - s) * self.z.get(k, c) + s * self.z.get(k1, c))
            .collect();
        Ok(StatePoint { t: tq, y, z })
    }

    /// Largest algebraic residual over all stored points.
    pub fn max_g_violation(&self, dae: &dyn SemiExplicitDae) -> Result<f64> {
        Ok(eval_g_batch(dae, &self.y, &self.z)?.max_abs())
    }

    /// CSV with a `t,<state names>` header and 17-significant-digit values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.16e}"));
            for c in 0..self.n() {
                out.push_str(&format!(",{:.16e}", self.y.get(k, c)));
            }
            for c in 0..self.m() {
                out.push_str(&format!(",{:.16e}", self.z.get(k, c)));
            }
            out.push('\n');
        }
        out
    }
}
