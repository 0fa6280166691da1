//! Collocation residuals and the physics loss.
//!
//! Given stage predictions (xi_j, zeta_j) for j = 1..nu plus the endpoint
//! (y_{n+1}, z_{n+1}), the dynamic residual targets are
//!
//! ```text
//! r_j      = xi_j    - h  sum_i a[j][i] f(xi_i, zeta_i)      j = 1..nu
//! r_{nu+1} = y_{n+1} - h  sum_i b[i]    f(xi_i, zeta_i)
//! ```
//!
//! and the loss compares every target against the shared step input y_n:
//!
//! ```text
//! L_f = mean over batch and slots of ||y_n - r_j||^2
//! L_g = mean over batch and slots of ||g at slot j||^2
//! L   = w_f L_f + w_g L_g
//! ```
//!
//! Driving L_f to zero forces the predictions to satisfy the implicit
//! Runge-Kutta equations with y_n as the step input, and L_g pins every
//! predicted point onto the algebraic manifold. All reductions sum in fixed
//! order, so losses are bit-reproducible.
//!
//! The right-hand side f is evaluated once per stage; the weighted stage
//! sums for all nu+1 targets are then one matrix product with a constant
//! block matrix of tableau coefficients.

use crate::autodiff::{NodeId, Tape};
use crate::dae::SemiExplicitDae;
use crate::error::{Error, Result};
use crate::network::StagePrediction;
use crate::tableau::ButcherTableau;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_f: f64,
    pub l_g: f64,
    pub total: f64,
    pub w_f: f64,
    pub w_g: f64,
}

/// total = w_f * l_f + w_g * l_g with positive weights.
pub fn total_loss(l_f: f64, l_g: f64, w_f: f64, w_g: f64) -> Result<LossBreakdown> {
    check_weights(w_f, w_g)?;
    Ok(LossBreakdown {
        l_f,
        l_g,
        total: w_f * l_f + w_g * l_g,
        w_f,
        w_g,
    })
}

fn check_weights(w_f: f64, w_g: f64) -> Result<()> {
    if !(w_f.is_finite() && w_g.is_finite() && w_f > 0.0 && w_g > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss weights must be positive and finite, got w_f = {w_f}, w_g = {w_g}"
        )));
    }
    Ok(())
}

fn check_slots(
    tape: &Tape,
    ys: &[NodeId],
    zs: &[NodeId],
    nu: usize,
    op: &'static str,
) -> Result<(usize, usize, usize)> {
    if ys.len() != nu + 1 || zs.len() != nu + 1 {
        return Err(Error::InvalidArgument(format!(
            "{op}: need {} stage slots, got {} dynamic and {} algebraic",
            nu + 1,
            ys.len(),
            zs.len()
        )));
    }
    let batch = tape.value(ys[0]).rows();
    if batch == 0 {
        return Err(Error::InvalidArgument(format!("{op}: empty batch")));
    }
    let n = tape.value(ys[0]).cols();
    let m = tape.value(zs[0]).cols();
    for &id in ys {
        if tape.value(id).rows() != batch || tape.value(id).cols() != n {
            return Err(Error::ShapeMismatch {
                op,
                left: vec![batch, n],
                right: tape.value(id).shape().to_vec(),
            });
        }
    }
    for &id in zs {
        if tape.value(id).rows() != batch || tape.value(id).cols() != m {
            return Err(Error::ShapeMismatch {
                op,
                left: vec![batch, m],
                right: tape.value(id).shape().to_vec(),
            });
        }
    }
    Ok((batch, n, m))
}

/// Tableau coefficients as one (nu*n) x ((nu+1)*n) block matrix: block
/// column j applies row j of `a` (or `b` for the endpoint) to every state
/// component.
fn stage_weight_matrix(tableau: &ButcherTableau, n: usize) -> Tensor {
    let nu = tableau.nu;
    let mut k = Tensor::zeros(nu * n, (nu + 1) * n);
    for j in 0..nu {
        for i in 0..nu {
            for comp in 0..n {
                k.set(i * n + comp, j * n + comp, tableau.a[j][i]);
            }
        }
    }
    for i in 0..nu {
        for comp in 0..n {
            k.set(i * n + comp, nu * n + comp, tableau.b[i]);
        }
    }
    k
}

/// Build the nu+1 dynamic residual targets on the tape. `ys`/`zs` hold the
/// stage slots as produced by stage prediction; f is evaluated once per
/// stage and shared across all targets.
pub fn residual_target_nodes(
    tape: &mut Tape,
    dae: &dyn SemiExplicitDae,
    ys: &[NodeId],
    zs: &[NodeId],
    tableau: &ButcherTableau,
    h: f64,
) -> Result<Vec<NodeId>> {
    let nu = tableau.nu;
    let (_, n, _) = check_slots(tape, ys, zs, nu, "residual targets")?;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive and finite, got {h}"
        )));
    }

    let f_nodes: Vec<NodeId> = (0..nu)
        .map(|i| dae.f(tape, ys[i], zs[i]))
        .collect::<Result<_>>()?;
    let f_all = tape.concat_cols(&f_nodes)?;
    let weights = tape.constant(stage_weight_matrix(tableau, n));
    let sums = tape.matmul(f_all, weights)?;

    let mut targets = Vec::with_capacity(nu + 1);
    for j in 0..=nu {
        let slot_sum = tape.slice_cols(sums, j * n, n)?;
        let scaled = tape.scale(slot_sum, h);
        targets.push(tape.sub(ys[j], scaled)?);
    }
    Ok(targets)
}

/// Mean over batch and slots of the squared distance between the step input
/// and each residual target.
pub fn loss_f_nodes(tape: &mut Tape, y_n: NodeId, targets: &[NodeId]) -> Result<NodeId> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("loss_f: no residual targets".into()));
    }
    let batch = tape.value(y_n).rows();
    if batch == 0 {
        return Err(Error::InvalidArgument("loss_f: empty batch".into()));
    }
    let mut acc: Option<NodeId> = None;
    for &t in targets {
        let diff = tape.sub(y_n, t)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / (batch * targets.len()) as f64))
}

/// Mean over batch and slots of the squared algebraic residual.
pub fn loss_g_nodes(
    tape: &mut Tape,
    dae: &dyn SemiExplicitDae,
    ys: &[NodeId],
    zs: &[NodeId],
) -> Result<NodeId> {
    if ys.is_empty() || ys.len() != zs.len() {
        return Err(Error::InvalidArgument(format!(
            "loss_g: mismatched stage slots ({} and {})",
            ys.len(),
            zs.len()
        )));
    }
    let batch = tape.value(ys[0]).rows();
    if batch == 0 {
        return Err(Error::InvalidArgument("loss_g: empty batch".into()));
    }
    let mut acc: Option<NodeId> = None;
    for (&y, &z) in ys.iter().zip(zs.iter()) {
        let g = dae.g(tape, y, z)?;
        let sq = tape.square(g);
        let s = tape.sum(sq);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / (batch * ys.len()) as f64))
}

pub struct LossNodes {
    pub l_f: NodeId,
    pub l_g: NodeId,
    pub total: NodeId,
}

/// Assemble the full physics loss on the tape.
pub fn physics_loss_nodes(
    tape: &mut Tape,
    dae: &dyn SemiExplicitDae,
    y_n: NodeId,
    ys: &[NodeId],
    zs: &[NodeId],
    tableau: &ButcherTableau,
    h: f64,
    w_f: f64,
    w_g: f64,
) -> Result<LossNodes> {
    check_weights(w_f, w_g)?;
    let targets = residual_target_nodes(tape, dae, ys, zs, tableau, h)?;
    let l_f = loss_f_nodes(tape, y_n, &targets)?;
    let l_g = loss_g_nodes(tape, dae, ys, zs)?;
    let wf = tape.scale(l_f, w_f);
    let wg = tape.scale(l_g, w_g);
    let total = tape.add(wf, wg)?;
    Ok(LossNodes { l_f, l_g, total })
}

fn constants(tape: &mut Tape, slots: &[Tensor]) -> Vec<NodeId> {
    slots.iter().map(|t| tape.constant(t.clone())).collect()
}

/// Residual targets for frozen predictions, one tensor per slot.
pub fn dynamic_residual_targets(
    dae: &dyn SemiExplicitDae,
    pred: &StagePrediction,
    tableau: &ButcherTableau,
    h: f64,
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let ys = constants(&mut tape, &pred.ys);
    let zs = constants(&mut tape, &pred.zs);
    let targets = residual_target_nodes(&mut tape, dae, &ys, &zs, tableau, h)?;
    Ok(targets.iter().map(|&id| tape.value(id).clone()).collect())
}

pub fn loss_f(y_n: &Tensor, targets: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let yn = tape.constant(y_n.clone());
    let ts = constants(&mut tape, targets);
    let l = loss_f_nodes(&mut tape, yn, &ts)?;
    Ok(tape.value(l).get(0, 0))
}

pub fn loss_g(dae: &dyn SemiExplicitDae, pred: &StagePrediction) -> Result<f64> {
    let mut tape = Tape::new();
    let ys = constants(&mut tape, &pred.ys);
    let zs = constants(&mut tape, &pred.zs);
    let l = loss_g_nodes(&mut tape, dae, &ys, &zs)?;
    Ok(tape.value(l).get(0, 0))
}

/// Full loss for frozen predictions.
pub fn physics_loss(
    dae: &dyn SemiExplicitDae,
    y_n: &Tensor,
    pred: &StagePrediction,
    tableau: &ButcherTableau,
    h: f64,
    w_f: f64,
    w_g: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let yn = tape.constant(y_n.clone());
    let ys = constants(&mut tape, &pred.ys);
    let zs = constants(&mut tape, &pred.zs);
    let nodes = physics_loss_nodes(&mut tape, dae, yn, &ys, &zs, tableau, h, w_f, w_g)?;
    total_loss(
        tape.value(nodes.l_f).get(0, 0),
        tape.value(nodes.l_g).get(0, 0),
        w_f,
        w_g,
    )
}
