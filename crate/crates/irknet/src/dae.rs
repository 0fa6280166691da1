//! Semi-explicit index-1 DAE models.
//!
//! A system is given as y' = f(y, z), 0 = g(y, z) with dg/dz invertible along
//! the trajectories of interest, so the algebraic states are locally a
//! function of the dynamic ones. Models build f and g out of autodiff
//! primitives on a [`Tape`]; the very same code path therefore serves
//! training gradients, Newton Jacobians, and plain evaluation.
//!
//! Inputs are batched: `y` is batch x n and `z` is batch x m, one sample per
//! row, and every row is evaluated independently.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{matmul_nn, Tensor};

pub trait SemiExplicitDae {
    /// Dynamic dimension.
    fn n(&self) -> usize;
    /// Algebraic dimension.
    fn m(&self) -> usize;
    /// Dynamic right-hand side, batch x n.
    fn f(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId>;
    /// Algebraic residual, batch x m.
    fn g(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId>;
    fn name(&self) -> String;
    /// Column labels, dynamic states first, then algebraic.
    fn state_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n()).map(|i| format!("y{i}")).collect();
        names.extend((1..=self.m()).map(|i| format!("z{i}")));
        names
    }
}

/// A state at an instant. Consistent points satisfy ||g(y, z)||_inf <= 1e-10.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePoint {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

fn check_dims(dae: &dyn SemiExplicitDae, tape: &Tape, y: NodeId, z: NodeId) -> Result<usize> {
    let (vy, vz) = (tape.value(y), tape.value(z));
    if vy.cols() != dae.n() || vz.cols() != dae.m() || vy.rows() != vz.rows() {
        return Err(Error::ShapeMismatch {
            op: "dae eval",
            left: vy.shape().to_vec(),
            right: vz.shape().to_vec(),
        });
    }
    Ok(vy.rows())
}

/// Evaluate f at a batch of points.
pub fn eval_f_batch(dae: &dyn SemiExplicitDae, y: &Tensor, z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let yn = tape.constant(y.clone());
    let zn = tape.constant(z.clone());
    check_dims(dae, &tape, yn, zn)?;
    let f = dae.f(&mut tape, yn, zn)?;
    Ok(tape.value(f).clone())
}

/// Evaluate g at a batch of points.
pub fn eval_g_batch(dae: &dyn SemiExplicitDae, y: &Tensor, z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let yn = tape.constant(y.clone());
    let zn = tape.constant(z.clone());
    check_dims(dae, &tape, yn, zn)?;
    let g = dae.g(&mut tape, yn, zn)?;
    Ok(tape.value(g).clone())
}

pub fn eval_f(dae: &dyn SemiExplicitDae, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let out = eval_f_batch(dae, &Tensor::row_vector(y), &Tensor::row_vector(z))?;
    Ok(out.row(0).to_vec())
}

pub fn eval_g(dae: &dyn SemiExplicitDae, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let out = eval_g_batch(dae, &Tensor::row_vector(y), &Tensor::row_vector(z))?;
    Ok(out.row(0).to_vec())
}

#[derive(Clone, Debug)]
pub struct DaeJacobians {
    pub fy: Tensor,
    pub fz: Tensor,
    pub gy: Tensor,
    pub gz: Tensor,
}

/// All four Jacobian blocks at a single point, one backward sweep per output
/// row.
pub fn jacobians(dae: &dyn SemiExplicitDae, y: &[f64], z: &[f64]) -> Result<DaeJacobians> {
    let (n, m) = (dae.n(), dae.m());
    let mut tape = Tape::new();
    let yn = tape.constant(Tensor::row_vector(y));
    let zn = tape.constant(Tensor::row_vector(z));
    check_dims(dae, &tape, yn, zn)?;
    let f = dae.f(&mut tape, yn, zn)?;
    let g = dae.g(&mut tape, yn, zn)?;

    let mut fy = Tensor::zeros(n, n);
    let mut fz = Tensor::zeros(n, m);
    for row in 0..n {
        let mut seed = Tensor::zeros(1, n);
        seed.set(0, row, 1.0);
        let grads = tape.backward_seeded(f, seed)?;
        if let Some(gy_) = grads.wrt(yn) {
            fy.row_mut(row).copy_from_slice(gy_.row(0));
        }
        if let Some(gz_) = grads.wrt(zn) {
            fz.row_mut(row).copy_from_slice(gz_.row(0));
        }
    }
    let mut gy = Tensor::zeros(m, n);
    let mut gz = Tensor::zeros(m, m);
    for row in 0..m {
        let mut seed = Tensor::zeros(1, m);
        seed.set(0, row, 1.0);
        let grads = tape.backward_seeded(g, seed)?;
        if let Some(gy_) = grads.wrt(yn) {
            gy.row_mut(row).copy_from_slice(gy_.row(0));
        }
        if let Some(gz_) = grads.wrt(zn) {
            gz.row_mut(row).copy_from_slice(gz_.row(0));
        }
    }
    Ok(DaeJacobians { fy, fz, gy, gz })
}

/// Smallest singular value of dg/dz, the margin on the index-1 assumption.
pub fn index1_margin(dae: &dyn SemiExplicitDae, y: &[f64], z: &[f64]) -> Result<f64> {
    Ok(linalg::sigma_min(&jacobians(dae, y, z)?.gz))
}

/// Threshold below which dg/dz counts as singular.
const INDEX1_SIGMA_MIN: f64 = 1e-8;

/// Solve g(y, z) = 0 for z by damped Newton from `z_guess`, converging to
/// ||g||_inf <= 1e-10. Which root is found depends on the guess's basin.
pub fn consistent_z(dae: &dyn SemiExplicitDae, y: &[f64], z_guess: &[f64]) -> Result<Vec<f64>> {
    newton_z(dae, y, z_guess, 1e-10, 50)
}

pub(crate) fn newton_z(
    dae: &dyn SemiExplicitDae,
    y: &[f64],
    z_guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let m = dae.m();
    if z_guess.len() != m || y.len() != dae.n() {
        return Err(Error::InvalidArgument(format!(
            "consistent_z: state dims ({}, {}) do not match ({}, {})",
            y.len(),
            z_guess.len(),
            dae.n(),
            m
        )));
    }
    let mut z = z_guess.to_vec();
    let mut residual = inf_norm(&eval_g(dae, y, &z)?);

    for _iter in 0..max_iter {
        if residual <= tol {
            return Ok(z);
        }
        let jac = jacobians(dae, y, &z)?;
        if linalg::sigma_min(&jac.gz) <= INDEX1_SIGMA_MIN {
            return Err(Error::IndexViolation(format!(
                "dg/dz is numerically singular at the current iterate \
                 (smallest singular value <= {INDEX1_SIGMA_MIN:.0e})"
            )));
        }
        let g = eval_g(dae, y, &z)?;
        let mut a = jac.gz.data().to_vec();
        let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
        linalg::lu_solve(&mut a, m, &mut step, "consistent_z Newton")?;

        // Halve the step until the residual actually decreases.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=20 {
            let trial: Vec<f64> = z
                .iter()
                .zip(step.iter())
                .map(|(&zi, &si)| zi + lambda * si)
                .collect();
            let trial_res = inf_norm(&eval_g(dae, y, &trial)?);
            if trial_res < residual {
                z = trial;
                residual = trial_res;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NumericalFailure(format!(
                "consistent_z: damped Newton stalled at residual {residual:.3e}"
            )));
        }
    }
    if residual <= tol {
        return Ok(z);
    }
    Err(Error::NumericalFailure(format!(
        "consistent_z did not reach {tol:.1e} in {max_iter} iterations \
         (last residual {residual:.3e})"
    )))
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |mx, &x| mx.max(x.abs()))
}

/// Parameters of the three-bus power network, per-unit except the inertia
/// and damping constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThreeBusParams {
    pub m1: f64,
    pub m2: f64,
    pub d: f64,
    pub dl: f64,
    pub v1: f64,
    pub v2: f64,
    pub b12: f64,
    pub b13: f64,
    pub b23: f64,
    pub pg: f64,
    pub pl: f64,
    pub ql: f64,
}

impl Default for ThreeBusParams {
    fn default() -> Self {
        ThreeBusParams {
            m1: 0.52,
            m2: 0.0531,
            d: 0.05,
            dl: 0.005,
            v1: 1.02,
            // Generator-bus setpoint. At 0.05 pu the network cannot carry
            // Pg or Pl (|f1| >= 0.94 for every reachable V3), no equilibrium
            // exists, and every trajectory collapses within ~10 ms.
            v2: 1.05,
            b12: 10.0,
            b13: 10.0,
            b23: 10.0,
            pg: -2.0,
            pl: 3.0,
            ql: 0.1,
        }
    }
}

/// Two-generator, one-load power network with bus-3 voltage as the algebraic
/// state. Dynamic states are (w1, w2, d2, d3): the bus-1 frequency, bus-2
/// frequency deviation, and the two voltage angles. Stiff: the load-angle
/// equation carries a 1/Dl factor of 200.
pub struct ThreeBus {
    pub params: ThreeBusParams,
}

impl ThreeBus {
    pub fn new(params: ThreeBusParams) -> Result<ThreeBus> {
        let vals = [
            params.m1, params.m2, params.d, params.dl, params.v1, params.v2, params.b12,
            params.b13, params.b23, params.pg, params.pl, params.ql,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "three-bus parameters must be finite".into(),
            ));
        }
        if params.m1 == 0.0 || params.m2 == 0.0 || params.dl == 0.0 {
            return Err(Error::InvalidArgument(
                "three-bus inertia and load damping must be nonzero".into(),
            ));
        }
        if params.b13 + params.b23 == 0.0 {
            return Err(Error::InvalidArgument(
                "three-bus V3^2 coefficient (B13 + B23) must be nonzero".into(),
            ));
        }
        Ok(ThreeBus { params })
    }

    /// Columns (w1, w2, d2, d3, V3) plus the shared trig subexpressions.
    fn parts(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<ThreeBusParts> {
        let w1 = tape.slice_cols(y, 0, 1)?;
        let w2 = tape.slice_cols(y, 1, 1)?;
        let d2 = tape.slice_cols(y, 2, 1)?;
        let d3 = tape.slice_cols(y, 3, 1)?;
        let v3 = tape.slice_cols(z, 0, 1)?;
        let d23 = tape.sub(d2, d3)?;
        Ok(ThreeBusParts {
            w1,
            w2,
            d2,
            d3,
            v3,
            sin_d2: tape.sin(d2),
            sin_d3: tape.sin(d3),
            cos_d3: tape.cos(d3),
            sin_d23: tape.sin(d23),
            cos_d23: tape.cos(d23),
        })
    }

    /// f1 = B12 V1 V2 sin(d2) + B23 V2 V3 sin(d2 - d3) + Pg
    fn f1(&self, tape: &mut Tape, p: &ThreeBusParts) -> Result<NodeId> {
        let pr = &self.params;
        let rows = tape.value(p.w1).rows();
        let t1 = tape.scale(p.sin_d2, pr.b12 * pr.v1 * pr.v2);
        let v3_sin = tape.mul(p.v3, p.sin_d23)?;
        let t2 = tape.scale(v3_sin, pr.b23 * pr.v2);
        let t12 = tape.add(t1, t2)?;
        let pg = tape.constant(Tensor::filled(rows, 1, pr.pg));
        tape.add(t12, pg)
    }

    /// f2 = B13 V1 V3 sin(d3) + B23 V2 V3 sin(d3 - d2) + Pl
    fn f2(&self, tape: &mut Tape, p: &ThreeBusParts) -> Result<NodeId> {
        let pr = &self.params;
        let rows = tape.value(p.w1).rows();
        let v3_sin3 = tape.mul(p.v3, p.sin_d3)?;
        let t1 = tape.scale(v3_sin3, pr.b13 * pr.v1);
        let sin_d32 = tape.neg(p.sin_d23);
        let v3_sin32 = tape.mul(p.v3, sin_d32)?;
        let t2 = tape.scale(v3_sin32, pr.b23 * pr.v2);
        let t12 = tape.add(t1, t2)?;
        let pl = tape.constant(Tensor::filled(rows, 1, pr.pl));
        tape.add(t12, pl)
    }
}

struct ThreeBusParts {
    w1: NodeId,
    w2: NodeId,
    #[allow(dead_code)]
    d2: NodeId,
    #[allow(dead_code)]
    d3: NodeId,
    v3: NodeId,
    sin_d2: NodeId,
    sin_d3: NodeId,
    cos_d3: NodeId,
    sin_d23: NodeId,
    cos_d23: NodeId,
}

impl SemiExplicitDae for ThreeBus {
    fn n(&self) -> usize {
        4
    }

    fn m(&self) -> usize {
        1
    }

    fn f(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        check_dims(self, tape, y, z)?;
        let pr = &self.params;
        let p = self.parts(tape, y, z)?;
        let f1 = self.f1(tape, &p)?;
        let f2 = self.f2(tape, &p)?;

        // w1' = (-D w1 + f1 + f2) / M1
        let dw1 = tape.scale(p.w1, -pr.d);
        let s = tape.add(dw1, f1)?;
        let s = tape.add(s, f2)?;
        let fw1 = tape.scale(s, 1.0 / pr.m1);

        // w2' = (-D w2 - f1) / M2
        let dw2 = tape.scale(p.w2, -pr.d);
        let s = tape.sub(dw2, f1)?;
        let fw2 = tape.scale(s, 1.0 / pr.m2);

        // d2' = w2 - w1
        let fd2 = tape.sub(p.w2, p.w1)?;

        // d3' = -(w1 + f2 / Dl); the f2/Dl term damps the fast load-bus
        // mode (its feedback through sin(d3) must oppose growth, matching
        // the structure of the two generator equations).
        let f2_dl = tape.scale(f2, -1.0 / pr.dl);
        let fd3 = tape.sub(f2_dl, p.w1)?;

        tape.concat_cols(&[fw1, fw2, fd2, fd3])
    }

    fn g(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        check_dims(self, tape, y, z)?;
        let pr = &self.params;
        let p = self.parts(tape, y, z)?;
        let rows = tape.value(p.v3).rows();

        // g1 = (B13 + B23) V3^2 - B13 V1 V3 cos(d3) - B23 V2 V3 cos(d3 - d2) + Ql
        let v3_sq = tape.square(p.v3);
        let t0 = tape.scale(v3_sq, pr.b13 + pr.b23);
        let v3_cos3 = tape.mul(p.v3, p.cos_d3)?;
        let t1 = tape.scale(v3_cos3, pr.b13 * pr.v1);
        let v3_cos32 = tape.mul(p.v3, p.cos_d23)?;
        let t2 = tape.scale(v3_cos32, pr.b23 * pr.v2);
        let s = tape.sub(t0, t1)?;
        let s = tape.sub(s, t2)?;
        let ql = tape.constant(Tensor::filled(rows, 1, pr.ql));
        let g1 = tape.add(s, ql)?;

        // g = -g1 / V3; errors out when V3 = 0.
        let ratio = tape.div(g1, p.v3).map_err(|e| match e {
            Error::DivisionByZero(_) => {
                Error::DivisionByZero("three-bus g: V3 = 0".into())
            }
            other => other,
        })?;
        Ok(tape.neg(ratio))
    }

    fn name(&self) -> String {
        "three_bus".into()
    }

    fn state_names(&self) -> Vec<String> {
        ["w1", "w2", "d2", "d3", "V3"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

/// y' = -y, 0 = z - y: the scalar test problem with exact solution
/// y(t) = y0 exp(-t), z = y.
pub struct LinearTestDae;

impl SemiExplicitDae for LinearTestDae {
    fn n(&self) -> usize {
        1
    }

    fn m(&self) -> usize {
        1
    }

    fn f(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        check_dims(self, tape, y, z)?;
        Ok(tape.neg(y))
    }

    fn g(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        check_dims(self, tape, y, z)?;
        tape.sub(z, y)
    }

    fn name(&self) -> String {
        "linear_test".into()
    }

    fn state_names(&self) -> Vec<String> {
        vec!["y".into(), "z".into()]
    }
}

pub type PhiFn = Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>;

/// Semi-explicit system recovered from a descriptor form M u' = phi(u):
/// with M = S diag(I_n, 0) T, the transformed state (y; z) = T u obeys
/// (f; g) = S^-1 phi(T^-1 (y; z)) split at row n.
pub struct DescriptorDae {
    n: usize,
    m: usize,
    /// (T^-1)^T, so row-vector states transform by right-multiplication.
    t_inv_t: Tensor,
    /// (S^-1)^T.
    s_inv_t: Tensor,
    phi: PhiFn,
}

impl DescriptorDae {
    fn transformed(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        let u = tape.concat_cols(&[y, z])?;
        let t_inv = tape.constant(self.t_inv_t.clone());
        let u = tape.matmul(u, t_inv)?;
        let w = (self.phi)(tape, u)?;
        if tape.value(w).cols() != self.n + self.m {
            return Err(Error::InvalidArgument(format!(
                "descriptor phi returned {} columns, expected {}",
                tape.value(w).cols(),
                self.n + self.m
            )));
        }
        let s_inv = tape.constant(self.s_inv_t.clone());
        tape.matmul(w, s_inv)
    }
}

impl SemiExplicitDae for DescriptorDae {
    fn n(&self) -> usize {
        self.n
    }

    fn m(&self) -> usize {
        self.m
    }

    fn f(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        check_dims(self, tape, y, z)?;
        let w = self.transformed(tape, y, z)?;
        tape.slice_cols(w, 0, self.n)
    }

    fn g(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> Result<NodeId> {
        check_dims(self, tape, y, z)?;
        let w = self.transformed(tape, y, z)?;
        tape.slice_cols(w, self.n, self.m)
    }

    fn name(&self) -> String {
        "descriptor".into()
    }
}

pub struct DescriptorReduction {
    pub dae: DescriptorDae,
    pub s: Tensor,
    pub t: Tensor,
    pub rank: usize,
}

impl std::fmt::Debug for DescriptorDae {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DescriptorDae")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl std::fmt::Debug for DescriptorReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DescriptorReduction")
            .field("rank", &self.rank)
            .field("s", &self.s)
            .field("t", &self.t)
            .finish_non_exhaustive()
    }
}

/// Factor a descriptor system M u' = phi(u) into semi-explicit form by
/// Gaussian elimination with total pivoting on M.
///
/// Rank handling: with tau = 1e-10 * max|M|, remaining entries of at most
/// 1e-4 * tau are treated as exact zeros (clean rank cut) while entries in
/// between cannot be classified and raise an ambiguous-rank error. A
/// full-rank M is an ODE in disguise and is rejected.
pub fn descriptor_to_semi_explicit(mass: &Tensor, phi: PhiFn) -> Result<DescriptorReduction> {
    let size = mass.rows();
    if size == 0 || mass.cols() != size {
        return Err(Error::InvalidArgument(format!(
            "mass matrix must be square and nonempty, got {}x{}",
            mass.rows(),
            mass.cols()
        )));
    }
    let scale = mass.max_abs();
    let tol = 1e-10 * scale;
    let clean = 1e-14 * scale;

    let lu = linalg::complete_pivot_lu(mass, tol);
    if lu.rank == size {
        return Err(Error::NotADae(format!(
            "mass matrix has full rank {size}: the system is an ODE after a \
             change of variables; use an ODE solver"
        )));
    }
    if lu.trailing_max > clean {
        return Err(Error::AmbiguousRank(format!(
            "largest remaining entry {:.3e} sits between the zero level \
             {clean:.3e} and the pivot tolerance {tol:.3e}",
            lu.trailing_max
        )));
    }
    let rank = lu.rank;
    if rank == 0 {
        return Err(Error::InvalidArgument(
            "mass matrix is zero: the system is purely algebraic".into(),
        ));
    }

    // M = P^T L U Q^T with U = [U11 U12; 0 0]. Split U as
    // diag(U11, I) * [I, U11^-1 U12; 0, I] * diag(I_r, 0)-compatible factors:
    //   S = P^T L diag(U11, I),   T = [I, U11^-1 U12; 0, I] Q^T.
    let mut u11 = Tensor::zeros(rank, rank);
    let mut u12 = Tensor::zeros(rank, size - rank);
    for r in 0..rank {
        for c in 0..rank {
            u11.set(r, c, lu.u.get(r, c));
        }
        for c in rank..size {
            u12.set(r, c - rank, lu.u.get(r, c));
        }
    }
    let x = linalg::lu_solve_matrix(&u11, &u12, "descriptor U11 solve")?;

    let mut s = Tensor::zeros(size, size);
    for k in 0..size {
        for c in 0..size {
            // (L * diag(U11, I))[k][c]
            let mut v = 0.0;
            if c < rank {
                for j in 0..rank {
                    v += lu.l.get(k, j) * u11.get(j, c);
                }
            } else {
                v = lu.l.get(k, c);
            }
            s.set(lu.row_perm[k], c, v);
        }
    }

    let mut t = Tensor::zeros(size, size);
    for r in 0..size {
        for c in 0..size {
            let v = if r < rank {
                if c == r {
                    1.0
                } else if c >= rank {
                    x.get(r, c - rank)
                } else {
                    0.0
                }
            } else if c == r {
                1.0
            } else {
                0.0
            };
            t.set(r, lu.col_perm[c], v);
        }
    }

    // Reconstruction check: S diag(I_r, 0) T must reproduce M.
    let mut middle = Tensor::zeros(size, size);
    for i in 0..rank {
        middle.set(i, i, 1.0);
    }
    let recon = matmul_nn(&matmul_nn(&s, &middle), &t);
    let mut defect = 0.0f64;
    for (a, b) in recon.data().iter().zip(mass.data().iter()) {
        defect = defect.max((a - b).abs());
    }
    if defect > 1e-12 * scale.max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "descriptor factorization defect {defect:.3e} exceeds tolerance"
        )));
    }

    let s_inv = linalg::invert(&s, "descriptor S")?;
    let t_inv = linalg::invert(&t, "descriptor T")?;
    Ok(DescriptorReduction {
        dae: DescriptorDae {
            n: rank,
            m: size - rank,
            t_inv_t: t_inv.transpose(),
            s_inv_t: s_inv.transpose(),
            phi,
        },
        s,
        t,
        rank,
    })
}
