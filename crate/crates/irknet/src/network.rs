//! Gated fully-connected networks and their assembly into a stage surrogate.
//!
//! Each network follows the forward pass
//!
//! ```text
//! U      = phi(X W1 + b1)
//! V      = phi(X W2 + b2)
//! H(1)   = phi(X Wz0 + bz0)
//! Z(k)   = phi(H(k) Wzk + bzk)              k = 1..d
//! H(k+1) = (1 - Z(k)) .* U + Z(k) .* V      k = 1..d
//! out    = H(d+1) W + b
//! ```
//!
//! with phi = sin throughout, so the two encodings U and V are blended by a
//! data-dependent gate at every layer. The gate chain therefore carries
//! d + 1 weight pairs: one input embedding producing H(1) and one per gate.
//! An optional softplus output feature keeps predicted algebraic states
//! strictly positive.
//!
//! A [`PinnAssembly`] bundles the networks that predict all collocation
//! stages of one implicit Runge-Kutta step: given y_n it produces the stage
//! values (slots 1..nu) and the step endpoint (slot nu+1) for both the
//! dynamic and the algebraic states.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tableau::ButcherTableau;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFeature {
    Identity,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub output_feature: OutputFeature,
}

impl NetworkConfig {
    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "network dimensions must be positive, got in {}, out {}, width {}, depth {}",
                self.in_dim, self.out_dim, self.width, self.depth
            )));
        }
        Ok(())
    }
}

/// One gated network. Weight layout per [`NetworkConfig`]: `w1`/`w2` are
/// `in_dim x width`, `gate_w[0]` is `in_dim x width`, `gate_w[1..=depth]`
/// are `width x width`, and `w_out` is `width x out_dim`. Biases are row
/// vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub gate_w: Vec<Tensor>,
    pub gate_b: Vec<Tensor>,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Glorot-normal initialization: every weight of shape (fan_in, fan_out) is
/// i.i.d. N(0, 2/(fan_in+fan_out)); biases start at zero. Deterministic for
/// a fixed seed.
pub fn init_glorot_normal(cfg: NetworkConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| -> Tensor {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = dist.sample(&mut rng);
        }
        t
    };

    let (i, w, d, o) = (cfg.in_dim, cfg.width, cfg.depth, cfg.out_dim);
    let w1 = draw(i, w);
    let w2 = draw(i, w);
    let mut gate_w = vec![draw(i, w)];
    for _ in 1..=d {
        gate_w.push(draw(w, w));
    }
    let w_out = draw(w, o);
    Ok(Network {
        cfg,
        w1,
        b1: Tensor::zeros(1, w),
        w2,
        b2: Tensor::zeros(1, w),
        gate_w,
        gate_b: vec![Tensor::zeros(1, w); d + 1],
        w_out,
        b_out: Tensor::zeros(1, o),
    })
}

impl Network {
    /// Parameters in canonical order:
    /// w1, b1, w2, b2, gate_w[0], gate_b[0], ..., gate_w[d], gate_b[d],
    /// w_out, b_out.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.w1, &self.b1, &self.w2, &self.b2];
        for (w, b) in self.gate_w.iter().zip(self.gate_b.iter()) {
            v.push(w);
            v.push(b);
        }
        v.push(&self.w_out);
        v.push(&self.b_out);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2];
        for (w, b) in self.gate_w.iter_mut().zip(self.gate_b.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.w_out);
        v.push(&mut self.b_out);
        v
    }

    pub fn param_count(&self) -> usize {
        2 * self.cfg.depth + 8
    }

    /// Insert all parameters into the tape in canonical order, as leaves
    /// (trainable) or constants (frozen).
    pub fn insert_params(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Forward pass consuming previously inserted parameter nodes.
    pub fn forward_with(&self, tape: &mut Tape, x: NodeId, ids: &[NodeId]) -> Result<NodeId> {
        if ids.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "forward expects {} parameter nodes, got {}",
                self.param_count(),
                ids.len()
            )));
        }
        if tape.value(x).cols() != self.cfg.in_dim {
            return Err(Error::ShapeMismatch {
                op: "network forward",
                left: tape.value(x).shape().to_vec(),
                right: vec![tape.value(x).rows(), self.cfg.in_dim],
            });
        }
        let act = |tape: &mut Tape, n: NodeId| match self.cfg.activation {
            Activation::Sin => tape.sin(n),
        };

        let ua = tape.affine(x, ids[0], ids[1])?;
        let u = act(tape, ua);
        let va = tape.affine(x, ids[2], ids[3])?;
        let v = act(tape, va);
        let ha = tape.affine(x, ids[4], ids[5])?;
        let mut h = act(tape, ha);
        let vu = tape.sub(v, u)?;
        for l in 1..=self.cfg.depth {
            let za = tape.affine(h, ids[4 + 2 * l], ids[5 + 2 * l])?;
            let z = act(tape, za);
            // (1 - Z) .* U + Z .* V = U + Z .* (V - U)
            let zv = tape.mul(z, vu)?;
            h = tape.add(u, zv)?;
        }
        let raw = tape.affine(h, ids[2 * self.cfg.depth + 6], ids[2 * self.cfg.depth + 7])?;
        Ok(match self.cfg.output_feature {
            OutputFeature::Identity => raw,
            OutputFeature::Softplus => tape.softplus(raw),
        })
    }

    /// Forward pass on a scratch tape with frozen parameters.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let ids = self.insert_params(&mut tape, false);
        let out = self.forward_with(&mut tape, xn, &ids)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One network per state family: a single network emits all dynamic
    /// states, a second all algebraic states.
    Unstacked,
    /// One scalar network per state component, each 25 wide and 4 deep.
    Stacked,
}

/// Width/depth of one network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub width: usize,
    pub depth: usize,
}

pub(crate) const STACKED_WIDTH: usize = 25;
pub(crate) const STACKED_DEPTH: usize = 4;

/// Networks predicting every collocation stage of one implicit Runge-Kutta
/// step. Inputs are normalized coordinatewise to [-1, 1] using the stored
/// training ranges before any network sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnAssembly {
    pub mode: Mode,
    pub y_networks: Vec<Network>,
    pub z_networks: Vec<Network>,
    pub tableau: ButcherTableau,
    /// Step size h of the collocation step the networks were trained for.
    pub step: f64,
    pub norm_lo: Vec<f64>,
    pub norm_hi: Vec<f64>,
    /// Seed the parameters were initialized from, kept for provenance.
    pub seed: u64,
}

/// Stage predictions: `ys[j]` / `zs[j]` hold slot j for the whole batch,
/// where slots 0..nu-1 are the collocation stages and slot nu is the step
/// endpoint (y_{n+1}, z_{n+1}).
#[derive(Clone, Debug, PartialEq)]
pub struct StagePrediction {
    pub ys: Vec<Tensor>,
    pub zs: Vec<Tensor>,
}

/// Tape nodes for the same layout, plus every parameter leaf in canonical
/// order (y networks first, then z networks, each in its own canonical
/// parameter order).
pub struct StageNodes {
    pub ys: Vec<NodeId>,
    pub zs: Vec<NodeId>,
    pub params: Vec<NodeId>,
}

fn check_ranges(n: usize, ranges: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    if ranges.len() != n {
        return Err(Error::InvalidArgument(format!(
            "need one normalization range per dynamic state ({n}), got {}",
            ranges.len()
        )));
    }
    for &(lo, hi) in ranges {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "normalization range [{lo}, {hi}] is not a finite nonempty interval"
            )));
        }
    }
    Ok((
        ranges.iter().map(|r| r.0).collect(),
        ranges.iter().map(|r| r.1).collect(),
    ))
}

impl PinnAssembly {
    /// One network for all dynamic states and one for all algebraic states.
    pub fn unstacked(
        n: usize,
        m: usize,
        y_spec: NetSpec,
        z_spec: NetSpec,
        ranges: &[(f64, f64)],
        tableau: ButcherTableau,
        step: f64,
        seed: u64,
    ) -> Result<PinnAssembly> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "assembly needs at least one dynamic and one algebraic state".into(),
            ));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive and finite, got {step}"
            )));
        }
        let (norm_lo, norm_hi) = check_ranges(n, ranges)?;
        let slots = tableau.nu + 1;
        let y_net = init_glorot_normal(
            NetworkConfig {
                in_dim: n,
                out_dim: n * slots,
                width: y_spec.width,
                depth: y_spec.depth,
                activation: Activation::Sin,
                output_feature: OutputFeature::Identity,
            },
            seed,
        )?;
        let z_net = init_glorot_normal(
            NetworkConfig {
                in_dim: n,
                out_dim: m * slots,
                width: z_spec.width,
                depth: z_spec.depth,
                activation: Activation::Sin,
                output_feature: OutputFeature::Softplus,
            },
            seed + 1,
        )?;
        Ok(PinnAssembly {
            mode: Mode::Unstacked,
            y_networks: vec![y_net],
            z_networks: vec![z_net],
            tableau,
            step,
            norm_lo,
            norm_hi,
            seed,
        })
    }

    /// One scalar network per state component, all 25 wide and 4 deep.
    /// Network i takes seed + i in canonical order (dynamic components
    /// first).
    pub fn stacked(
        n: usize,
        m: usize,
        ranges: &[(f64, f64)],
        tableau: ButcherTableau,
        step: f64,
        seed: u64,
    ) -> Result<PinnAssembly> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "assembly needs at least one dynamic and one algebraic state".into(),
            ));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive and finite, got {step}"
            )));
        }
        let (norm_lo, norm_hi) = check_ranges(n, ranges)?;
        let slots = tableau.nu + 1;
        let make = |feature: OutputFeature, seed: u64| {
            init_glorot_normal(
                NetworkConfig {
                    in_dim: n,
                    out_dim: slots,
                    width: STACKED_WIDTH,
                    depth: STACKED_DEPTH,
                    activation: Activation::Sin,
                    output_feature: feature,
                },
                seed,
            )
        };
        let mut y_networks = Vec::with_capacity(n);
        for i in 0..n {
            y_networks.push(make(OutputFeature::Identity, seed + i as u64)?);
        }
        let mut z_networks = Vec::with_capacity(m);
        for j in 0..m {
            z_networks.push(make(OutputFeature::Softplus, seed + (n + j) as u64)?);
        }
        Ok(PinnAssembly {
            mode: Mode::Stacked,
            y_networks,
            z_networks,
            tableau,
            step,
            norm_lo,
            norm_hi,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        match self.mode {
            Mode::Unstacked => self.y_networks[0].cfg.in_dim,
            Mode::Stacked => self.y_networks.len(),
        }
    }

    pub fn m(&self) -> usize {
        let slots = self.tableau.nu + 1;
        match self.mode {
            Mode::Unstacked => self.z_networks[0].cfg.out_dim / slots,
            Mode::Stacked => self.z_networks.len(),
        }
    }

    /// Affine map taking each coordinate range onto [-1, 1], as a (diagonal
    /// weight, bias) pair usable with the tape's affine op.
    pub(crate) fn norm_affine(&self) -> (Tensor, Tensor) {
        let n = self.norm_lo.len();
        let mut w = Tensor::zeros(n, n);
        let mut b = Tensor::zeros(1, n);
        for i in 0..n {
            let (lo, hi) = (self.norm_lo[i], self.norm_hi[i]);
            w.set(i, i, 2.0 / (hi - lo));
            b.set(0, i, -(hi + lo) / (hi - lo));
        }
        (w, b)
    }

    #[cfg(test)]
    pub(crate) fn normalized(&self, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(y.clone());
        let xn = self.normalize_on(&mut tape, x)?;
        Ok(tape.value(xn).clone())
    }

    fn normalize_on(&self, tape: &mut Tape, y: NodeId) -> Result<NodeId> {
        let (w, b) = self.norm_affine();
        let wn = tape.constant(w);
        let bn = tape.constant(b);
        tape.affine(y, wn, bn)
    }

    /// Parameters of every network in canonical order: all y networks, then
    /// all z networks.
    pub fn params(&self) -> Vec<&Tensor> {
        self.y_networks
            .iter()
            .chain(self.z_networks.iter())
            .flat_map(|net| net.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for net in self.y_networks.iter_mut().chain(self.z_networks.iter_mut()) {
            v.extend(net.params_mut());
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.y_networks
            .iter()
            .chain(self.z_networks.iter())
            .map(|net| net.param_count())
            .sum()
    }

    /// Total scalar parameter count across all networks.
    pub fn weight_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Build the stage forward passes on `tape`, inputs taken from the node
    /// `y_n` (batch x n). With `trainable` the parameters become leaves and
    /// their node ids are reported for gradient lookups.
    pub fn stage_nodes(&self, tape: &mut Tape, y_n: NodeId, trainable: bool) -> Result<StageNodes> {
        let (n, m) = (self.n(), self.m());
        if tape.value(y_n).cols() != n {
            return Err(Error::ShapeMismatch {
                op: "stage prediction",
                left: tape.value(y_n).shape().to_vec(),
                right: vec![tape.value(y_n).rows(), n],
            });
        }
        let x = self.normalize_on(tape, y_n)?;
        let slots = self.tableau.nu + 1;
        let mut params = Vec::with_capacity(self.param_count());

        let family = |tape: &mut Tape,
                          nets: &[Network],
                          dim: usize,
                          params: &mut Vec<NodeId>|
         -> Result<Vec<NodeId>> {
            let mut outs = Vec::with_capacity(nets.len());
            for net in nets {
                let ids = net.insert_params(tape, trainable);
                outs.push(net.forward_with(tape, x, &ids)?);
                params.extend(ids);
            }
            // Slot j of the family output: unstacked networks emit all
            // components of a slot contiguously; stacked networks emit one
            // column per slot and are concatenated across components.
            let mut slots_out = Vec::with_capacity(slots);
            for j in 0..slots {
                let slot = match self.mode {
                    Mode::Unstacked => tape.slice_cols(outs[0], j * dim, dim)?,
                    Mode::Stacked => {
                        let cols: Vec<NodeId> = outs
                            .iter()
                            .map(|&o| tape.slice_cols(o, j, 1))
                            .collect::<Result<_>>()?;
                        tape.concat_cols(&cols)?
                    }
                };
                slots_out.push(slot);
            }
            Ok(slots_out)
        };

        let ys = family(tape, &self.y_networks, n, &mut params)?;
        let zs = family(tape, &self.z_networks, m, &mut params)?;
        Ok(StageNodes { ys, zs, params })
    }

    /// Predict all stage values for a batch of step inputs.
    pub fn predict_stages(&self, y_n: &Tensor) -> Result<StagePrediction> {
        let mut tape = Tape::new();
        let input = tape.constant(y_n.clone());
        let nodes = self.stage_nodes(&mut tape, input, false)?;
        Ok(StagePrediction {
            ys: nodes.ys.iter().map(|&id| tape.value(id).clone()).collect(),
            zs: nodes.zs.iter().map(|&id| tape.value(id).clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau;

    fn tiny_cfg(feature: OutputFeature) -> NetworkConfig {
        NetworkConfig {
            in_dim: 1,
            out_dim: 1,
            width: 1,
            depth: 1,
            activation: Activation::Sin,
            output_feature: feature,
        }
    }

    fn zeroed(cfg: NetworkConfig) -> Network {
        let mut net = init_glorot_normal(cfg, 0).unwrap();
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        net
    }

    fn ones(cfg: NetworkConfig) -> Network {
        let mut net = zeroed(cfg);
        net.w1 = Tensor::filled(cfg.in_dim, cfg.width, 1.0);
        net.w2 = Tensor::filled(cfg.in_dim, cfg.width, 1.0);
        net.gate_w[0] = Tensor::filled(cfg.in_dim, cfg.width, 1.0);
        for l in 1..=cfg.depth {
            net.gate_w[l] = Tensor::filled(cfg.width, cfg.width, 1.0);
        }
        net.w_out = Tensor::filled(cfg.width, cfg.out_dim, 1.0);
        net
    }

    #[test]
    fn glorot_biases_zero_and_deterministic() {
        let cfg = NetworkConfig {
            in_dim: 3,
            out_dim: 5,
            width: 7,
            depth: 2,
            activation: Activation::Sin,
            output_feature: OutputFeature::Identity,
        };
        let a = init_glorot_normal(cfg, 42).unwrap();
        let b = init_glorot_normal(cfg, 42).unwrap();
        let c = init_glorot_normal(cfg, 43).unwrap();
        assert!(a.b1.data().iter().all(|&v| v == 0.0));
        assert!(a.gate_b.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(a.b_out.data().iter().all(|&v| v == 0.0));
        assert_eq!(a, b);
        assert_ne!(a.w1, c.w1);
        // gate chain: one input embedding plus depth gate matrices
        assert_eq!(a.gate_w.len(), 3);
        assert_eq!(a.gate_w[0].shape(), [3, 7]);
        assert_eq!(a.gate_w[1].shape(), [7, 7]);
    }

    #[test]
    fn glorot_variance_matches_fan_rule() {
        // A 200x200 gate matrix gives 40000 samples of N(0, 2/400).
        let cfg = NetworkConfig {
            in_dim: 3,
            out_dim: 2,
            width: 200,
            depth: 1,
            activation: Activation::Sin,
            output_feature: OutputFeature::Identity,
        };
        let net = init_glorot_normal(cfg, 7).unwrap();
        let data = net.gate_w[1].data();
        let mean: f64 = data.iter().sum::<f64>() / data.len() as f64;
        let var: f64 =
            data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64;
        let expect = 2.0 / 400.0;
        assert!(
            (var - expect).abs() <= 0.15 * expect,
            "sample variance {var} vs {expect}"
        );
    }

    #[test]
    fn zero_parameters_propagate_feature() {
        let x = Tensor::from_vec(2, 1, vec![0.4, -3.0]).unwrap();
        let out = zeroed(tiny_cfg(OutputFeature::Identity)).forward(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let out = zeroed(tiny_cfg(OutputFeature::Softplus)).forward(&x).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(out.data().iter().all(|&v| (v - ln2).abs() < 1e-16));
    }

    #[test]
    fn hand_recursion_single_gate() {
        // All weights one, biases zero, scalar everything: U = V = sin(x),
        // so the gate is inert and the output is sin(x).
        let net = ones(tiny_cfg(OutputFeature::Identity));
        let out = net.forward(&Tensor::scalar(0.3)).unwrap();
        assert!((out.get(0, 0) - 0.3f64.sin()).abs() < 1e-16);
        assert!((out.get(0, 0) - 0.29552020666133955).abs() < 1e-14);
    }

    #[test]
    fn hand_recursion_distinct_encodings() {
        // W2 = 2 makes U != V, exposing the full recursion:
        // U = sin(x), V = sin(2x), H1 = sin(x), Z1 = sin(H1),
        // out = (1 - Z1) U + Z1 V.
        let mut net = ones(tiny_cfg(OutputFeature::Identity));
        net.w2 = Tensor::scalar(2.0);
        let x = 0.3f64;
        let (u, v) = (x.sin(), (2.0 * x).sin());
        let z1 = x.sin().sin();
        let expect = (1.0 - z1) * u + z1 * v;
        let out = net.forward(&Tensor::scalar(x)).unwrap();
        assert!((out.get(0, 0) - expect).abs() < 1e-15, "{}", out.get(0, 0));
    }

    #[test]
    fn equal_encoders_make_gates_inert() {
        let cfg = NetworkConfig {
            in_dim: 2,
            out_dim: 3,
            width: 6,
            depth: 3,
            activation: Activation::Sin,
            output_feature: OutputFeature::Identity,
        };
        let mut a = init_glorot_normal(cfg, 11).unwrap();
        a.w2 = a.w1.clone();
        a.b2 = a.b1.clone();
        let mut b = a.clone();
        // Completely different gate chain must not matter once U = V.
        let other = init_glorot_normal(cfg, 99).unwrap();
        b.gate_w = other.gate_w.clone();
        let x = Tensor::from_rows(&[vec![0.2, -0.7], vec![1.5, 0.3]]).unwrap();
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = zeroed(tiny_cfg(OutputFeature::Identity));
        let err = net.forward(&Tensor::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    fn ranges4() -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0), (-0.1, 0.1), (-0.1, 0.1)]
    }

    #[test]
    fn assembly_shapes_and_feature_defaults() {
        let tab = tableau::ButcherTableau::gauss(1).unwrap();
        let asm = PinnAssembly::unstacked(
            4,
            1,
            NetSpec { width: 8, depth: 2 },
            NetSpec { width: 6, depth: 2 },
            &ranges4(),
            tab,
            0.1,
            5,
        )
        .unwrap();
        assert_eq!(asm.n(), 4);
        assert_eq!(asm.m(), 1);
        let pred = asm.predict_stages(&Tensor::zeros(3, 4)).unwrap();
        assert_eq!(pred.ys.len(), 2);
        assert_eq!(pred.zs.len(), 2);
        assert_eq!(pred.ys[0].shape(), [3, 4]);
        assert_eq!(pred.zs[1].shape(), [3, 1]);
        assert_eq!(asm.y_networks[0].cfg.output_feature, OutputFeature::Identity);
        assert_eq!(asm.z_networks[0].cfg.output_feature, OutputFeature::Softplus);
    }

    #[test]
    fn zeroed_assembly_predicts_zero_and_ln2() {
        let tab = tableau::ButcherTableau::gauss(2).unwrap();
        let mut asm = PinnAssembly::unstacked(
            4,
            1,
            NetSpec { width: 5, depth: 1 },
            NetSpec { width: 5, depth: 1 },
            &ranges4(),
            tab,
            0.1,
            5,
        )
        .unwrap();
        for p in asm.params_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        let pred = asm.predict_stages(&Tensor::filled(2, 4, 0.05)).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for slot in &pred.ys {
            assert!(slot.data().iter().all(|&v| v == 0.0));
        }
        for slot in &pred.zs {
            assert!(slot.data().iter().all(|&v| (v - ln2).abs() < 1e-16));
        }
    }

    #[test]
    fn stacked_uses_fixed_scalar_networks() {
        let tab = tableau::ButcherTableau::gauss(3).unwrap();
        let asm = PinnAssembly::stacked(4, 1, &ranges4(), tab, 0.05, 9).unwrap();
        assert_eq!(asm.y_networks.len(), 4);
        assert_eq!(asm.z_networks.len(), 1);
        for net in asm.y_networks.iter().chain(asm.z_networks.iter()) {
            assert_eq!(net.cfg.width, 25);
            assert_eq!(net.cfg.depth, 4);
            assert_eq!(net.cfg.out_dim, 4);
            assert_eq!(net.cfg.in_dim, 4);
        }
        let pred = asm.predict_stages(&Tensor::zeros(2, 4)).unwrap();
        assert_eq!(pred.ys.len(), 4);
        assert_eq!(pred.ys[0].shape(), [2, 4]);
        assert_eq!(pred.zs[0].shape(), [2, 1]);
    }

    #[test]
    fn normalization_maps_ranges_onto_unit_interval() {
        let tab = tableau::ButcherTableau::backward_euler();
        let asm = PinnAssembly::unstacked(
            2,
            1,
            NetSpec { width: 4, depth: 1 },
            NetSpec { width: 4, depth: 1 },
            &[(-2.0, 4.0), (0.5, 1.5)],
            tab,
            0.1,
            1,
        )
        .unwrap();
        let pts = Tensor::from_rows(&[vec![-2.0, 0.5], vec![4.0, 1.5], vec![1.0, 1.0]]).unwrap();
        let normed = asm.normalized(&pts).unwrap();
        let expect =
            Tensor::from_rows(&[vec![-1.0, -1.0], vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        for (a, b) in normed.data().iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn assembly_rejects_bad_ranges_and_step() {
        let tab = tableau::ButcherTableau::backward_euler();
        let spec = NetSpec { width: 4, depth: 1 };
        let err = PinnAssembly::unstacked(2, 1, spec, spec, &[(0.0, 0.0), (0.0, 1.0)], tab, 0.1, 1);
        assert!(err.is_err());
        let tab = tableau::ButcherTableau::backward_euler();
        let err = PinnAssembly::unstacked(2, 1, spec, spec, &[(0.0, 1.0), (0.0, 1.0)], tab, 0.0, 1);
        assert!(err.is_err());
    }

    #[test]
    fn stage_nodes_report_all_parameter_leaves() {
        let tab = tableau::ButcherTableau::gauss(1).unwrap();
        let asm = PinnAssembly::unstacked(
            4,
            1,
            NetSpec { width: 5, depth: 2 },
            NetSpec { width: 5, depth: 2 },
            &ranges4(),
            tab,
            0.1,
            3,
        )
        .unwrap();
        let mut tape = Tape::new();
        let input = tape.constant(Tensor::zeros(2, 4));
        let nodes = asm.stage_nodes(&mut tape, input, true).unwrap();
        assert_eq!(nodes.params.len(), asm.param_count());
        assert_eq!(nodes.params.len(), 2 * (2 * 2 + 8));
        // Leaf values must mirror params() in canonical order.
        for (id, p) in nodes.params.iter().zip(asm.params()) {
            assert_eq!(tape.value(*id), p);
        }
        // Gradients flow to every parameter from a scalar of the outputs.
        let mut summed = Vec::new();
        for &slot in nodes.ys.iter().chain(nodes.zs.iter()) {
            summed.push(tape.sum(slot));
        }
        let total = tape.concat_cols(&summed).unwrap();
        let root = tape.sum(total);
        let grads = tape.backward(root).unwrap();
        let reached = nodes
            .params
            .iter()
            .filter(|&&id| grads.wrt(id).is_some())
            .count();
        assert_eq!(reached, nodes.params.len());
    }
}
