//! Plain-text checkpoints for a [`PinnAssembly`].
//!
//! The format is a line-oriented document: a version header, the assembly
//! configuration (mode, dimensions, step size, seed, normalization ranges),
//! the full Butcher tableau embedded between `begin tableau`/`end tableau`
//! so the file stands alone, and one `network` section per network with
//! every parameter matrix written row by row. Floats use 17 significant
//! digits, which round-trips f64 values exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{
    Activation, Mode, Network, NetworkConfig, OutputFeature, PinnAssembly,
};
use crate::tableau::ButcherTableau;
use crate::tensor::Tensor;

const VERSION_LINE: &str = "irknet checkpoint v1";

pub fn checkpoint_to_text(asm: &PinnAssembly) -> String {
    let mut out = String::new();
    out.push_str(VERSION_LINE);
    out.push('\n');
    out.push_str(&format!(
        "mode {}\n",
        match asm.mode {
            Mode::Unstacked => "unstacked",
            Mode::Stacked => "stacked",
        }
    ));
    out.push_str(&format!("n {}\n", asm.n()));
    out.push_str(&format!("m {}\n", asm.m()));
    out.push_str(&format!("step {:.16e}\n", asm.step));
    out.push_str(&format!("seed {}\n", asm.seed));
    out.push_str(&format!("norm_lo{}\n", join_floats(&asm.norm_lo)));
    out.push_str(&format!("norm_hi{}\n", join_floats(&asm.norm_hi)));
    out.push_str("begin tableau\n");
    out.push_str(&asm.tableau.to_text());
    out.push_str("end tableau\n");
    for (family, nets) in [("y", &asm.y_networks), ("z", &asm.z_networks)] {
        for (idx, net) in nets.iter().enumerate() {
            write_network(&mut out, family, idx, net);
        }
    }
    out.push_str("end checkpoint\n");
    out
}

fn join_floats(vals: &[f64]) -> String {
    let mut s = String::new();
    for v in vals {
        s.push_str(&format!(" {v:.16e}"));
    }
    s
}

fn write_network(out: &mut String, family: &str, idx: usize, net: &Network) {
    out.push_str(&format!("network {family} {idx}\n"));
    out.push_str(&format!("in_dim {}\n", net.cfg.in_dim));
    out.push_str(&format!("out_dim {}\n", net.cfg.out_dim));
    out.push_str(&format!("width {}\n", net.cfg.width));
    out.push_str(&format!("depth {}\n", net.cfg.depth));
    out.push_str(&format!(
        "activation {}\n",
        match net.cfg.activation {
            Activation::Sin => "sin",
        }
    ));
    out.push_str(&format!(
        "output_feature {}\n",
        match net.cfg.output_feature {
            OutputFeature::Identity => "identity",
            OutputFeature::Softplus => "softplus",
        }
    ));
    for (name, t) in named_matrices(net) {
        out.push_str(&format!("matrix {name} {} {}\n", t.rows(), t.cols()));
        for r in 0..t.rows() {
            out.push_str(join_floats(t.row(r)).trim_start());
            out.push('\n');
        }
    }
    out.push_str("end network\n");
}

fn named_matrices(net: &Network) -> Vec<(String, &Tensor)> {
    let mut v: Vec<(String, &Tensor)> = vec![
        ("w1".into(), &net.w1),
        ("b1".into(), &net.b1),
        ("w2".into(), &net.w2),
        ("b2".into(), &net.b2),
    ];
    for l in 0..net.gate_w.len() {
        v.push((format!("gate_w{l}"), &net.gate_w[l]));
        v.push((format!("gate_b{l}"), &net.gate_b[l]));
    }
    v.push(("w_out".into(), &net.w_out));
    v.push(("b_out".into(), &net.b_out));
    v
}

pub fn save_checkpoint(asm: &PinnAssembly, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_text(asm))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PinnAssembly> {
    checkpoint_from_text(&fs::read_to_string(path)?)
}

impl PinnAssembly {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: &Path) -> Result<PinnAssembly> {
        load_checkpoint(path)
    }
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Cursor<'a> {
        Cursor {
            lines: text
                .lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty())
                .collect(),
            pos: 0,
        }
    }

    fn fail<T>(&self, line: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            line,
            message: message.into(),
        })
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        if self.pos >= self.lines.len() {
            let last = self.lines.last().map(|(i, _)| *i).unwrap_or(0);
            return self.fail(last, "unexpected end of checkpoint");
        }
        let item = self.lines[self.pos];
        self.pos += 1;
        Ok(item)
    }

    /// Next line, which must start with `key`; returns the rest.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (ln, line) = self.next()?;
        match line.strip_prefix(key) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok((ln, rest.trim())),
            _ => self.fail(ln, format!("expected `{key}`, found `{line}`")),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let (ln, rest) = self.keyed(key)?;
        rest.parse()
            .map_err(|_| Error::Parse {
                line: ln,
                message: format!("`{key}` wants an unsigned integer, found `{rest}`"),
            })
    }

    fn keyed_f64(&mut self, key: &str) -> Result<f64> {
        let (ln, rest) = self.keyed(key)?;
        rest.parse()
            .map_err(|_| Error::Parse {
                line: ln,
                message: format!("`{key}` wants a real number, found `{rest}`"),
            })
    }

    fn keyed_floats(&mut self, key: &str, count: usize) -> Result<Vec<f64>> {
        let (ln, rest) = self.keyed(key)?;
        let vals = parse_floats(rest, ln)?;
        if vals.len() != count {
            return self.fail(ln, format!("`{key}` wants {count} values, found {}", vals.len()));
        }
        Ok(vals)
    }
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{tok}` is not a real number"),
            })
        })
        .collect()
}

pub fn checkpoint_from_text(text: &str) -> Result<PinnAssembly> {
    let mut cur = Cursor::new(text);
    let (ln, first) = cur.next()?;
    if first != VERSION_LINE {
        return cur.fail(ln, format!("expected `{VERSION_LINE}`, found `{first}`"));
    }
    let (mode_ln, mode_str) = cur.keyed("mode")?;
    let mode = match mode_str {
        "unstacked" => Mode::Unstacked,
        "stacked" => Mode::Stacked,
        other => return cur.fail(mode_ln, format!("unknown mode `{other}`")),
    };
    let n = cur.keyed_usize("n")?;
    let m = cur.keyed_usize("m")?;
    let step = cur.keyed_f64("step")?;
    let seed: u64 = {
        let (ln, rest) = cur.keyed("seed")?;
        rest.parse().map_err(|_| Error::Parse {
            line: ln,
            message: format!("`seed` wants an unsigned integer, found `{rest}`"),
        })?
    };
    let norm_lo = cur.keyed_floats("norm_lo", n)?;
    let norm_hi = cur.keyed_floats("norm_hi", n)?;

    let (beg_ln, _) = cur.keyed("begin tableau")?;
    let mut tab_text = String::new();
    loop {
        let (_, line) = cur.next()?;
        if line == "end tableau" {
            break;
        }
        tab_text.push_str(line);
        tab_text.push('\n');
    }
    let tableau = ButcherTableau::parse(&tab_text).map_err(|e| match e {
        // Re-anchor nested line numbers to this document.
        Error::Parse { line, message } => Error::Parse {
            line: beg_ln + line,
            message,
        },
        other => other,
    })?;
    let slots = tableau.nu + 1;

    let mut y_networks = Vec::new();
    let mut z_networks = Vec::new();
    loop {
        let (ln, line) = cur.next()?;
        if line == "end checkpoint" {
            break;
        }
        let rest = match line.strip_prefix("network ") {
            Some(rest) => rest,
            None => return cur.fail(ln, format!("expected `network` or `end checkpoint`, found `{line}`")),
        };
        let mut parts = rest.split_whitespace();
        let family = parts.next().unwrap_or("");
        let idx: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                line: ln,
                message: "network header wants `network <y|z> <index>`".into(),
            })?;
        let (target, feature) = match family {
            "y" => (&mut y_networks, OutputFeature::Identity),
            "z" => (&mut z_networks, OutputFeature::Softplus),
            other => return cur.fail(ln, format!("unknown network family `{other}`")),
        };
        if idx != target.len() {
            return cur.fail(ln, format!("network index {idx} out of order"));
        }
        let net = parse_network(&mut cur, n, feature)?;
        target.push(net);
    }

    // Consistency checks before assembling.
    let ctx = |msg: String| Error::Parse { line: 0, message: msg };
    if !(step.is_finite() && step > 0.0) {
        return Err(ctx(format!("step size must be positive, found {step}")));
    }
    if n == 0 || m == 0 {
        return Err(ctx("dimensions n and m must be positive".into()));
    }
    for i in 0..n {
        if !(norm_lo[i].is_finite() && norm_hi[i].is_finite() && norm_lo[i] < norm_hi[i]) {
            return Err(ctx(format!(
                "normalization range [{}, {}] is not a finite nonempty interval",
                norm_lo[i], norm_hi[i]
            )));
        }
    }
    let (want_y, want_z) = match mode {
        Mode::Unstacked => (1, 1),
        Mode::Stacked => (n, m),
    };
    if y_networks.len() != want_y || z_networks.len() != want_z {
        return Err(ctx(format!(
            "mode wants {want_y} y-networks and {want_z} z-networks, found {} and {}",
            y_networks.len(),
            z_networks.len()
        )));
    }
    for (net, want_out) in y_networks
        .iter()
        .map(|net| (net, if mode == Mode::Unstacked { n * slots } else { slots }))
        .chain(
            z_networks
                .iter()
                .map(|net| (net, if mode == Mode::Unstacked { m * slots } else { slots })),
        )
    {
        if net.cfg.out_dim != want_out {
            return Err(ctx(format!(
                "network output width {} does not match {} stage slots",
                net.cfg.out_dim, slots
            )));
        }
    }

    Ok(PinnAssembly {
        mode,
        y_networks,
        z_networks,
        tableau,
        step,
        norm_lo,
        norm_hi,
        seed,
    })
}

fn parse_network(cur: &mut Cursor, n: usize, feature: OutputFeature) -> Result<Network> {
    let in_dim = cur.keyed_usize("in_dim")?;
    let out_dim = cur.keyed_usize("out_dim")?;
    let width = cur.keyed_usize("width")?;
    let depth = cur.keyed_usize("depth")?;
    let (act_ln, act) = cur.keyed("activation")?;
    let activation = match act {
        "sin" => Activation::Sin,
        other => return cur.fail(act_ln, format!("unknown activation `{other}`")),
    };
    let (feat_ln, feat) = cur.keyed("output_feature")?;
    let parsed_feature = match feat {
        "identity" => OutputFeature::Identity,
        "softplus" => OutputFeature::Softplus,
        other => return cur.fail(feat_ln, format!("unknown output feature `{other}`")),
    };
    if parsed_feature != feature {
        return cur.fail(
            feat_ln,
            format!("this network family requires the {} output feature", match feature {
                OutputFeature::Identity => "identity",
                OutputFeature::Softplus => "softplus",
            }),
        );
    }
    if in_dim != n {
        return cur.fail(act_ln, format!("network in_dim {in_dim} must equal n = {n}"));
    }
    if in_dim == 0 || out_dim == 0 || width == 0 || depth == 0 {
        return cur.fail(act_ln, "network dimensions must be positive");
    }

    let mut expect: Vec<(String, usize, usize)> = vec![
        ("w1".into(), in_dim, width),
        ("b1".into(), 1, width),
        ("w2".into(), in_dim, width),
        ("b2".into(), 1, width),
        ("gate_w0".into(), in_dim, width),
        ("gate_b0".into(), 1, width),
    ];
    for l in 1..=depth {
        expect.push((format!("gate_w{l}"), width, width));
        expect.push((format!("gate_b{l}"), 1, width));
    }
    expect.push(("w_out".into(), width, out_dim));
    expect.push(("b_out".into(), 1, out_dim));

    let mut mats = Vec::with_capacity(expect.len());
    for (name, rows, cols) in &expect {
        let (ln, rest) = cur.keyed("matrix")?;
        let mut parts = rest.split_whitespace();
        let got_name = parts.next().unwrap_or("");
        let got_rows: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
        let got_cols: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
        if got_name != name || got_rows != *rows || got_cols != *cols {
            return cur.fail(
                ln,
                format!("expected `matrix {name} {rows} {cols}`, found `matrix {rest}`"),
            );
        }
        let mut t = Tensor::zeros(*rows, *cols);
        for r in 0..*rows {
            let (row_ln, row_line) = cur.next()?;
            let vals = parse_floats(row_line, row_ln)?;
            if vals.len() != *cols {
                return cur.fail(row_ln, format!("row wants {cols} values, found {}", vals.len()));
            }
            t.row_mut(r).copy_from_slice(&vals);
        }
        mats.push(t);
    }
    let (end_ln, end) = cur.next()?;
    if end != "end network" {
        return cur.fail(end_ln, format!("expected `end network`, found `{end}`"));
    }

    let mut it = mats.into_iter();
    let w1 = it.next().unwrap();
    let b1 = it.next().unwrap();
    let w2 = it.next().unwrap();
    let b2 = it.next().unwrap();
    let mut gate_w = Vec::with_capacity(depth + 1);
    let mut gate_b = Vec::with_capacity(depth + 1);
    for _ in 0..=depth {
        gate_w.push(it.next().unwrap());
        gate_b.push(it.next().unwrap());
    }
    let w_out = it.next().unwrap();
    let b_out = it.next().unwrap();
    Ok(Network {
        cfg: NetworkConfig {
            in_dim,
            out_dim,
            width,
            depth,
            activation,
            output_feature: parsed_feature,
        },
        w1,
        b1,
        w2,
        b2,
        gate_w,
        gate_b,
        w_out,
        b_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetSpec;
    use crate::tableau::ButcherTableau;

    fn ranges(n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| (-1.0 - i as f64, 1.0 + i as f64)).collect()
    }

    fn sample_unstacked() -> PinnAssembly {
        PinnAssembly::unstacked(
            4,
            1,
            NetSpec { width: 6, depth: 2 },
            NetSpec { width: 5, depth: 1 },
            &ranges(4),
            ButcherTableau::gauss(3).unwrap(),
            0.1,
            12,
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_is_value_exact() {
        let mut asm = sample_unstacked();
        // Exercise awkward values: subnormal, huge, negative, third.
        {
            let mut params = asm.params_mut();
            let data = params[0].data_mut();
            data[0] = f64::MIN_POSITIVE / 8.0;
            data[1] = -1.0 / 3.0;
            data[2] = 1.234567890123456e300;
            data[3] = -0.0;
        }
        let text = checkpoint_to_text(&asm);
        let back = checkpoint_from_text(&text).unwrap();
        assert_eq!(asm, back);
        assert_eq!(back.params()[0].data()[0], f64::MIN_POSITIVE / 8.0);
    }

    #[test]
    fn file_round_trip_stacked() {
        let asm = PinnAssembly::stacked(
            3,
            2,
            &ranges(3),
            ButcherTableau::backward_euler(),
            0.25,
            77,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        asm.save(&path).unwrap();
        let back = PinnAssembly::load(&path).unwrap();
        assert_eq!(asm, back);
        assert_eq!(back.seed, 77);
        assert_eq!(back.step, 0.25);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let err = checkpoint_from_text("bogus header\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        let text = checkpoint_to_text(&sample_unstacked());
        let cut = &text[..text.len() / 2];
        let err = checkpoint_from_text(cut).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn rejects_tampered_feature_and_shape() {
        let text = checkpoint_to_text(&sample_unstacked());
        let tampered = text.replacen("output_feature softplus", "output_feature identity", 1);
        let err = checkpoint_from_text(&tampered).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("softplus"), "{msg}");

        let tampered = text.replacen("matrix w1 4 6", "matrix w1 4 7", 1);
        assert!(checkpoint_from_text(&tampered).is_err());
    }

    #[test]
    fn reports_line_numbers_for_bad_floats() {
        let text = checkpoint_to_text(&sample_unstacked());
        let tampered = text.replacen("norm_lo", "norm_lo oops", 1);
        let err = checkpoint_from_text(&tampered).unwrap_err();
        match err {
            Error::Parse { line, ref message } => {
                assert_eq!(line, 7, "{message}");
                assert!(message.contains("oops"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
