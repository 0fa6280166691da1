//! Experiment configuration: a flat, sectioned key-value text format.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! list = a, b, c
//! ```
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected with their line number; the informational
//! [run] section written into manifests is the one exception, which is
//! what lets a manifest be fed back in as a configuration.

use irknet::{
    ButcherTableau, Error, LinearTestDae, Mode, NetSpec, PinnAssembly, PlateauConfig,
    Result, SemiExplicitDae, ThreeBus, ThreeBusParams, TrainConfig,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    used: bool,
}

/// Parsed but untyped configuration: ordered entries with line numbers.
pub struct RawConfig {
    entries: Vec<Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            };
            let trimmed = stripped.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(inner) = trimmed.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return Err(parse_err(line, format!("unterminated section header '{trimmed}'")));
                };
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(parse_err(line, "empty section name"));
                }
                continue;
            }
            let Some(eq) = trimmed.find('=') else {
                return Err(parse_err(
                    line,
                    format!("expected 'key = value', got '{trimmed}'"),
                ));
            };
            let key = trimmed[..eq].trim().to_string();
            let value = trimmed[eq + 1..].trim().to_string();
            if key.is_empty() {
                return Err(parse_err(line, "missing key before '='"));
            }
            if section.is_empty() {
                return Err(parse_err(
                    line,
                    format!("key '{key}' appears before any [section] header"),
                ));
            }
            if let Some(prev) = entries
                .iter()
                .find(|e| e.section == section && e.key == key)
            {
                return Err(parse_err(
                    line,
                    format!(
                        "duplicate key '{key}' in [{section}] (first set on line {})",
                        prev.line
                    ),
                ));
            }
            entries.push(Entry {
                section: section.clone(),
                key,
                value,
                line,
            used: false,
            });
        }
        Ok(RawConfig { entries })
    }

    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("reading config {}: {e}", path.display()),
            ))
        })?;
        RawConfig::parse(&text)
    }

    /// Apply a `section.key=value` override, replacing any file entry.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let bad = || {
            parse_err(
                0,
                format!("override '{spec}' must look like section.key=value"),
            )
        };
        let eq = spec.find('=').ok_or_else(bad)?;
        let (path, value) = (spec[..eq].trim(), spec[eq + 1..].trim());
        let dot = path.find('.').ok_or_else(bad)?;
        let (section, key) = (path[..dot].trim(), path[dot + 1..].trim());
        if section.is_empty() || key.is_empty() {
            return Err(bad());
        }
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.section == section && e.key == key)
        {
            e.value = value.to_string();
            e.line = 0;
        } else {
            self.entries.push(Entry {
                section: section.to_string(),
                key: key.to_string(),
                value: value.to_string(),
                line: 0,
                used: false,
            });
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        for e in &mut self.entries {
            if e.section == section && e.key == key {
                e.used = true;
                return Some((e.value.clone(), e.line));
            }
        }
        None
    }

    /// Every key must have been consumed, except the informational [run]
    /// section that manifests carry.
    fn finish(&self) -> Result<()> {
        for e in &self.entries {
            if !e.used && e.section != "run" {
                return Err(parse_err(
                    e.line,
                    format!("unknown key '{}' in [{}]", e.key, e.section),
                ));
            }
        }
        Ok(())
    }
}

fn get_f64(v: &str, line: usize, key: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| parse_err(line, format!("key '{key}' expects a number, got '{v}'")))
}

fn get_usize(v: &str, line: usize, key: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| {
        parse_err(
            line,
            format!("key '{key}' expects a non-negative integer, got '{v}'"),
        )
    })
}

fn get_u64(v: &str, line: usize, key: &str) -> Result<u64> {
    v.parse::<u64>().map_err(|_| {
        parse_err(
            line,
            format!("key '{key}' expects a non-negative integer, got '{v}'"),
        )
    })
}

/// Parse "lo:hi, lo:hi, ..." into interval pairs.
pub fn parse_ranges(v: &str, line: usize, key: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in v.split(',') {
        let part = part.trim();
        let Some(colon) = part.find(':') else {
            return Err(parse_err(
                line,
                format!("key '{key}' expects 'lo:hi' pairs, got '{part}'"),
            ));
        };
        let lo = get_f64(part[..colon].trim(), line, key)?;
        let hi = get_f64(part[colon + 1..].trim(), line, key)?;
        out.push((lo, hi));
    }
    Ok(out)
}

pub fn parse_float_list(v: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|p| get_f64(p.trim(), line, key))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeBlock {
    /// Load the tableau from this file instead of generating it.
    pub tableau_file: Option<PathBuf>,
    pub scheme: String,
    pub stages: usize,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBlock {
    pub mode: String,
    pub y_width: usize,
    pub y_depth: usize,
    pub z_width: usize,
    pub z_depth: usize,
    pub init_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainBlock {
    pub epochs_per_outer: usize,
    pub outer_iterations: usize,
    pub w_f0: f64,
    pub w_g0: f64,
    pub beta: f64,
    pub convergence_tol: f64,
    pub lr0: f64,
    pub plateau_window: usize,
    pub plateau_factor: f64,
    pub plateau_min_lr: f64,
    pub data_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub eval_every: usize,
    pub ic_ranges: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalBlock {
    pub steps: usize,
    pub ensemble: usize,
    /// Branch guess for the reference solver, one entry per algebraic state.
    pub z_guess: Vec<f64>,
    pub oracle_scheme: String,
    pub oracle_stages: usize,
    pub oracle_h: f64,
    pub oracle_tol: f64,
}

/// Fully resolved experiment configuration. The defaults describe the
/// best-performing published setup: unstacked networks of width 100
/// (dynamic) and 40 (algebraic), four hidden layers each, 100 Gauss
/// stages at h = 0.1, and a 2000/1500 train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: String,
    pub model_params: ThreeBusParams,
    pub scheme: SchemeBlock,
    pub network: NetworkBlock,
    pub train: TrainBlock,
    pub evaluate: EvalBlock,
}

fn default_ic_ranges(model: &str) -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    match model {
        "linear_test" => vec![(-1.0, 1.0)],
        _ => vec![(-PI, PI), (-PI, PI), (-0.1, 0.1), (-0.1, 0.1)],
    }
}

fn default_z_guess(model: &str) -> Vec<f64> {
    match model {
        // V3 starts near its nominal upper branch.
        "linear_test" => vec![0.0],
        _ => vec![1.0],
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "three_bus".into(),
            model_params: ThreeBusParams::default(),
            scheme: SchemeBlock {
                tableau_file: None,
                scheme: "gauss".into(),
                stages: 100,
                h: 0.1,
            },
            network: NetworkBlock {
                mode: "unstacked".into(),
                y_width: 100,
                y_depth: 4,
                z_width: 40,
                z_depth: 4,
                init_seed: 0,
            },
            train: TrainBlock {
                epochs_per_outer: 50_000,
                outer_iterations: 5,
                w_f0: 1.0,
                w_g0: 1.0,
                beta: 2.0,
                convergence_tol: 1e-5,
                lr0: 1e-3,
                plateau_window: 2000,
                plateau_factor: 0.5,
                plateau_min_lr: 1e-5,
                data_seed: 0,
                train_size: 2000,
                test_size: 1500,
                eval_every: 1000,
                ic_ranges: default_ic_ranges("three_bus"),
            },
            evaluate: EvalBlock {
                steps: 80,
                ensemble: 100,
                z_guess: default_z_guess("three_bus"),
                oracle_scheme: "gauss".into(),
                oracle_stages: 3,
                oracle_h: 1e-3,
                oracle_tol: 1e-12,
            },
        }
    }
}

/// `take_field!(raw, "section", "key", cfg.slot, parser)` consumes one
/// optional config entry into a typed field.
macro_rules! take_field {
    ($raw:expr, $section:literal, $key:literal, $slot:expr, $parse:ident) => {
        if let Some((v, line)) = $raw.take($section, $key) {
            $slot = $parse(&v, line, $key)?;
        }
    };
}

impl ExperimentConfig {
    pub fn from_raw(raw: &mut RawConfig) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();

        if let Some((v, line)) = raw.take("model", "name") {
            match v.as_str() {
                "three_bus" | "linear_test" => cfg.model = v,
                other => {
                    return Err(parse_err(
                        line,
                        format!("unknown model '{other}' (expected three_bus or linear_test)"),
                    ))
                }
            }
        }
        cfg.train.ic_ranges = default_ic_ranges(&cfg.model);
        cfg.evaluate.z_guess = default_z_guess(&cfg.model);

        if cfg.model == "three_bus" {
            let p = &mut cfg.model_params;
            take_field!(raw, "model_params", "m1", p.m1, get_f64);
            take_field!(raw, "model_params", "m2", p.m2, get_f64);
            take_field!(raw, "model_params", "d", p.d, get_f64);
            take_field!(raw, "model_params", "dl", p.dl, get_f64);
            take_field!(raw, "model_params", "v1", p.v1, get_f64);
            take_field!(raw, "model_params", "v2", p.v2, get_f64);
            take_field!(raw, "model_params", "b12", p.b12, get_f64);
            take_field!(raw, "model_params", "b13", p.b13, get_f64);
            take_field!(raw, "model_params", "b23", p.b23, get_f64);
            take_field!(raw, "model_params", "pg", p.pg, get_f64);
            take_field!(raw, "model_params", "pl", p.pl, get_f64);
            take_field!(raw, "model_params", "ql", p.ql, get_f64);
        }

        if let Some((v, _)) = raw.take("scheme", "tableau_file") {
            cfg.scheme.tableau_file = Some(PathBuf::from(v));
        }
        if let Some((v, line)) = raw.take("scheme", "scheme") {
            match v.as_str() {
                "gauss" | "backward_euler" => cfg.scheme.scheme = v,
                other => {
                    return Err(parse_err(
                        line,
                        format!("unknown scheme '{other}' (expected gauss or backward_euler)"),
                    ))
                }
            }
        }
        if let Some((v, line)) = raw.take("scheme", "stages") {
            cfg.scheme.stages = get_usize(&v, line, "stages")?;
        }
        if let Some((v, line)) = raw.take("scheme", "h") {
            cfg.scheme.h = get_f64(&v, line, "h")?;
        }

        if let Some((v, line)) = raw.take("network", "mode") {
            match v.as_str() {
                "unstacked" | "stacked" => cfg.network.mode = v,
                other => {
                    return Err(parse_err(
                        line,
                        format!("unknown mode '{other}' (expected unstacked or stacked)"),
                    ))
                }
            }
        }
        take_field!(raw, "network", "y_width", cfg.network.y_width, get_usize);
        take_field!(raw, "network", "y_depth", cfg.network.y_depth, get_usize);
        take_field!(raw, "network", "z_width", cfg.network.z_width, get_usize);
        take_field!(raw, "network", "z_depth", cfg.network.z_depth, get_usize);
        take_field!(raw, "network", "init_seed", cfg.network.init_seed, get_u64);

        let t = &mut cfg.train;
        take_field!(raw, "train", "epochs_per_outer", t.epochs_per_outer, get_usize);
        take_field!(raw, "train", "outer_iterations", t.outer_iterations, get_usize);
        take_field!(raw, "train", "plateau_window", t.plateau_window, get_usize);
        take_field!(raw, "train", "train_size", t.train_size, get_usize);
        take_field!(raw, "train", "test_size", t.test_size, get_usize);
        take_field!(raw, "train", "eval_every", t.eval_every, get_usize);
        take_field!(raw, "train", "w_f0", t.w_f0, get_f64);
        take_field!(raw, "train", "w_g0", t.w_g0, get_f64);
        take_field!(raw, "train", "beta", t.beta, get_f64);
        take_field!(raw, "train", "convergence_tol", t.convergence_tol, get_f64);
        take_field!(raw, "train", "lr0", t.lr0, get_f64);
        take_field!(raw, "train", "plateau_factor", t.plateau_factor, get_f64);
        take_field!(raw, "train", "plateau_min_lr", t.plateau_min_lr, get_f64);
        take_field!(raw, "train", "data_seed", t.data_seed, get_u64);
        take_field!(raw, "train", "ic_ranges", t.ic_ranges, parse_ranges);

        let e = &mut cfg.evaluate;
        take_field!(raw, "evaluate", "steps", e.steps, get_usize);
        take_field!(raw, "evaluate", "ensemble", e.ensemble, get_usize);
        take_field!(raw, "evaluate", "oracle_stages", e.oracle_stages, get_usize);
        take_field!(raw, "evaluate", "z_guess", e.z_guess, parse_float_list);
        if let Some((v, line)) = raw.take("evaluate", "oracle_scheme") {
            match v.as_str() {
                "gauss" | "backward_euler" => e.oracle_scheme = v,
                other => {
                    return Err(parse_err(
                        line,
                        format!("unknown scheme '{other}' (expected gauss or backward_euler)"),
                    ))
                }
            }
        }
        if let Some((v, line)) = raw.take("evaluate", "oracle_h") {
            e.oracle_h = get_f64(&v, line, "oracle_h")?;
        }
        if let Some((v, line)) = raw.take("evaluate", "oracle_tol") {
            e.oracle_tol = get_f64(&v, line, "oracle_tol")?;
        }

        raw.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut raw = RawConfig::load(path)?;
        for spec in overrides {
            raw.apply_override(spec)?;
        }
        ExperimentConfig::from_raw(&mut raw)
    }

    pub fn from_overrides(overrides: &[String]) -> Result<ExperimentConfig> {
        let mut raw = RawConfig::parse("")?;
        for spec in overrides {
            raw.apply_override(spec)?;
        }
        ExperimentConfig::from_raw(&mut raw)
    }

    /// Serialize with every field explicit, so the output reproduces this
    /// exact configuration when parsed back.
    pub fn to_text(&self, run_info: &[(String, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "name = {}", self.model);
        if self.model == "three_bus" {
            let p = &self.model_params;
            let _ = writeln!(s, "\n[model_params]");
            for (k, v) in [
                ("m1", p.m1),
                ("m2", p.m2),
                ("d", p.d),
                ("dl", p.dl),
                ("v1", p.v1),
                ("v2", p.v2),
                ("b12", p.b12),
                ("b13", p.b13),
                ("b23", p.b23),
                ("pg", p.pg),
                ("pl", p.pl),
                ("ql", p.ql),
            ] {
                let _ = writeln!(s, "{k} = {v:.16e}");
            }
        }
        let _ = writeln!(s, "\n[scheme]");
        if let Some(f) = &self.scheme.tableau_file {
            let _ = writeln!(s, "tableau_file = {}", f.display());
        }
        let _ = writeln!(s, "scheme = {}", self.scheme.scheme);
        let _ = writeln!(s, "stages = {}", self.scheme.stages);
        let _ = writeln!(s, "h = {:.16e}", self.scheme.h);

        let n = &self.network;
        let _ = writeln!(s, "\n[network]");
        let _ = writeln!(s, "mode = {}", n.mode);
        let _ = writeln!(s, "y_width = {}", n.y_width);
        let _ = writeln!(s, "y_depth = {}", n.y_depth);
        let _ = writeln!(s, "z_width = {}", n.z_width);
        let _ = writeln!(s, "z_depth = {}", n.z_depth);
        let _ = writeln!(s, "init_seed = {}", n.init_seed);

        let t = &self.train;
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs_per_outer = {}", t.epochs_per_outer);
        let _ = writeln!(s, "outer_iterations = {}", t.outer_iterations);
        let _ = writeln!(s, "w_f0 = {:.16e}", t.w_f0);
        let _ = writeln!(s, "w_g0 = {:.16e}", t.w_g0);
        let _ = writeln!(s, "beta = {:.16e}", t.beta);
        let _ = writeln!(s, "convergence_tol = {:.16e}", t.convergence_tol);
        let _ = writeln!(s, "lr0 = {:.16e}", t.lr0);
        let _ = writeln!(s, "plateau_window = {}", t.plateau_window);
        let _ = writeln!(s, "plateau_factor = {:.16e}", t.plateau_factor);
        let _ = writeln!(s, "plateau_min_lr = {:.16e}", t.plateau_min_lr);
        let _ = writeln!(s, "data_seed = {}", t.data_seed);
        let _ = writeln!(s, "train_size = {}", t.train_size);
        let _ = writeln!(s, "test_size = {}", t.test_size);
        let _ = writeln!(s, "eval_every = {}", t.eval_every);
        let ranges: Vec<String> = t
            .ic_ranges
            .iter()
            .map(|(lo, hi)| format!("{lo:.16e}:{hi:.16e}"))
            .collect();
        let _ = writeln!(s, "ic_ranges = {}", ranges.join(", "));

        let e = &self.evaluate;
        let _ = writeln!(s, "\n[evaluate]");
        let _ = writeln!(s, "steps = {}", e.steps);
        let _ = writeln!(s, "ensemble = {}", e.ensemble);
        let guesses: Vec<String> = e.z_guess.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "z_guess = {}", guesses.join(", "));
        let _ = writeln!(s, "oracle_scheme = {}", e.oracle_scheme);
        let _ = writeln!(s, "oracle_stages = {}", e.oracle_stages);
        let _ = writeln!(s, "oracle_h = {:.16e}", e.oracle_h);
        let _ = writeln!(s, "oracle_tol = {:.16e}", e.oracle_tol);

        if !run_info.is_empty() {
            let _ = writeln!(s, "\n[run]");
            for (k, v) in run_info {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    pub fn build_dae(&self) -> Result<Box<dyn SemiExplicitDae>> {
        match self.model.as_str() {
            "linear_test" => Ok(Box::new(LinearTestDae)),
            "three_bus" => Ok(Box::new(ThreeBus::new(self.model_params.clone())?)),
            other => Err(Error::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }

    pub fn build_tableau(&self) -> Result<ButcherTableau> {
        match &self.scheme.tableau_file {
            Some(path) => ButcherTableau::load(path),
            None => ButcherTableau::by_name(&self.scheme.scheme, self.scheme.stages),
        }
    }

    pub fn build_assembly(&self, tableau: ButcherTableau) -> Result<PinnAssembly> {
        let dae = self.build_dae()?;
        let (n, m) = (dae.n(), dae.m());
        match self.network_mode() {
            Mode::Stacked => PinnAssembly::stacked(
                n,
                m,
                &self.train.ic_ranges,
                tableau,
                self.scheme.h,
                self.network.init_seed,
            ),
            Mode::Unstacked => PinnAssembly::unstacked(
                n,
                m,
                NetSpec {
                    width: self.network.y_width,
                    depth: self.network.y_depth,
                },
                NetSpec {
                    width: self.network.z_width,
                    depth: self.network.z_depth,
                },
                &self.train.ic_ranges,
                tableau,
                self.scheme.h,
                self.network.init_seed,
            ),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs_per_outer: t.epochs_per_outer,
            outer_iterations: t.outer_iterations,
            w_f0: t.w_f0,
            w_g0: t.w_g0,
            beta: t.beta,
            convergence_tol: t.convergence_tol,
            lr0: t.lr0,
            plateau: PlateauConfig {
                window: t.plateau_window,
                factor: t.plateau_factor,
                min_lr: t.plateau_min_lr,
            },
            seed: t.data_seed,
            train_size: t.train_size,
            test_size: t.test_size,
            eval_every: t.eval_every,
            ic_ranges: t.ic_ranges.clone(),
        }
    }

    pub fn network_mode(&self) -> Mode {
        match self.network.mode.as_str() {
            "stacked" => Mode::Stacked,
            _ => Mode::Unstacked,
        }
    }
}
