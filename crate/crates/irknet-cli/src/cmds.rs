//! Subcommand implementations. Every run leaves a manifest beside its
//! outputs recording the resolved configuration, the seeds, and the crate
//! version, and writes numeric data at 17 significant digits.

use crate::config::{ExperimentConfig, RawConfig};
use crate::plot::{line_plot, Series};
use crate::CliError;
use irknet::{
    evaluate_ensemble, load_checkpoint, sample_initial_conditions, save_checkpoint, simulate,
    ButcherTableau, Error, LossBreakdown, PinnAssembly, SolverConfig, StagePredictor, Trajectory,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

type CmdResult = Result<(), CliError>;

/// Default output root: $IRKNET_OUT when set, else the working directory.
pub fn out_root() -> PathBuf {
    match std::env::var_os("IRKNET_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("."),
    }
}

fn resolve_out(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| out_root().join(default_name))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Run(Error::Io(e)))?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::Run(Error::Io(e)))
}

fn run_info(command: &str) -> Vec<(String, String)> {
    vec![
        ("command".into(), command.to_string()),
        ("crate_version".into(), env!("CARGO_PKG_VERSION").into()),
    ]
}

/// Manifest for flag-driven commands that have no config file.
fn flag_manifest(command: &str) -> String {
    let mut s = String::from("[run]\n");
    for (k, v) in run_info(command) {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn command_line() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

fn parse_float_flag(value: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| {
                CliError::Usage(format!(
                    "{flag} expects comma-separated numbers, got '{}'",
                    p.trim()
                ))
            })
        })
        .collect()
}

pub fn tableau(scheme: &str, stages: usize, out: Option<PathBuf>) -> CmdResult {
    let tab = ButcherTableau::by_name(scheme, stages)?;
    let report = tab.verify_order_conditions(tab.order);
    let path = resolve_out(out, &format!("{scheme}_{stages}.tableau"));
    ensure_parent(&path)?;
    tab.save(&path).map_err(CliError::Run)?;
    write_file(
        &path.with_extension("manifest"),
        &flag_manifest(&command_line()),
    )?;
    println!(
        "{} with {} stages: order {}, max quadrature residual {:.3e}, max node residual {:.3e}",
        scheme,
        tab.nu,
        tab.order,
        report.max_b(tab.order),
        report.max_c(tab.order),
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn datagen(
    model: &str,
    count: usize,
    seed: u64,
    ranges: Option<String>,
    out: Option<PathBuf>,
) -> CmdResult {
    let cfg = ExperimentConfig::from_overrides(&[format!("model.name={model}")])?;
    let dae = cfg.build_dae()?;
    let ranges = match ranges {
        Some(spec) => crate::config::parse_ranges(&spec, 0, "--ranges")?,
        None => cfg.train.ic_ranges.clone(),
    };
    let data = sample_initial_conditions(count, &ranges, seed)?;
    let names = dae.state_names();
    let mut csv = names[..dae.n()].join(",");
    csv.push('\n');
    for r in 0..data.rows() {
        let row: Vec<String> = data.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let path = resolve_out(out, "dataset.csv");
    write_file(&path, &csv)?;
    write_file(
        &path.with_extension("manifest"),
        &flag_manifest(&command_line()),
    )?;
    println!("wrote {} samples to {}", count, path.display());
    Ok(())
}

pub struct TrainOutcome {
    pub train_loss: LossBreakdown,
    pub test_loss: LossBreakdown,
    pub epochs: usize,
    pub all_converged: bool,
}

/// Shared by `train` and `grid`: runs the full penalty schedule and writes
/// checkpoint, training log, test log, and manifest beside `ckpt_path`.
pub fn run_train(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    command: &str,
) -> Result<TrainOutcome, CliError> {
    let dae = cfg.build_dae()?;
    let tableau = cfg.build_tableau()?;
    let mut assembly = cfg.build_assembly(tableau)?;
    let train_cfg = cfg.train_config();
    let state = irknet::penalty_train(&mut assembly, dae.as_ref(), &train_cfg)?;

    ensure_parent(ckpt_path)?;
    save_checkpoint(&assembly, ckpt_path)?;

    let mut log = String::from(irknet::train::log_header());
    log.push('\n');
    for rec in &state.history {
        log.push_str(&rec.to_log_line());
        log.push('\n');
    }
    write_file(&ckpt_path.with_extension("log.csv"), &log)?;

    let mut test_log = String::from("epoch,outer_iter,l_f,l_g,total\n");
    for rec in &state.test_history {
        let _ = writeln!(
            test_log,
            "{},{},{:.16e},{:.16e},{:.16e}",
            rec.epoch, rec.outer_iter, rec.l_f, rec.l_g, rec.total
        );
    }
    write_file(&ckpt_path.with_extension("test.csv"), &test_log)?;

    write_file(
        &ckpt_path.with_extension("manifest"),
        &cfg.to_text(&run_info(command)),
    )?;

    let pred = assembly.predict_stages(&state.test_set)?;
    let test_loss = irknet::physics_loss(
        dae.as_ref(),
        &state.test_set,
        &pred,
        &assembly.tableau,
        assembly.step,
        state.w_f,
        state.w_g,
    )?;
    Ok(TrainOutcome {
        train_loss: state.final_loss,
        test_loss,
        epochs: state.history.len(),
        all_converged: state.outer_converged.iter().all(|&c| c),
    })
}

pub fn train(config: Option<PathBuf>, out: Option<PathBuf>, sets: &[String]) -> CmdResult {
    let cfg = match config {
        Some(path) => ExperimentConfig::load(&path, sets)?,
        None => ExperimentConfig::from_overrides(sets)?,
    };
    let ckpt = resolve_out(out, "model.ckpt");
    let outcome = run_train(&cfg, &ckpt, &command_line())?;
    println!(
        "trained {} epochs ({}converged); final train loss {:.6e}, test loss {:.6e}",
        outcome.epochs,
        if outcome.all_converged { "" } else { "not all outer solves " },
        outcome.train_loss.total,
        outcome.test_loss.total,
    );
    println!("wrote {}", ckpt.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn oracle(
    model: &str,
    ic: &str,
    zguess: &str,
    tend: f64,
    out: Option<PathBuf>,
    h: f64,
    tol: f64,
    scheme: &str,
    stages: usize,
) -> CmdResult {
    let cfg = ExperimentConfig::from_overrides(&[format!("model.name={model}")])?;
    let dae = cfg.build_dae()?;
    let y0 = parse_float_flag(ic, "--ic")?;
    let z0 = parse_float_flag(zguess, "--zguess")?;
    let solver_cfg = SolverConfig {
        tableau: ButcherTableau::by_name(scheme, stages)?,
        h_ref: h,
        newton_tol: tol,
        newton_max_iter: 50,
    };
    let traj = irknet::solve(dae.as_ref(), &y0, &z0, tend, &solver_cfg)?;
    let ginf = traj.max_g_violation(dae.as_ref())?;
    let path = resolve_out(out, "oracle.csv");
    write_file(&path, &traj.to_csv())?;
    write_file(
        &path.with_extension("manifest"),
        &flag_manifest(&command_line()),
    )?;
    println!(
        "solved {} to t = {} in {} steps, max constraint violation {:.3e}",
        dae.name(),
        tend,
        traj.times.len() - 1,
        ginf
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn state_series(traj: &Trajectory, s: usize) -> Vec<(f64, f64)> {
    let n = traj.n();
    traj.times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let v = if s < n {
                traj.y.get(k, s)
            } else {
                traj.z.get(k, s - n)
            };
            (t, v)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_cmd(
    ckpt: &Path,
    ic: &str,
    steps: usize,
    truth: &str,
    out: Option<PathBuf>,
    model: &str,
    zguess: Option<String>,
    svg: bool,
    oracle_h: f64,
    oracle_tol: f64,
) -> CmdResult {
    if truth != "oracle" && truth != "none" {
        return Err(CliError::Usage(format!(
            "--truth expects 'oracle' or 'none', got '{truth}'"
        )));
    }
    let cfg = ExperimentConfig::from_overrides(&[format!("model.name={model}")])?;
    let dae = cfg.build_dae()?;
    let assembly = load_checkpoint(ckpt)?;
    let y0 = parse_float_flag(ic, "--ic")?;
    let dir = resolve_out(out, "simulate_out");

    let mut roll = simulate(&assembly, dae.as_ref(), &y0, steps)?;
    write_file(&dir.join("trajectory.csv"), &roll.trajectory.to_csv())?;

    let mut drift = String::from("step,ginf\n");
    for (k, g) in roll.drift.iter().enumerate() {
        let _ = writeln!(drift, "{},{:.16e}", k + 1, g);
    }
    write_file(&dir.join("drift.csv"), &drift)?;

    let truth_traj = if truth == "oracle" {
        let z0 = match zguess {
            Some(spec) => parse_float_flag(&spec, "--zguess")?,
            None => cfg.evaluate.z_guess.clone(),
        };
        let solver_cfg = SolverConfig {
            h_ref: oracle_h,
            newton_tol: oracle_tol,
            ..SolverConfig::default()
        };
        let horizon = steps as f64 * assembly.step;
        let t = irknet::solve(dae.as_ref(), &y0, &z0, horizon, &solver_cfg)?;
        let errs = roll.score_against(&t)?.to_vec();
        let mut csv = String::from("state,l2rel\n");
        for (name, e) in roll.trajectory.names.iter().zip(&errs) {
            let _ = writeln!(csv, "{name},{e:.16e}");
        }
        write_file(&dir.join("errors.csv"), &csv)?;
        Some(t)
    } else {
        None
    };

    if svg {
        for (s, name) in roll.trajectory.names.clone().iter().enumerate() {
            let mut series = vec![Series {
                label: "predicted".into(),
                points: state_series(&roll.trajectory, s),
            }];
            if let Some(t) = &truth_traj {
                let pts = roll
                    .trajectory
                    .times
                    .iter()
                    .filter_map(|&tq| {
                        t.dense_eval(tq).ok().map(|p| {
                            let v = if s < t.n() { p.y[s] } else { p.z[s - t.n()] };
                            (tq, v)
                        })
                    })
                    .collect();
                series.push(Series {
                    label: "reference".into(),
                    points: pts,
                });
            }
            let svg_text = line_plot(name, "t", name, &series);
            write_file(&dir.join(format!("state_{name}.svg")), &svg_text)?;
        }
    }

    write_file(&dir.join("manifest"), &flag_manifest(&command_line()))?;
    println!(
        "simulated {} steps of h = {}; max constraint drift {:.3e}",
        steps,
        assembly.step,
        roll.max_drift()
    );
    if let Some(errs) = &roll.errors {
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        println!("worst per-state L2 relative error {worst:.3e}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    ckpt: &Path,
    ensemble: usize,
    steps: usize,
    out: Option<PathBuf>,
    model: &str,
    seed: u64,
    zguess: Option<String>,
    oracle_h: f64,
    oracle_tol: f64,
) -> CmdResult {
    let cfg = ExperimentConfig::from_overrides(&[format!("model.name={model}")])?;
    let dae = cfg.build_dae()?;
    let assembly = load_checkpoint(ckpt)?;
    let ranges: Vec<(f64, f64)> = assembly
        .norm_lo
        .iter()
        .zip(&assembly.norm_hi)
        .map(|(&lo, &hi)| (lo, hi))
        .collect();
    let ics = sample_initial_conditions(ensemble, &ranges, seed)?;
    let z0 = match zguess {
        Some(spec) => parse_float_flag(&spec, "--zguess")?,
        None => cfg.evaluate.z_guess.clone(),
    };
    let solver_cfg = SolverConfig {
        h_ref: oracle_h,
        newton_tol: oracle_tol,
        ..SolverConfig::default()
    };
    let report = evaluate_ensemble(&assembly, dae.as_ref(), &ics, steps, &solver_cfg, &z0)?;

    let dir = resolve_out(out, "evaluate_out");
    let mut table = String::from("metric");
    for name in &report.state_names {
        table.push(',');
        table.push_str(name);
    }
    table.push('\n');
    for (label, row) in [("mean", &report.mean), ("std", &report.std)] {
        table.push_str(label);
        for v in row {
            let _ = write!(table, ",{v:.16e}");
        }
        table.push('\n');
    }
    write_file(&dir.join("table.csv"), &table)?;

    if !report.failures.is_empty() {
        let mut fails = String::from("ic_index,reason\n");
        for (idx, reason) in &report.failures {
            let _ = writeln!(fails, "{},{}", idx, reason.replace(',', ";"));
        }
        write_file(&dir.join("failures.csv"), &fails)?;
    }
    write_file(&dir.join("manifest"), &flag_manifest(&command_line()))?;
    println!(
        "evaluated {} of {} initial conditions over {} steps ({} failed)",
        report.evaluated,
        ensemble,
        steps,
        report.failures.len()
    );
    for (s, name) in report.state_names.iter().enumerate() {
        println!("  {name}: mean {:.4e}, std {:.4e}", report.mean[s], report.std[s]);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    ckpts: &[PathBuf],
    ic: &str,
    steps: usize,
    out: Option<PathBuf>,
    model: &str,
    zguess: Option<String>,
    svg: bool,
    oracle_h: f64,
    oracle_tol: f64,
) -> CmdResult {
    if ckpts.is_empty() {
        return Err(CliError::Usage(
            "--ckpts needs at least one checkpoint".into(),
        ));
    }
    let cfg = ExperimentConfig::from_overrides(&[format!("model.name={model}")])?;
    let dae = cfg.build_dae()?;
    let y0 = parse_float_flag(ic, "--ic")?;
    let z0 = match zguess {
        Some(spec) => parse_float_flag(&spec, "--zguess")?,
        None => cfg.evaluate.z_guess.clone(),
    };

    let mut assemblies: Vec<(String, PinnAssembly)> = Vec::with_capacity(ckpts.len());
    for path in ckpts {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        assemblies.push((label, load_checkpoint(path)?));
    }
    let predictors: Vec<(&str, &dyn StagePredictor)> = assemblies
        .iter()
        .map(|(label, asm)| (label.as_str(), asm as &dyn StagePredictor))
        .collect();
    let solver_cfg = SolverConfig {
        h_ref: oracle_h,
        newton_tol: oracle_tol,
        ..SolverConfig::default()
    };
    let curves =
        irknet::compare_schemes(&predictors, dae.as_ref(), &y0, steps, &solver_cfg, &z0)?;

    let names = dae.state_names();
    let dir = resolve_out(out, "compare_out");
    let mut csv = String::from("scheme,steps");
    for name in &names {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for curve in &curves {
        for (k, point) in curve.errors.iter().enumerate() {
            let _ = write!(csv, "{},{}", curve.label, k + 1);
            for e in point {
                let _ = write!(csv, ",{e:.16e}");
            }
            csv.push('\n');
        }
    }
    write_file(&dir.join("comparison.csv"), &csv)?;

    if svg {
        for (s, name) in names.iter().enumerate() {
            let series: Vec<Series> = curves
                .iter()
                .map(|curve| Series {
                    label: curve.label.clone(),
                    points: curve
                        .errors
                        .iter()
                        .enumerate()
                        .map(|(k, point)| ((k + 1) as f64, point[s]))
                        .collect(),
                })
                .collect();
            let svg_text = line_plot(
                &format!("L2 relative error: {name}"),
                "steps",
                "error",
                &series,
            );
            write_file(&dir.join(format!("comparison_{name}.svg")), &svg_text)?;
        }
    }
    write_file(&dir.join("manifest"), &flag_manifest(&command_line()))?;
    println!(
        "compared {} checkpoints over {} steps; wrote {}",
        curves.len(),
        steps,
        dir.display()
    );
    Ok(())
}

struct GridLists {
    cap: usize,
    widths: Vec<usize>,
    depths: Vec<usize>,
    train_sizes: Vec<usize>,
    modes: Vec<String>,
}

fn parse_usize_list(v: &str, line: usize, key: &str) -> Result<Vec<usize>, Error> {
    v.split(',')
        .map(|p| {
            p.trim().parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("key '{key}' expects integers, got '{}'", p.trim()),
            })
        })
        .collect()
}

fn grid_lists(raw: &mut RawConfig) -> Result<GridLists, CliError> {
    let mut lists = GridLists {
        cap: 32,
        widths: Vec::new(),
        depths: Vec::new(),
        train_sizes: Vec::new(),
        modes: Vec::new(),
    };
    if let Some((v, line)) = raw.take("grid", "cap") {
        lists.cap = v.parse::<usize>().map_err(|_| {
            CliError::from(Error::Parse {
                line,
                message: format!("key 'cap' expects an integer, got '{v}'"),
            })
        })?;
    }
    if let Some((v, line)) = raw.take("grid", "widths") {
        lists.widths = parse_usize_list(&v, line, "widths")?;
    }
    if let Some((v, line)) = raw.take("grid", "depths") {
        lists.depths = parse_usize_list(&v, line, "depths")?;
    }
    if let Some((v, line)) = raw.take("grid", "train_sizes") {
        lists.train_sizes = parse_usize_list(&v, line, "train_sizes")?;
    }
    if let Some((v, line)) = raw.take("grid", "modes") {
        for part in v.split(',') {
            let mode = part.trim().to_string();
            if mode != "unstacked" && mode != "stacked" {
                return Err(CliError::from(Error::Parse {
                    line,
                    message: format!("unknown mode '{mode}' in grid"),
                }));
            }
            lists.modes.push(mode);
        }
    }
    Ok(lists)
}

/// One training run per grid point (Cartesian product of the listed
/// values), each in its own subdirectory with its own manifest. A summary
/// CSV collects final train/test losses; failures are recorded per point
/// and do not stop the grid.
pub fn grid(config: &Path, out: Option<PathBuf>, sets: &[String]) -> CmdResult {
    let mut raw = RawConfig::load(config)?;
    for spec in sets {
        raw.apply_override(spec)?;
    }
    let lists = grid_lists(&mut raw)?;
    let base = ExperimentConfig::from_raw(&mut raw)?;

    let empty_list = [
        lists.widths.is_empty(),
        lists.depths.is_empty(),
        lists.train_sizes.is_empty(),
        lists.modes.is_empty(),
    ];
    if empty_list.iter().all(|&e| e) {
        return Err(CliError::Usage(
            "grid config lists nothing to vary: set at least one of \
             widths/depths/train_sizes/modes in [grid]"
                .into(),
        ));
    }

    // Missing axes fall back to the base configuration's single value.
    let widths = or_single(&lists.widths, base.network.y_width);
    let depths = or_single(&lists.depths, base.network.y_depth);
    let train_sizes = or_single(&lists.train_sizes, base.train.train_size);
    let modes = if lists.modes.is_empty() {
        vec![base.network.mode.clone()]
    } else {
        lists.modes.clone()
    };

    let total = widths.len() * depths.len() * train_sizes.len() * modes.len();
    if total > lists.cap {
        return Err(CliError::Usage(format!(
            "grid has {total} points, above the cap of {} (raise grid.cap to allow)",
            lists.cap
        )));
    }

    let dir = resolve_out(out, "grid_out");
    let mut summary = String::from(
        "width,depth,train_size,mode,status,train_l_f,train_l_g,train_total,test_total,epochs\n",
    );
    let mut failures = 0usize;
    for mode in &modes {
        for &width in &widths {
            for &depth in &depths {
                for &tsize in &train_sizes {
                    let mut cfg = base.clone();
                    cfg.network.mode = mode.clone();
                    cfg.network.y_width = width;
                    cfg.network.z_width = width;
                    cfg.network.y_depth = depth;
                    cfg.network.z_depth = depth;
                    cfg.train.train_size = tsize;
                    let name = format!("{mode}_w{width}_d{depth}_t{tsize}");
                    let ckpt = dir.join(&name).join("model.ckpt");
                    let command = format!("{} # grid point {name}", command_line());
                    print!("grid point {name}: ");
                    match run_train(&cfg, &ckpt, &command) {
                        Ok(outcome) => {
                            println!(
                                "train {:.4e}, test {:.4e} after {} epochs",
                                outcome.train_loss.total,
                                outcome.test_loss.total,
                                outcome.epochs
                            );
                            let _ = writeln!(
                                summary,
                                "{width},{depth},{tsize},{mode},ok,{:.16e},{:.16e},{:.16e},{:.16e},{}",
                                outcome.train_loss.l_f,
                                outcome.train_loss.l_g,
                                outcome.train_loss.total,
                                outcome.test_loss.total,
                                outcome.epochs
                            );
                        }
                        Err(e) => {
                            failures += 1;
                            let reason = e.to_string().replace(',', ";").replace('\n', " ");
                            println!("failed: {reason}");
                            let _ = writeln!(
                                summary,
                                "{width},{depth},{tsize},{mode},failed: {reason},,,,,"
                            );
                        }
                    }
                }
            }
        }
    }
    write_file(&dir.join("summary.csv"), &summary)?;
    write_file(&dir.join("manifest"), &base.to_text(&run_info(&command_line())))?;
    println!(
        "grid finished: {} points, {} failed; wrote {}",
        total,
        failures,
        dir.join("summary.csv").display()
    );
    Ok(())
}

fn or_single<T: Clone>(list: &[T], fallback: T) -> Vec<T> {
    if list.is_empty() {
        vec![fallback]
    } else {
        list.to_vec()
    }
}
