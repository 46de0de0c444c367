//! Command-line front end: argument parsing and file output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use crate::error::Result;
use crate::experiment::{
    run_experiment, run_prep_design, run_sweep, RunReport, SweepParam, SweepRow,
};
use crate::linalg;
use crate::spin_ops::{
    projection_probabilities, table1, table1_layout, HalfInteger, SpinQuantumNumber,
};

/// First line of every file written.
pub const OUTPUT_SCHEMA: &str = "# quadspin-output/1";

#[derive(Debug, Parser)]
#[command(
    name = "quadspin",
    version,
    about = "Reversible projective measurement on a quadrupolar spin"
)]
pub struct Cli {
    /// Output directory; overrides the config file and the environment.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rotation matrix to the S_X eigenbasis, compared with the published table.
    Table1,
    /// Runs the full phase-cycled experiment.
    Run { config: PathBuf },
    /// Repeats the experiment over values of one parameter.
    Sweep {
        config: PathBuf,
        /// One of n, omega1_ratio, t2, read_angle.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Pseudopure preparation pulses.
    Prep {
        #[command(subcommand)]
        action: PrepCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum PrepCommand {
    /// Optimizes the six tone amplitudes.
    Design { config: PathBuf },
}

fn resolve_out(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match cfg {
        Some(c) => c.output_dir(),
        None => match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => ExperimentConfig::default().output.dir,
        },
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, format!("{OUTPUT_SCHEMA}\n{body}"))?;
    Ok(path)
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Table1 => cmd_table1(&resolve_out(cli.out.as_deref(), None)),
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_run(&cfg, &resolve_out(cli.out.as_deref(), Some(&cfg)))
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let param = SweepParam::parse(&param)?;
            cmd_sweep(
                &cfg,
                param,
                &values,
                &resolve_out(cli.out.as_deref(), Some(&cfg)),
            )
        }
        Command::Prep {
            action: PrepCommand::Design { config },
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_prep_design(&cfg, &resolve_out(cli.out.as_deref(), Some(&cfg)))
        }
    }
}

/// Writes the rotation matrix, an entrywise comparison with the printed
/// table and the projection probabilities; returns the summary text.
pub fn cmd_table1(dir: &Path) -> Result<String> {
    let s = SpinQuantumNumber::SEVEN_HALVES;
    let computed = table1_layout(s);
    let printed = table1::in_level_order();
    let n = s.dim();

    let mut matrix = String::from("m_z");
    for k in 0..n {
        let _ = write!(matrix, ",col{k}");
    }
    matrix.push('\n');
    let mut cmp = String::from("m_z,col,computed,printed,difference\n");
    let mut max_dev = 0.0_f64;
    let mut rows = String::new();
    for i in 0..n {
        let m = HalfInteger::from_twice(s.two_m_at(i));
        let _ = write!(matrix, "{m}");
        let mut row_dev = 0.0_f64;
        for j in 0..n {
            let v = computed[(i, j)].re;
            let p = printed[i][j];
            let _ = write!(matrix, ",{v:.15}");
            let _ = writeln!(cmp, "{m},{j},{v:.15},{p:.15},{:.3e}", v - p);
            row_dev = row_dev.max((v - p).abs());
        }
        matrix.push('\n');
        max_dev = max_dev.max(row_dev);
        let _ = writeln!(
            rows,
            "  row m_z = {m:>4}: max |computed - printed| = {row_dev:.3e}"
        );
    }
    let ortho = linalg::unitarity_residual(&computed);

    let mut probs = String::from("m_z");
    for i in 0..n {
        let _ = write!(probs, ",p_mx{}", HalfInteger::from_twice(s.two_m_at(i)));
    }
    probs.push('\n');
    for i in 0..n {
        let m = HalfInteger::from_twice(s.two_m_at(i));
        let p = projection_probabilities(s, m)?;
        let _ = write!(probs, "{m}");
        for v in &p.values {
            let _ = write!(probs, ",{v:.15}");
        }
        probs.push('\n');
    }
    let top = projection_probabilities(s, HalfInteger::from_twice(7))?;
    let scaled: Vec<String> = top
        .values
        .iter()
        .map(|v| format!("{:.6}", v * 128.0))
        .collect();

    write(dir, "table1_matrix.csv", &matrix)?;
    write(dir, "table1_comparison.csv", &cmp)?;
    write(dir, "projection_probabilities.csv", &probs)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "rotation to the S_X eigenbasis, spin 7/2");
    let _ = writeln!(summary, "max |computed - printed table| = {max_dev:.3e}");
    summary.push_str(&rows);
    let _ = writeln!(summary, "orthonormality residual = {ortho:.3e}");
    let _ = writeln!(
        summary,
        "128 * P(m_x | m_z = 7/2) = ({})",
        scaled.join(", ")
    );
    write(dir, "summary.txt", &summary)?;
    Ok(summary)
}

fn trace_files(dir: &Path, stem: &str, t: &crate::experiment::Trace) -> Result<()> {
    write(dir, &format!("{stem}_fid.csv"), &t.fid.to_csv())?;
    write(dir, &format!("{stem}_spectrum.csv"), &t.spectrum.to_csv())?;
    Ok(())
}

pub fn report_summary(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "report schema: {}", r.schema);
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "phase-cycle members: {}", r.member_count);
    let _ = writeln!(s, "delta = {:.9e} s", r.delta);
    let _ = writeln!(s, "composite 90 fidelity = {:.9}", r.composite_fidelity);
    let _ = writeln!(
        s,
        "cyclicity residual |U(t_c) - e^ia I| = {:.3e}",
        r.cyclicity_residual
    );
    let _ = writeln!(s, "prepared-state relative spread = {:.3e}", r.prep_spread);
    if let Some(d) = &r.prep_design {
        let _ = writeln!(
            s,
            "prep design: duration = {:.6e} s, spread = {:.3e}, evaluations = {}",
            d.design.duration, d.quality.relative_spread, d.evaluations
        );
    }
    let _ = writeln!(
        s,
        "max population error vs theory = {:.3e}",
        r.comparison.max_abs_error
    );
    if !r.comparison.negative.is_empty() {
        let _ = writeln!(
            s,
            "warning: negative populations at indices {:?}",
            r.comparison.negative
        );
    }
    let _ = writeln!(
        s,
        "max imaginary part of scaled peak ratios = {:.3e}",
        r.max_imaginary_ratio
    );
    let _ = writeln!(
        s,
        "projection residual (step C vs X-projected state) = {:.3e}",
        r.projection_residual
    );
    let _ = writeln!(s, "reversal fidelity = {:.9}", r.reversal_fidelity);
    let _ = writeln!(
        s,
        "unwanted peak fraction (step E) = {:.3e}",
        r.unwanted_fraction
    );
    let _ = writeln!(s, "populations (m_x, measured, theory):");
    for (k, (p, t)) in r
        .populations
        .values
        .iter()
        .zip(&r.theory.values)
        .enumerate()
    {
        let m = HalfInteger::from_twice(r.sys.s.two_m_at(k));
        let _ = writeln!(s, "  {m:>4}  {p:.9}  {t:.9}");
    }
    let _ = writeln!(s, "\nconfiguration:\n{}", r.config_echo);
    s
}

pub fn cmd_run(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let r = run_experiment(cfg)?;
    write_report(&r, dir)?;
    Ok(report_summary(&r))
}

pub fn write_report(r: &RunReport, dir: &Path) -> Result<()> {
    write(dir, "config.toml", &r.config_echo)?;
    trace_files(dir, "equilibrium_long", &r.eq_long)?;
    trace_files(dir, "pseudopure_long", &r.pp_long)?;
    trace_files(dir, "equilibrium_short", &r.eq_short)?;
    trace_files(dir, "pseudopure_short", &r.pp_short)?;
    trace_files(dir, "step_c", &r.step_c)?;
    trace_files(dir, "step_e", &r.step_e)?;

    let mut peaks =
        String::from("transition,upper_m,freq_hz,equilibrium,pseudopure,step_c,step_e\n");
    for k in 0..r.eq_short.peaks.len() {
        let m = HalfInteger::from_twice(r.sys.s.two_m_at(k));
        let _ = writeln!(
            peaks,
            "{k},{m},{:.6},{:.12e},{:.12e},{:.12e},{:.12e}",
            crate::experiment::line_frequency_hz(&r.sys, k),
            r.eq_short.peaks.values[k].norm(),
            r.pp_short.peaks.values[k].norm(),
            r.step_c.peaks.values[k].norm(),
            r.step_e.peaks.values[k].norm(),
        );
    }
    write(dir, "peaks.csv", &peaks)?;

    let mut pops = String::from("m_x,measured,theory,error,negative\n");
    for (k, (p, t)) in r
        .populations
        .values
        .iter()
        .zip(&r.theory.values)
        .enumerate()
    {
        let m = HalfInteger::from_twice(r.sys.s.two_m_at(k));
        let _ = writeln!(pops, "{m},{p:.15},{t:.15},{:.3e},{}", p - t, *p < 0.0);
    }
    write(dir, "populations.csv", &pops)?;
    write(dir, "summary.txt", &report_summary(r))?;
    Ok(())
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{},reversal_fidelity,population_error,composite_fidelity,unwanted_fraction\n",
        param.name()
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.12},{:.6e},{:.12},{:.6e}",
            r.value,
            r.reversal_fidelity,
            r.population_error,
            r.composite_fidelity,
            r.unwanted_fraction
        );
    }
    s
}

pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    dir: &Path,
) -> Result<String> {
    if values.is_empty() {
        return Err(crate::error::invalid("values", "need at least one value"));
    }
    let rows = run_sweep(cfg, param, values)?;
    let table = sweep_csv(param, &rows);
    write(dir, &format!("sweep_{}.csv", param.name()), &table)?;
    let summary = format!(
        "sweep over {}\n{}\nconfiguration:\n{}",
        param.name(),
        table,
        cfg.to_toml_string()?
    );
    write(dir, "sweep_summary.txt", &summary)?;
    Ok(summary)
}

pub fn cmd_prep_design(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let r = run_prep_design(cfg)?;
    let sys = cfg.system()?;
    let d = &r.result.design;
    let mut tones = String::from("tone,offset_hz,amplitude_hz,amplitude_over_wq\n");
    for (k, (o, a)) in d.offsets.iter().zip(&d.amplitudes).enumerate() {
        let _ = writeln!(
            tones,
            "{k},{:.6},{:.12e},{:.12e}",
            o / std::f64::consts::TAU,
            a / std::f64::consts::TAU,
            a / sys.quad_coupling
        );
    }
    let mut pops = String::from("m,population\n");
    for (k, p) in r.result.quality.populations.iter().enumerate() {
        let _ = writeln!(
            pops,
            "{},{p:.15e}",
            HalfInteger::from_twice(sys.s.two_m_at(k))
        );
    }
    write(dir, "prep_tones.csv", &tones)?;
    write(dir, "prep_populations.csv", &pops)?;
    write(dir, "prep_peaks.csv", &r.peaks.to_csv(&sys))?;
    let mut s = String::new();
    let _ = writeln!(s, "duration = {:.9e} s", d.duration);
    let _ = writeln!(
        s,
        "variance = {:.6e} (equilibrium {:.6e})",
        r.result.quality.variance, r.result.equilibrium_variance
    );
    let _ = writeln!(
        s,
        "relative spread = {:.6e}",
        r.result.quality.relative_spread
    );
    let _ = writeln!(
        s,
        "residual coherence = {:.6e}",
        r.result.quality.residual_coherence
    );
    let _ = writeln!(s, "largest side peak / target = {:.6e}", r.max_side_peak);
    let _ = writeln!(s, "evaluations = {}", r.result.evaluations);
    s.push_str(&tones);
    let _ = writeln!(s, "\nconfiguration:\n{}", cfg.to_toml_string()?);
    write(dir, "prep_summary.txt", &s)?;
    Ok(s)
}
