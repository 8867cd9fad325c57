//! The six subcommands. Each builds its artifacts inside one
//! [`OutputDir`](crate::output::OutputDir), which guarantees the manifest
//! lists every file written.

use std::path::Path;

use serde_json::json;

use prethermal_core::lattice::{generate_lattice, generate_lattice_with_count, sample_disorder};
use prethermal_core::operators::HamiltonianSet;
use prethermal_core::propagation::{
    average_traces, cycle_unitary, evolve_survival, evolve_with_ac_field, EvolutionTrace,
    PulseSequenceSpec,
};
use prethermal_core::{
    decay_rate_scaling, detect_cusp, fit_multi_exponential, fit_stretched_exponential,
    harmonic_spectrum, median_coupling, one_over_e_lifetime, segment_regimes, DecayTrace,
    ScalingAxes, SegmentationOptions, SpinLattice, StretchedFit,
};

use crate::config::{apply_sweep_value, AnalysisRequest, ExperimentConfig, SweepParameter};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::output::OutputDir;
use crate::pool::run_ordered;

/// Console context: `quiet` suppresses informational lines, never errors.
#[derive(Debug, Clone, Copy)]
pub struct Console {
    pub quiet: bool,
}

impl Console {
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

// ---------------------------------------------------------------------------
// Shared realization runner
// ---------------------------------------------------------------------------

/// One disorder realization: lattice draw, field draw, full pulse-train
/// evolution. Returns the trace and the realization's median coupling.
fn run_realization(
    cfg: &ExperimentConfig,
    seq: &PulseSequenceSpec,
    job: u64,
) -> Result<(EvolutionTrace, f64), CliError> {
    let lat = realize_lattice(cfg, job)?;
    let j_median = median_coupling(&lat).map_err(CliError::runtime)?;
    let h = HamiltonianSet::from_lattice(&lat).map_err(CliError::runtime)?;
    let trace = if seq.ac_field.is_some() {
        evolve_with_ac_field(&h, seq).map_err(CliError::runtime)?
    } else {
        let prop = cycle_unitary(&h, seq).map_err(CliError::runtime)?;
        evolve_survival(&prop, seq.pulse_count)
    };
    Ok((trace, j_median))
}

fn realize_lattice(cfg: &ExperimentConfig, job: u64) -> Result<SpinLattice, CliError> {
    let seeds = cfg.job_seeds(job);
    let mut lattice_cfg = cfg.lattice.clone();
    lattice_cfg.rng_seed = seeds.lattice_seed;
    let bare = match cfg.lattice_spin_count {
        Some(n) => generate_lattice_with_count(&lattice_cfg, n, cfg.lattice_max_attempts),
        None => generate_lattice(&lattice_cfg),
    }
    .map_err(CliError::runtime)?;
    let mut model = cfg.disorder.clone();
    model.rng_seed = seeds.disorder_seed;
    sample_disorder(&bare, &model).map_err(CliError::runtime)
}

/// Ensemble median of per-realization medians (midpoint convention).
fn ensemble_median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub fn cmd_generate(cfg: &ExperimentConfig, console: Console) -> Result<(), CliError> {
    let manifest = RunManifest::new("generate", cfg.master_seed, Some(cfg.config_hash()));
    let mut out = OutputDir::create(&cfg.output_dir, manifest)?;
    let lat = realize_lattice(cfg, 0)?;
    out.manifest_mut().job_seeds.push(cfg.job_seeds(0));
    out.mark_phase("generate");
    let json = serde_json::to_string_pretty(&lat).map_err(CliError::runtime)?;
    out.write_string("lattice.json", &(json + "\n"))?;
    out.mark_phase("io");
    let j = median_coupling(&lat).map_err(CliError::runtime)?;
    console.say(format!(
        "spins={} median_coupling_hz={j:.6}",
        lat.positions.len()
    ));
    out.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(cfg: &ExperimentConfig, console: Console) -> Result<(), CliError> {
    let manifest = RunManifest::new("simulate", cfg.master_seed, Some(cfg.config_hash()));
    let mut out = OutputDir::create(&cfg.output_dir, manifest)?;
    let r_count = cfg.realizations;
    let results = run_ordered(r_count, cfg.workers, |r| {
        run_realization(cfg, &cfg.sequence, r as u64)
    })?;
    out.mark_phase("evolve");

    let mut traces = Vec::with_capacity(r_count);
    let mut medians = Vec::with_capacity(r_count);
    for (r, result) in results.into_iter().enumerate() {
        let (trace, j) = result?;
        out.manifest_mut().job_seeds.push(cfg.job_seeds(r as u64));
        out.write_string(&format!("realization_{r:03}.csv"), &trace.to_csv_string())?;
        traces.push(trace);
        medians.push(j);
    }
    let mean = average_traces(&traces).map_err(CliError::runtime)?;
    out.write_string("mean.csv", &mean.to_csv_string())?;
    out.mark_phase("io");

    let j_ens = ensemble_median(medians);
    let zeta = j_ens * cfg.sequence.spacing_s;
    console.say(format!(
        "realizations={r_count} J_median_hz={j_ens:.6} zeta={zeta:.6}"
    ));
    out.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn cmd_sweep(cfg: &ExperimentConfig, console: Console) -> Result<(), CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("sweep requires a [sweep] section"))?;
    let manifest = RunManifest::new("sweep", cfg.master_seed, Some(cfg.config_hash()));
    let mut out = OutputDir::create(&cfg.output_dir, manifest)?;

    let r_count = cfg.realizations;
    let n_points = sweep.values.len();
    let sequences: Vec<PulseSequenceSpec> = sweep
        .values
        .iter()
        .map(|&v| apply_sweep_value(&cfg.sequence, sweep.parameter, v))
        .collect::<Result<_, _>>()?;

    // One job per (point, realization), parallel across all of them.
    let results = run_ordered(n_points * r_count, cfg.workers, |j| {
        let point = j / r_count;
        run_realization(cfg, &sequences[point], j as u64)
    })?;
    out.mark_phase("evolve");

    let mut failures: Vec<String> = Vec::new();
    let mut scaling_points: Vec<(f64, StretchedFit)> = Vec::new();
    for (p, chunk) in results.chunks(r_count).enumerate() {
        let value = sweep.values[p];
        let mut traces = Vec::with_capacity(r_count);
        let mut medians = Vec::with_capacity(r_count);
        let mut point_error: Option<String> = None;
        for (r, result) in chunk.iter().enumerate() {
            match result {
                Ok((trace, j)) => {
                    traces.push(trace.clone());
                    medians.push(*j);
                    out.manifest_mut()
                        .job_seeds
                        .push(cfg.job_seeds((p * r_count + r) as u64));
                }
                Err(err) => {
                    point_error = Some(format!("point {p} (value {value}): {err}"));
                    break;
                }
            }
        }
        if let Some(err) = point_error {
            failures.push(err);
            continue;
        }
        let mean = average_traces(&traces).map_err(CliError::runtime)?;
        let prefix = format!("point_{p:02}");
        out.write_string(&format!("{prefix}_mean.csv"), &mean.to_csv_string())?;

        let decay = DecayTrace::from_survival_magnitudes(&mean);
        match run_analyses(&mut out, &prefix, &decay, &cfg.analysis) {
            Ok(()) => {}
            Err(err) => {
                failures.push(format!("point {p} (value {value}): {err}"));
                continue;
            }
        }
        match fit_stretched_exponential(&decay, cfg.analysis.alpha_fixed) {
            Ok(fit) => {
                let x = match sweep.parameter {
                    // Dimensionless drive period zeta = J tau.
                    SweepParameter::Tau => ensemble_median(medians) * value,
                    SweepParameter::Theta => value,
                    // Angular frequency for the loglog axes.
                    SweepParameter::FAc => std::f64::consts::TAU * value,
                };
                scaling_points.push((x, fit));
            }
            Err(err) => failures.push(format!("point {p} (value {value}): {err}")),
        }
    }

    if scaling_points.len() >= 3 {
        let axes = match sweep.parameter {
            SweepParameter::Tau | SweepParameter::Theta => ScalingAxes::SemilogRateVsPeriod,
            SweepParameter::FAc => ScalingAxes::LoglogLifetimeVsFrequency,
        };
        let fit = decay_rate_scaling(&scaling_points, axes).map_err(CliError::runtime)?;
        let xs: Vec<f64> = scaling_points.iter().map(|(x, _)| *x).collect();
        let lifetimes: Vec<f64> = scaling_points.iter().map(|(_, f)| f.lifetime_s).collect();
        out.write_json(
            "scaling.json",
            &json!({
                "parameter": sweep.parameter,
                "abscissa": xs,
                "lifetimes_s": lifetimes,
                "fit": fit,
            }),
        )?;
    } else {
        console.say(format!(
            "scaling fit skipped: {} usable points (< 3)",
            scaling_points.len()
        ));
    }
    out.mark_phase("analyze");
    console.say(format!(
        "sweep points={} completed={} failed={}",
        n_points,
        n_points - failures.len(),
        failures.len()
    ));
    out.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::PartialSweep(failures))
    }
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

pub fn cmd_pipeline(
    cfg: &ExperimentConfig,
    trace_path: Option<&Path>,
    console: Console,
) -> Result<(), CliError> {
    let acq = cfg
        .acquisition
        .as_ref()
        .ok_or_else(|| CliError::config("pipeline requires an [acquisition] section"))?;
    let manifest = RunManifest::new("pipeline", cfg.master_seed, Some(cfg.config_hash()));
    let mut out = OutputDir::create(&cfg.output_dir, manifest)?;

    let survival = match trace_path {
        Some(path) => EvolutionTrace::read_csv(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        None => {
            let (trace, _) = run_realization(cfg, &cfg.sequence, 0)?;
            out.manifest_mut().job_seeds.push(cfg.job_seeds(0));
            out.write_string("survival.csv", &trace.to_csv_string())?;
            trace
        }
    };
    out.mark_phase("evolve");

    let decay =
        prethermal_core::pipeline_round_trip(&survival, acq).map_err(CliError::runtime)?;
    out.write_string("decay_trace.csv", &decay.to_csv_string())?;
    out.mark_phase("acquire");

    // Round-trip diagnostic against the known polarization scaling.
    let mut sum_sq = 0.0f64;
    let mut n_used = 0usize;
    for (s, a) in survival.survival.iter().zip(&decay.amplitudes) {
        let target = s.abs() * acq.polarization_scale;
        if target > 1e-12 {
            sum_sq += ((a - target) / target).powi(2);
            n_used += 1;
        }
    }
    if n_used > 0 {
        console.say(format!(
            "pipeline rms relative error = {:.3e} over {n_used} points",
            (sum_sq / n_used as f64).sqrt()
        ));
    }
    out.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Load either trace flavor: survival CSVs are rectified into decay traces.
pub fn load_decay_trace(path: &Path) -> Result<DecayTrace, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let header = text.lines().nth(1).unwrap_or_default();
    if header.starts_with("time_s,survival") {
        let trace = EvolutionTrace::from_csv_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(DecayTrace::from_survival_magnitudes(&trace))
    } else {
        DecayTrace::from_csv_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

pub fn cmd_analyze(
    cfg: Option<&ExperimentConfig>,
    trace_path: &Path,
    names: &[String],
    output_dir: &Path,
    master_seed: u64,
    console: Console,
) -> Result<(), CliError> {
    let default_request = AnalysisRequest::default();
    let request = cfg.map(|c| &c.analysis).unwrap_or(&default_request);
    let names: Vec<String> = if names.is_empty() {
        request.requested.clone()
    } else {
        names.to_vec()
    };
    for name in &names {
        if !crate::config::KNOWN_ANALYSES.contains(&name.as_str()) {
            return Err(CliError::config(format!(
                "unknown analysis '{name}'; known: {}",
                crate::config::KNOWN_ANALYSES.join(", ")
            )));
        }
    }

    let manifest = RunManifest::new("analyze", master_seed, cfg.map(|c| c.config_hash()));
    let mut out = OutputDir::create(output_dir, manifest)?;
    let decay = load_decay_trace(trace_path)?;

    // Plot-ready coordinate files are always emitted; rows with nonpositive
    // amplitude cannot be drawn on a log axis and are dropped.
    let mut semilog = String::from("time_s,ln_amplitude\n");
    let mut sqrt_axis = String::from("sqrt_time_s,ln_amplitude\n");
    for (t, a) in decay.times.iter().zip(&decay.amplitudes) {
        if *a > 0.0 {
            semilog.push_str(&format!("{t},{}\n", a.ln()));
            sqrt_axis.push_str(&format!("{},{}\n", t.sqrt(), a.ln()));
        }
    }
    out.write_string("plot_semilog.csv", &semilog)?;
    out.write_string("plot_sqrt.csv", &sqrt_axis)?;

    run_named_analyses(&mut out, "", &decay, request, &names)?;
    out.mark_phase("analyze");
    console.say(format!(
        "analyses=[{}] points={}",
        names.join(", "),
        decay.len()
    ));
    out.finish()?;
    Ok(())
}

/// Run the request's analyses (used per sweep point).
fn run_analyses(
    out: &mut OutputDir,
    prefix: &str,
    decay: &DecayTrace,
    request: &AnalysisRequest,
) -> Result<(), CliError> {
    run_named_analyses(out, prefix, decay, request, &request.requested)
}

fn run_named_analyses(
    out: &mut OutputDir,
    prefix: &str,
    decay: &DecayTrace,
    request: &AnalysisRequest,
    names: &[String],
) -> Result<(), CliError> {
    let file_name = |stem: &str| {
        if prefix.is_empty() {
            format!("{stem}.json")
        } else {
            format!("{prefix}_{stem}.json")
        }
    };
    for name in names {
        match name.as_str() {
            "stretched" => {
                let fit = fit_stretched_exponential(decay, request.alpha_fixed)
                    .map_err(CliError::runtime)?;
                let report = fit.report(decay.len(), request.alpha_fixed);
                out.write_json(&file_name("stretched"), &report)?;
            }
            "multiexp" => {
                let fit = fit_multi_exponential(decay, request.multiexp_terms)
                    .map_err(CliError::runtime)?;
                let report = fit.report(decay.len());
                out.write_json(&file_name("multiexp"), &report)?;
            }
            "lifetime" => {
                let t = one_over_e_lifetime(decay).map_err(CliError::runtime)?;
                out.write_json(&file_name("lifetime"), &json!({ "lifetime_s": t }))?;
            }
            "cusp" => {
                let cusp = detect_cusp(decay).map_err(CliError::runtime)?;
                out.write_json(&file_name("cusp"), &cusp)?;
            }
            "segmentation" => {
                let options = SegmentationOptions {
                    smoothing_window_s: request.smoothing_window_s,
                    epsilon_infinity: request
                        .epsilon_infinity
                        .unwrap_or(SegmentationOptions::default().epsilon_infinity),
                    ..SegmentationOptions::default()
                };
                let seg = segment_regimes(decay, &options).map_err(CliError::runtime)?;
                out.write_json(&file_name("segmentation"), &seg)?;
            }
            "spectrum" => {
                let tau = uniform_spacing(&decay.times)?;
                let spectrum =
                    harmonic_spectrum(&decay.amplitudes, tau).map_err(CliError::runtime)?;
                out.write_json(&file_name("spectrum"), &spectrum)?;
            }
            other => {
                return Err(CliError::config(format!("unknown analysis '{other}'")));
            }
        }
    }
    Ok(())
}

/// Harmonic spectra need per-pulse sampling; recover tau from the time axis
/// and insist it is uniform.
fn uniform_spacing(times: &[f64]) -> Result<f64, CliError> {
    if times.len() < 2 {
        return Err(CliError::runtime("trace too short for a spectrum"));
    }
    let tau = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - tau).abs() > 1e-9 * tau.abs() {
            return Err(CliError::runtime(
                "spectrum needs uniformly sampled times",
            ));
        }
    }
    Ok(tau)
}

// ---------------------------------------------------------------------------
// version
// ---------------------------------------------------------------------------

pub fn cmd_version() {
    println!("prethermal {}", env!("CARGO_PKG_VERSION"));
}
