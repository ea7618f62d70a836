//! Command implementations. Every command loads a model from the resolved
//! configuration, computes, and emits CSV or JSON. CSV files carry a header
//! row; scalar summaries ride along as one `#`-prefixed JSON line so the
//! table itself stays machine-readable. Floats are printed with 17
//! significant digits, which round-trips binary64.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use cltlab_core::blocks::{
    block_decompose_with_table, identity_check, orthogonality_check, remainder_second_moment,
    BlockDecomposition, OrthogonalityOutcome,
};
use cltlab_core::bridge::{bridge_marginal, bridge_sum_table};
use cltlab_core::fmt_f64;
use cltlab_core::kernel::{ergodicity_report, stationary_law, ErgodicityReport};
use cltlab_core::mixing::{conditions_dossier, ConditionsDossier};
use cltlab_core::moments::{sigma_series, variance_profile, SigmaSeries, VarianceProfile};
use cltlab_core::montecarlo::{
    abs_mean_sigma_exact, abs_mean_sigma_mc, clt_experiment, reference_abs_mean, reference_mixture,
    reference_sigma_series, AbsMeanSigma, Centering, ExperimentReport, ExperimentRun, SeedSpec,
};
use cltlab_core::Model;

use crate::config::{Format, Mode, ReferenceKind, RunConfig, Statistic};
use crate::CliError;

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => Ok(Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn emit_json<T: Serialize>(cfg: &RunConfig, value: &T) -> Result<(), CliError> {
    let mut out = sink(&cfg.output)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| CliError::Config(format!("serialization failed: {e}")))?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct ValidateOut {
    size: usize,
    checksum: String,
    stationarity_residual: f64,
    observable_mean: f64,
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let mean: f64 = (0..model.size())
        .map(|x| model.pi().prob(x) * model.observable()[x])
        .sum();
    let out = ValidateOut {
        size: model.size(),
        checksum: format!("{:016x}", model.checksum()),
        stationarity_residual: model.pi().residual(model.kernel()),
        observable_mean: mean,
    };
    match cfg.format() {
        Format::Json => emit_json(cfg, &out),
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            writeln!(w, "field,value")?;
            writeln!(w, "size,{}", out.size)?;
            writeln!(w, "checksum,{}", out.checksum)?;
            writeln!(
                w,
                "stationarity_residual,{}",
                fmt_f64(out.stationarity_residual)
            )?;
            writeln!(w, "observable_mean,{}", fmt_f64(out.observable_mean))?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct StationaryOut {
    pi: Vec<f64>,
    residual: f64,
    non_unique: bool,
    recurrent_classes: usize,
}

fn solve_stationary(model: &Model, tol: f64) -> Result<StationaryOut, CliError> {
    let sol = stationary_law(model.kernel(), tol)?;
    Ok(StationaryOut {
        residual: sol.law.residual(model.kernel()),
        pi: sol.law.probs().to_vec(),
        non_unique: sol.non_unique,
        recurrent_classes: sol.recurrent_classes,
    })
}

pub fn stationary(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let out = solve_stationary(&model, cfg.tol())?;
    match cfg.format() {
        Format::Json => emit_json(cfg, &out),
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            writeln!(
                w,
                "# {{\"residual\":{},\"non_unique\":{},\"recurrent_classes\":{}}}",
                fmt_f64(out.residual),
                out.non_unique,
                out.recurrent_classes
            )?;
            writeln!(w, "state,pi")?;
            for (x, p) in out.pi.iter().enumerate() {
                writeln!(w, "{x},{}", fmt_f64(*p))?;
            }
            Ok(())
        }
    }
}

pub fn ergodicity(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let report = ergodicity_report(model.kernel(), model.pi())?;
    match cfg.format() {
        Format::Json => emit_json(cfg, &report),
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            writeln!(w, "field,value")?;
            writeln!(w, "support_size,{}", report.support.len())?;
            writeln!(w, "irreducible,{}", report.irreducible)?;
            writeln!(w, "period,{}", report.period)?;
            writeln!(w, "totally_ergodic,{}", report.totally_ergodic)?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MomentsOut {
    variance: VarianceProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_series: Option<SigmaSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_series_error: Option<String>,
}

fn compute_moments(model: &Model, max_n: u64, tol: f64) -> MomentsOut {
    let variance = variance_profile(model, max_n);
    match sigma_series(model, tol) {
        Ok(s) => MomentsOut {
            variance,
            sigma_series: Some(s),
            sigma_series_error: None,
        },
        Err(e) => MomentsOut {
            variance,
            sigma_series: None,
            sigma_series_error: Some(e.to_string()),
        },
    }
}

pub fn moments(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let max_n = cfg.params.max_n.unwrap_or(64);
    let out = compute_moments(&model, max_n, cfg.tol());
    match cfg.format() {
        Format::Json => emit_json(cfg, &out),
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            let series = match (&out.sigma_series, &out.sigma_series_error) {
                (Some(s), _) => format!(
                    "{{\"sigma2\":{},\"truncated_at\":{}}}",
                    fmt_f64(s.sigma2),
                    s.truncated_at
                ),
                (None, Some(e)) => format!("{:?}", e),
                _ => "null".into(),
            };
            writeln!(
                w,
                "# {{\"sup\":{},\"converged_estimate\":{},\"sigma_series\":{series}}}",
                fmt_f64(out.variance.sup),
                out.variance
                    .converged_estimate
                    .map(fmt_f64)
                    .unwrap_or_else(|| "null".into()),
            )?;
            writeln!(w, "n,mean_square_per_n")?;
            for (i, v) in out.variance.values.iter().enumerate() {
                writeln!(w, "{},{}", i + 1, fmt_f64(*v))?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MarginalOut {
    n: u64,
    k: u64,
    x: usize,
    y: usize,
    probs: Vec<f64>,
}

pub fn bridge(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let n = cfg
        .params
        .n
        .ok_or_else(|| CliError::Config("bridge requires params.n (--n)".into()))?;
    if let Some(k) = cfg.params.k {
        let x = cfg
            .params
            .x
            .ok_or_else(|| CliError::Config("bridge marginal requires --x".into()))?;
        let y = cfg
            .params
            .y
            .ok_or_else(|| CliError::Config("bridge marginal requires --y".into()))?;
        let probs = bridge_marginal(model.powers(), n, k, x, y)?;
        let out = MarginalOut { n, k, x, y, probs };
        return match cfg.format() {
            Format::Json => emit_json(cfg, &out),
            Format::Csv => {
                let mut w = sink(&cfg.output)?;
                writeln!(w, "# {{\"n\":{n},\"k\":{k},\"x\":{x},\"y\":{y}}}")?;
                writeln!(w, "z,prob")?;
                for (z, p) in out.probs.iter().enumerate() {
                    writeln!(w, "{z},{}", fmt_f64(*p))?;
                }
                Ok(())
            }
        };
    }
    let table = bridge_sum_table(&model, n);
    match cfg.format() {
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            table.write_csv(&model, &mut w)?;
            Ok(())
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Cell {
                x: usize,
                y: usize,
                reachable: bool,
                #[serde(skip_serializing_if = "Option::is_none")]
                value: Option<f64>,
            }
            #[derive(Serialize)]
            struct TableOut {
                n: u64,
                model_checksum: String,
                cells: Vec<Cell>,
            }
            let mut cells = Vec::new();
            for x in 0..model.size() {
                for y in 0..model.size() {
                    cells.push(Cell {
                        x,
                        y,
                        reachable: table.reachable(x, y),
                        value: table.value(x, y),
                    });
                }
            }
            emit_json(
                cfg,
                &TableOut {
                    n,
                    model_checksum: format!("{:016x}", model.checksum()),
                    cells,
                },
            )
        }
    }
}

pub fn conditions(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let max_n = cfg.params.max_n.unwrap_or(64);
    let dossier = conditions_dossier(&model, max_n)?;
    match cfg.format() {
        Format::Json => emit_json(cfg, &dossier),
        Format::Csv => {
            {
                let mut w = sink(&cfg.output)?;
                dossier.profile.write_csv(&mut w)?;
            }
            // Verdicts go to the channel not carrying the table so the CSV
            // stays parseable.
            let mut v: Box<dyn Write> = if cfg.output.is_some() {
                Box::new(std::io::stdout().lock())
            } else {
                Box::new(std::io::stderr().lock())
            };
            for verdict in &dossier.verdicts {
                writeln!(
                    v,
                    "{}: {} ({})",
                    verdict.id.name(),
                    verdict.verdict,
                    verdict.evidence
                )?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct BlocksOut {
    m: u64,
    u: u64,
    n: u64,
    master_seed: u64,
    decomposition: BlockDecomposition,
    #[serde(skip_serializing_if = "Option::is_none")]
    remainder_second_moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    identity_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget_note: Option<String>,
    orthogonality: OrthogonalityOutcome,
}

pub fn blocks(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let m = cfg.params.m.unwrap_or(2);
    let u = cfg.params.u.unwrap_or(4);
    if m < 1 || u < 2 {
        return Err(CliError::Config("blocks requires m >= 1 and u >= 2".into()));
    }
    let n = cfg.params.n.unwrap_or(m * u);
    let reps = cfg.params.reps.unwrap_or(10_000);
    let seed = SeedSpec::new(cfg.seed());

    let table = bridge_sum_table(&model, m);
    let sampler = cltlab_core::montecarlo::PathSampler::new(&model);
    // The analyzed path is replication 0 of the master seed.
    let mut stream = seed.stream(0);
    let path = sampler.sample_path(n, &mut stream);
    let decomposition = block_decompose_with_table(&model, &table, &path, m)?;

    let (remainder, identity, note) = match remainder_second_moment(&model, m, u) {
        Ok(r) => (Some(r), Some(identity_check(&model, m, u)?), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    let orthogonality = orthogonality_check(&model, m, u, reps, seed, cfg.workers())?;
    let out = BlocksOut {
        m,
        u,
        n,
        master_seed: seed.master,
        decomposition,
        remainder_second_moment: remainder,
        identity_residual: identity,
        budget_note: note,
        orthogonality,
    };
    match cfg.format() {
        Format::Json => emit_json(cfg, &out),
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            let aggregate = serde_json::json!({
                "m": out.m,
                "u": out.u,
                "n": out.n,
                "master_seed": out.master_seed,
                "martingale_sum": out.decomposition.martingale_sum,
                "remainder_sum": out.decomposition.remainder_sum,
                "tail": out.decomposition.tail,
                "remainder_second_moment": out.remainder_second_moment,
                "identity_residual": out.identity_residual,
                "budget_note": out.budget_note,
                "orthogonality": out.orthogonality,
            });
            writeln!(w, "# {aggregate}")?;
            out.decomposition.write_csv(&mut w)?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum SimulateOut {
    Clt(ExperimentReport),
    AbsMean {
        n: u64,
        mode: Mode,
        #[serde(flatten)]
        result: AbsMeanSigma,
    },
}

fn run_clt(cfg: &RunConfig, model: &Model, n: u64) -> Result<ExperimentRun, CliError> {
    let reps = cfg.params.reps.unwrap_or(10_000);
    let centering = cfg.params.centering.unwrap_or(Centering::Endpoint);
    let reference = match cfg.params.reference.unwrap_or(ReferenceKind::Mixture) {
        ReferenceKind::Mixture => reference_mixture(model, n)?,
        ReferenceKind::SigmaSeries => reference_sigma_series(model, cfg.tol())?,
        ReferenceKind::AbsMean => reference_abs_mean(model, n)?,
    };
    let table = match centering {
        Centering::Endpoint => Some(bridge_sum_table(model, n)),
        Centering::None => None,
    };
    let run = clt_experiment(
        model,
        n,
        reps,
        SeedSpec::new(cfg.seed()),
        centering,
        &reference,
        table.as_ref(),
        cfg.workers(),
    )?;
    if let Some(path) = &cfg.raw_output {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "statistic")?;
        for v in &run.statistics {
            writeln!(w, "{}", fmt_f64(*v))?;
        }
    }
    Ok(run)
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _) = cfg.resolve_model()?;
    let n = cfg.params.n.unwrap_or(1024);
    let statistic = cfg.params.statistic.unwrap_or(Statistic::Clt);
    let out = match statistic {
        Statistic::Clt => SimulateOut::Clt(run_clt(cfg, &model, n)?.report),
        Statistic::AbsMean => {
            let mode = cfg.params.mode.unwrap_or(Mode::Exact);
            let result = match mode {
                Mode::Exact => abs_mean_sigma_exact(&model, n)?,
                Mode::Mc => abs_mean_sigma_mc(
                    &model,
                    n,
                    cfg.params.reps.unwrap_or(10_000),
                    SeedSpec::new(cfg.seed()),
                    cfg.workers(),
                )?,
            };
            SimulateOut::AbsMean { n, mode, result }
        }
    };
    match cfg.format() {
        Format::Json => emit_json(cfg, &out),
        Format::Csv => {
            let mut w = sink(&cfg.output)?;
            match &out {
                SimulateOut::Clt(report) => {
                    writeln!(
                        w,
                        "n,reps,centering,master_seed,mean,variance,mean_hw99,variance_hw99,statistic,value,reference,provenance"
                    )?;
                    let (stat_name, stat_value) = match report.statistic {
                        cltlab_core::GoodnessOfFit::Ks { distance } => ("ks", distance),
                        cltlab_core::GoodnessOfFit::MaxAbs { value } => ("max_abs", value),
                    };
                    let components = report
                        .reference
                        .components
                        .iter()
                        .map(|c| format!("{}:{}", fmt_f64(c.weight), fmt_f64(c.sigma2)))
                        .collect::<Vec<_>>()
                        .join(";");
                    let centering = match report.centering {
                        Centering::Endpoint => "endpoint",
                        Centering::None => "none",
                    };
                    let provenance = serde_json::to_string(&report.reference.provenance)
                        .map_err(|e| CliError::Config(format!("provenance serialization: {e}")))?;
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        report.n,
                        report.reps,
                        centering,
                        report.master_seed,
                        fmt_f64(report.mean),
                        fmt_f64(report.variance),
                        fmt_f64(report.mean_half_width_99),
                        fmt_f64(report.variance_half_width_99),
                        stat_name,
                        fmt_f64(stat_value),
                        components,
                        provenance.replace(',', ";").replace('"', "'"),
                    )?;
                }
                SimulateOut::AbsMean { n, mode, result } => {
                    writeln!(w, "n,mode,sigma2,mean_abs,half_width_99")?;
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        n,
                        match mode {
                            Mode::Exact => "exact",
                            Mode::Mc => "mc",
                        },
                        fmt_f64(result.sigma2),
                        fmt_f64(result.mean_abs),
                        result
                            .half_width_99
                            .map(fmt_f64)
                            .unwrap_or_else(|| "".into()),
                    )?;
                }
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct IdentityRow {
    m: u64,
    u: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct Dossier {
    config: RunConfig,
    model_name: String,
    validate: ValidateOut,
    stationary: StationaryOut,
    ergodicity: ErgodicityReport,
    moments: MomentsOut,
    conditions: ConditionsDossier,
    block_identity: Vec<IdentityRow>,
    simulate: ExperimentReport,
}

/// One-shot full dossier. The echoed `config` field reproduces this exact
/// report when fed back through `--config`.
pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, model_name) = cfg.resolve_model()?;
    let max_n = cfg.params.max_n.unwrap_or(64);
    let n = cfg.params.n.unwrap_or(1024);
    let reps = cfg.params.reps.unwrap_or(2000);

    let mut resolved = cfg.clone();
    resolved.command = Some("report".into());
    resolved.params.max_n = Some(max_n);
    resolved.params.n = Some(n);
    resolved.params.reps = Some(reps);
    resolved.params.seed = Some(cfg.seed());
    resolved.params.workers = Some(cfg.workers());
    resolved.params.tol = Some(cfg.tol());
    resolved.params.centering = Some(cfg.params.centering.unwrap_or(Centering::Endpoint));
    resolved.format = Some(Format::Json);
    // The echo reproduces the numbers, not the destination: output paths are
    // left to the rerun invocation.
    resolved.output = None;
    resolved.raw_output = None;

    let mean: f64 = (0..model.size())
        .map(|x| model.pi().prob(x) * model.observable()[x])
        .sum();
    let validate = ValidateOut {
        size: model.size(),
        checksum: format!("{:016x}", model.checksum()),
        stationarity_residual: model.pi().residual(model.kernel()),
        observable_mean: mean,
    };
    let stationary = solve_stationary(&model, resolved.tol())?;
    let ergodicity = ergodicity_report(model.kernel(), model.pi())?;
    let moments = compute_moments(&model, max_n, resolved.tol());
    let conditions = conditions_dossier(&model, max_n)?;

    let mut block_identity = Vec::new();
    for m in [2u64, 4, 8] {
        for u in [2u64, 4, 8] {
            match identity_check(&model, m, u) {
                Ok(residual) => block_identity.push(IdentityRow {
                    m,
                    u,
                    residual: Some(residual),
                    note: None,
                }),
                Err(e) => block_identity.push(IdentityRow {
                    m,
                    u,
                    residual: None,
                    note: Some(e.to_string()),
                }),
            }
        }
    }

    let simulate = run_clt(&resolved, &model, n)?.report;

    let dossier = Dossier {
        config: resolved,
        model_name,
        validate,
        stationary,
        ergodicity,
        moments,
        conditions,
        block_identity,
        simulate,
    };
    emit_json(cfg, &dossier)
}
