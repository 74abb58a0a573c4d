//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use pacer_core::backend::http::{HttpBackend, HttpBackendConfig};
use pacer_core::backend::record::{RecordReader, RecordSink, ReplayBackend};
use pacer_core::extract::canonicalize;
use pacer_core::pipeline;
use pacer_core::report::{pareto_csv, RunReport};
use pacer_core::stability::StabilityTrajectory;
use pacer_core::theory::{
    chernoff_bound, post_review_accuracy, simulate_revision, simulate_vote_error, EnsembleModel,
    RateFn, RevisionModel, WeightDistribution,
};

use crate::args::{
    InspectCmd, ParetoCmd, ReplayCmd, RunCmd, SimulateCmd, SimulateMode, WeightsArg,
};

fn emit_report(report: &RunReport, json: bool, out: Option<&Path>) -> Result<()> {
    let rendered = report.to_json();
    if let Some(path) = out {
        std::fs::write(path, &rendered)
            .with_context(|| format!("writing report to {}", path.display()))?;
    }
    if json {
        println!("{rendered}");
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

pub fn run(cmd: RunCmd) -> Result<()> {
    let (config, backend_section) = cmd.overrides.resolve()?;
    let (problem, default_id) = match (&cmd.problem_file, &cmd.prompt) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading problem file {}", path.display()))?;
            let stem =
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (text, stem)
        }
        (None, Some(text)) => (text.clone(), "problem".to_string()),
        _ => bail!("provide exactly one of --problem-file or --prompt"),
    };
    let problem_id = cmd.problem_id.unwrap_or(default_id);

    let mut http_config = HttpBackendConfig::default();
    if let Some(url) = cmd.base_url.or(backend_section.base_url) {
        http_config.base_url = url;
    }
    if let Some(env_name) = cmd.api_key_env.or(backend_section.api_key_env) {
        http_config.api_key_env = Some(env_name);
    }
    let backend = HttpBackend::new(http_config)?;

    let sink = match &cmd.record {
        Some(path) => Some(RecordSink::create(path)?),
        None => None,
    };
    let report = pipeline::run(&config, &backend, &problem_id, &problem, sink.as_ref())?;
    emit_report(&report, cmd.json, cmd.out.as_deref())
}

pub fn replay(cmd: ReplayCmd) -> Result<()> {
    let (config, _) = cmd.overrides.resolve()?;
    let backend = ReplayBackend::open(&cmd.store)?;
    let problem = match cmd.prompt {
        Some(text) => text,
        None => first_prompt(&cmd.store)?,
    };
    let problem_id = cmd.problem_id.unwrap_or_else(|| {
        cmd.store.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let report = pipeline::run(&config, &backend, &problem_id, &problem, None)?;
    emit_report(&report, cmd.json, cmd.out.as_deref())
}

fn first_prompt(store: &Path) -> Result<String> {
    let mut reader = RecordReader::open(store)?;
    let record = reader
        .next()
        .context("record store has no records to take the problem prompt from")??;
    Ok(record.request.prompt)
}

fn write_csv(out: Option<&PathBuf>, csv: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("writing CSV to {}", path.display())),
        None => {
            print!("{csv}");
            std::io::stdout().flush()?;
            Ok(())
        }
    }
}

pub fn simulate(cmd: SimulateCmd) -> Result<()> {
    let weights = match cmd.weights {
        WeightsArg::Unit => WeightDistribution::Unit,
        WeightsArg::LogNormal => {
            WeightDistribution::LogNormal { mu: cmd.weight_mu, sigma: cmd.weight_sigma }
        }
    };
    let csv = match cmd.mode {
        SimulateMode::VoteSweep | SimulateMode::VotePoint => {
            let (pool_sizes, p_primes) = if cmd.mode == SimulateMode::VotePoint {
                (vec![cmd.pool_sizes[0]], vec![cmd.p_primes[0]])
            } else {
                (cmd.pool_sizes.clone(), cmd.p_primes.clone())
            };
            let mut csv =
                String::from("pool_size,p_prime,empirical_error,chernoff_bound,trials,seed\n");
            for &pool_size in &pool_sizes {
                for &p_prime in &p_primes {
                    let model = EnsembleModel {
                        pool_size,
                        p_prime,
                        wrong_answer_arity: cmd.arity,
                        weights,
                    };
                    let est = simulate_vote_error(&model, cmd.trials, cmd.seed);
                    let bound =
                        chernoff_bound(pool_size, p_prime).map_or(f64::NAN, |b| b);
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        pool_size, p_prime, est.value, bound, cmd.trials, cmd.seed
                    ));
                }
            }
            csv
        }
        SimulateMode::Revision => {
            let model = RevisionModel {
                p: cmd.p,
                alpha: RateFn::Const(cmd.alpha),
                beta: RateFn::Const(cmd.beta),
                wrong_answer_arity: cmd.arity,
            };
            let closed = post_review_accuracy(cmd.p, cmd.alpha, cmd.beta)?;
            let mut csv = String::from(
                "margin,alpha,beta,pre_accuracy,pre_se,post_accuracy,post_se,closed_form,trials,seed\n",
            );
            for &margin in &cmd.margins {
                let est = simulate_revision(&model, margin, cmd.trials, cmd.seed);
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    margin,
                    cmd.alpha,
                    cmd.beta,
                    est.pre.value,
                    est.pre.std_error,
                    est.post.value,
                    est.post.std_error,
                    closed,
                    cmd.trials,
                    cmd.seed
                ));
            }
            csv
        }
    };
    write_csv(cmd.out.as_ref(), &csv)
}

pub fn pareto(cmd: ParetoCmd) -> Result<()> {
    let truth = read_truth(&cmd.truth)?;
    let mut reports = Vec::with_capacity(cmd.reports.len());
    for path in &cmd.reports {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        reports.push(
            RunReport::from_json(&raw)
                .with_context(|| format!("parsing report {}", path.display()))?,
        );
    }
    let (rows, warnings) = pacer_core::report::pareto(&reports, &truth);
    for warning in warnings {
        eprintln!("warning: {warning}");
    }
    write_csv(cmd.out.as_ref(), &pareto_csv(&rows))
}

/// Two columns per line: problem id, then the answer (canonicalized here so
/// matching uses the same vote keys as the engine). `#` starts a comment.
fn read_truth(path: &Path) -> Result<BTreeMap<String, String>> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading ground truth {}", path.display()))?;
    let mut truth = BTreeMap::new();
    for (no, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, answer)) = line.split_once(char::is_whitespace) else {
            bail!("ground truth line {} has no answer column: {line:?}", no + 1);
        };
        let canonical = canonicalize(answer)
            .with_context(|| format!("ground truth line {}", no + 1))?;
        truth.insert(id.to_string(), canonical.canonical);
    }
    Ok(truth)
}

pub fn inspect(cmd: InspectCmd) -> Result<()> {
    let record = {
        let mut found = None;
        for item in RecordReader::open(&cmd.store)? {
            let record = item?;
            if cmd.tag.as_deref().is_none_or(|t| t == record.trace_id) {
                found = Some(record);
                break;
            }
        }
        found.with_context(|| match &cmd.tag {
            Some(tag) => format!("no record tagged {tag:?} in {}", cmd.store.display()),
            None => format!("{} holds no records", cmd.store.display()),
        })?
    };
    let k = cmd.k.unwrap_or(record.request.top_logprobs.max(1));
    let trajectory = StabilityTrajectory::from_steps(&record.steps, cmd.window, k)
        .map_err(|e| anyhow::anyhow!("cannot recompute trajectory: {e}"))?;

    println!(
        "trace {} (finish: {:?}, steps: {}, k={k}, window={})",
        record.trace_id,
        record.finish_reason,
        record.steps.len(),
        cmd.window
    );
    println!("{:>6}  {:>12}  {:>12}  {:>12}  token", "t", "U", "Ubar", "S");
    for (i, step) in record.steps.iter().enumerate() {
        println!(
            "{:>6}  {:>12.6}  {:>12.6}  {:>12.6}  {:?}",
            i + 1,
            trajectory.uncertainty[i],
            trajectory.windowed[i],
            trajectory.stability[i],
            step.token_text
        );
    }
    println!("final stability: {}", trajectory.final_stability);
    Ok(())
}
