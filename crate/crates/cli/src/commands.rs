//! The subcommands.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use treeprune::cutdown::{cutdown_batch, moment_table_csv, theta_moment, MomentMode, MomentValue};
use treeprune::generators::{enumerate_plane_trees, gw_conditioned, gw_conditioned_by_rejection, lukasiewicz_word, OffspringDistribution};
use treeprune::pruning::{generator_genpsi, generator_jump, mc_expectation, semigroup_exact, simulate};
use treeprune::rng;
use treeprune::statistics::convergence_report;
use treeprune::stats::{chi_square_gof, loglog_slope};
use treeprune::testfn::{default_suite, TestFunction};
use treeprune::Error;

use crate::config::{csv_header_line, parse_list, usage, CliError, CliResult};
use crate::source::{instance_rng, SourceArgs, TreeFile};

/// Test-function selection shared by several commands.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct PsiArgs {
    /// Comma-separated ids from the default suite, or mass_pow_<n>; default: the whole suite.
    #[arg(long)]
    pub psi: Option<String>,
    /// JSON array of test functions, used instead of --psi.
    #[arg(long)]
    pub psi_file: Option<PathBuf>,
}

impl PsiArgs {
    pub fn select(&self) -> CliResult<Vec<TestFunction>> {
        if let Some(p) = &self.psi_file {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
            let list: Vec<TestFunction> =
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            for psi in &list {
                psi.validate()?;
            }
            return Ok(list);
        }
        let suite = default_suite();
        let Some(ids) = &self.psi else { return Ok(suite) };
        ids.split(',')
            .map(|id| {
                let id = id.trim();
                if let Some(n) = id.strip_prefix("mass_pow_") {
                    let n = n.parse().map_err(|_| CliError::Usage(format!("bad test function '{id}'")))?;
                    return Ok(TestFunction::mass_power(n));
                }
                suite
                    .iter()
                    .find(|p| p.id == id)
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("unknown test function '{id}'")))
            })
            .collect()
    }
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage("--seed is required".into()))
}

fn require_positive(what: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return usage(format!("--{what} must be positive"));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

fn mode_only<T>(r: treeprune::Result<T>) -> CliResult<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Mode(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn generate(mut a: GenerateArgs) -> CliResult<(Value, String)> {
    let seed = require_seed(a.seed)?;
    if a.source.tree.is_some() {
        return usage("generate draws a new tree; use --family and --nodes");
    }
    a.source.resolve("ske", "ske")?;
    let config = crate::config::embed("generate", &a);
    let x = a.source.load()?.instance(&mut instance_rng(seed))?;
    let file = TreeFile { config: Some(config.clone()), x: x.to_json() };
    let mut text = serde_json::to_string_pretty(&file).expect("tree serializes");
    text.push('\n');
    Ok((config, text))
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct PruneArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    /// Simulate cuts on [0, horizon].
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn prune(mut a: PruneArgs) -> CliResult<(Value, String)> {
    let seed = require_seed(a.seed)?;
    a.source.resolve("ske", "ske")?;
    let config = crate::config::embed("prune", &a);
    let x = a.source.load()?.instance(&mut instance_rng(seed))?;
    let path = simulate(&x, a.horizon, &mut rng::replicate(seed, 0))?;
    let mut text = serde_json::to_string(&json!({ "config": config })).expect("config serializes");
    text.push('\n');
    text.push_str(&path.events_jsonl());
    Ok((config, text))
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SemigroupArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
    /// Comma-separated times.
    #[arg(long, default_value = "0.1,0.5,1")]
    pub times: String,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn semigroup(mut a: SemigroupArgs) -> CliResult<(Value, String)> {
    let seed = require_seed(a.seed)?;
    a.source.resolve("nod", "ske")?;
    let times: Vec<f64> = parse_list("time", &a.times)?;
    let suite = a.psi.select()?;
    let config = crate::config::embed("semigroup", &a);
    let x = a.source.load()?.instance(&mut instance_rng(seed))?;
    let mut out = csv_header_line(&config);
    out.push_str("t,psi_id,exact,mc_mean,mc_stderr,replicates,within_3se\n");
    for (j, &t) in times.iter().enumerate() {
        for (k, psi) in suite.iter().enumerate() {
            let exact = mode_only(semigroup_exact(&x, t, psi))?;
            let mc = mc_expectation(&x, t, psi, a.replicates, rng::tagged(seed, j as u64, k as u64).next_stream_seed())?;
            let agree = exact.map_or_else(|| "na".to_string(), |v| mc.agrees_with(v, 3.0).to_string());
            out.push_str(&format!(
                "{t},{},{},{},{},{},{agree}\n",
                psi.id,
                fmt_opt(exact),
                mc.value,
                mc.stderr,
                a.replicates
            ));
        }
    }
    Ok((config, out))
}

/// Seeds for sub-experiments, derived deterministically from a tagged stream.
trait StreamSeed {
    fn next_stream_seed(self) -> u64;
}

impl StreamSeed for rng::SimRng {
    fn next_stream_seed(mut self) -> u64 {
        use rand::RngCore;
        self.next_u64()
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorCheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
    /// Comma-separated step sizes for the difference quotient.
    #[arg(long, default_value = "0.1,0.01,0.001")]
    pub times: String,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn generator_check(mut a: GeneratorCheckArgs) -> CliResult<(Value, String)> {
    let seed = require_seed(a.seed)?;
    a.source.resolve("nod", "nod")?;
    let times: Vec<f64> = parse_list("time", &a.times)?;
    if times.iter().any(|t| !(*t > 0.0)) {
        return usage("step sizes must be positive");
    }
    let suite = a.psi.select()?;
    let config = crate::config::embed("generator-check", &a);
    let x = a.source.load()?.instance(&mut instance_rng(seed))?;
    let mut out = csv_header_line(&config);
    out.push_str("psi_id,t,quotient,generator_genpsi,generator_jump,error,loglog_slope\n");
    for psi in &suite {
        let genpsi = mode_only(generator_genpsi(&x, psi))?;
        let jump = mode_only(generator_jump(&x, psi))?;
        let Some(omega) = genpsi.or(jump) else {
            return Err(CliError::Validation(format!("no exact generator for {} on this instance", psi.id)));
        };
        let psi0 = semigroup_exact(&x, 0.0, psi)?;
        let mut rows = Vec::new();
        for &t in &times {
            let q = (semigroup_exact(&x, t, psi)? - psi0) / t;
            rows.push((t, q, (q - omega).abs()));
        }
        let errs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let slope = if times.len() >= 2 && errs.iter().all(|e| *e > 0.0) { Some(loglog_slope(&times, &errs)) } else { None };
        for (t, q, e) in rows {
            out.push_str(&format!("{},{t},{q},{},{},{e},{}\n", psi.id, fmt_opt(genpsi), fmt_opt(jump), fmt_opt(slope)));
        }
    }
    Ok((config, out))
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct CutdownArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
    /// Stop once the remaining μ-mass is below this fraction (non-atomic μ only).
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Highest moment order in the moment table.
    #[arg(long, default_value_t = 3)]
    pub moments: usize,
    /// Samples for Monte-Carlo moments when the exact sum is too large.
    #[arg(long, default_value_t = 100_000)]
    pub moment_samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cutdown(mut a: CutdownArgs) -> CliResult<(Value, String, String)> {
    let seed = require_seed(a.seed)?;
    require_positive("replicates", a.replicates)?;
    a.source.resolve("nod", "ske")?;
    let config = crate::config::embed("cutdown", &a);
    let source = a.source.load()?;
    let batch = cutdown_batch(|r| source.instance(r), a.replicates, a.tol, seed)?;
    let mut results = csv_header_line(&config);
    results.push_str(&batch.to_csv());
    let rows: Vec<MomentValue> = if source.is_fixed() {
        let x = source.instance(&mut instance_rng(seed))?;
        (1..=a.moments)
            .map(|n| theta_moment(&x, n, a.moment_samples, seed))
            .collect::<treeprune::Result<_>>()?
    } else {
        // random instances: moments of Θ over the replicate batch
        (1..=a.moments)
            .map(|n| {
                let (value, stderr) = batch.theta_moment(n as i32);
                MomentValue { n, mode: MomentMode::Mc, value, stderr }
            })
            .collect()
    };
    let mut table = csv_header_line(&config);
    table.push_str(&moment_table_csv(&rows));
    Ok((config, results, table))
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ConvergeArgs {
    /// Offspring law.
    #[arg(long, default_value = "poisson:1.0")]
    pub family: String,
    /// Comma-separated tree sizes N.
    #[arg(long, default_value = "125,250,500,1000,2000")]
    pub sizes: String,
    #[arg(long, default_value = "ske")]
    pub mu: String,
    #[arg(long, default_value = "ske")]
    pub nu: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
    #[arg(long, default_value = "0,0.5")]
    pub times: String,
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
    /// Sampled tuples per state when exact evaluation is too large.
    #[arg(long, default_value_t = 8)]
    pub draws: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn converge(a: ConvergeArgs) -> CliResult<(Value, String)> {
    let seed = require_seed(a.seed)?;
    require_positive("draws", a.draws)?;
    let sizes: Vec<usize> = parse_list("size", &a.sizes)?;
    let times: Vec<f64> = parse_list("time", &a.times)?;
    let suite = a.psi.select()?;
    let config = crate::config::embed("converge", &a);
    let sources: Vec<(usize, crate::source::Source)> = sizes
        .iter()
        .map(|&n| {
            let mut s = SourceArgs {
                family: Some(a.family.clone()),
                nodes: Some(n),
                mu: Some(a.mu.clone()),
                nu: Some(a.nu.clone()),
                ..Default::default()
            };
            s.resolve(&a.mu, &a.nu)?;
            Ok((n, s.load()?))
        })
        .collect::<CliResult<_>>()?;
    let generate = |n: usize, r: &mut rng::SimRng| {
        let s = &sources.iter().find(|(m, _)| *m == n).expect("size listed").1;
        s.instance(r)
    };
    let report = convergence_report(&sizes, generate, &suite, &times, a.replicates, a.draws, seed)?;
    let mut out = csv_header_line(&config);
    out.push_str("index,t,psi_id,mean,stderr,replicates,seed,next_index,diff_next,diff_stderr,trend_ok\n");
    for &t in &times {
        for psi in &suite {
            let steps = report.trend(t, &psi.id);
            let mut rows: Vec<_> = report.rows.iter().filter(|r| r.t == t && r.psi_id == psi.id).collect();
            rows.sort_by_key(|r| r.index);
            for (k, r) in rows.iter().enumerate() {
                let step = steps.get(k);
                // not significantly larger than the previous difference
                let ok = match (k.checked_sub(1).and_then(|p| steps.get(p)), step) {
                    (Some(prev), Some(cur)) => {
                        (cur.diff <= prev.diff + 3.0 * prev.stderr.hypot(cur.stderr) + 1e-12).to_string()
                    }
                    _ => "na".into(),
                };
                out.push_str(&format!(
                    "{},{t},{},{},{},{},{},{},{},{},{ok}\n",
                    r.index,
                    r.psi_id,
                    r.mean,
                    r.stderr,
                    r.replicates,
                    r.seed,
                    step.map_or_else(|| "na".into(), |s| s.next_index.to_string()),
                    step.map_or_else(|| "na".into(), |s| s.diff.to_string()),
                    step.map_or_else(|| "na".into(), |s| s.stderr.to_string()),
                ));
            }
        }
    }
    Ok((config, out))
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GwShapesArgs {
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub nodes: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// cycle (cycle lemma) or rejection.
    #[arg(long, default_value = "cycle")]
    pub method: String,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn gw_shapes(a: GwShapesArgs) -> CliResult<(Value, String)> {
    let seed = require_seed(a.seed)?;
    require_positive("nodes", a.nodes)?;
    let eta: OffspringDistribution =
        a.family.parse().map_err(|e: Error| CliError::Usage(format!("bad family '{}': {e}", a.family)))?;
    let rejection = match a.method.as_str() {
        "cycle" => false,
        "rejection" => true,
        m => return usage(format!("unknown method '{m}' (expected cycle or rejection)")),
    };
    if a.nodes > 12 {
        return usage("shape enumeration is limited to --nodes ≤ 12");
    }
    let config = crate::config::embed("gw-shapes", &a);
    let shapes = enumerate_plane_trees(&eta, a.nodes);
    let words: Vec<Vec<usize>> = (0..a.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::replicate(seed, i as u64);
            let t = if rejection {
                gw_conditioned_by_rejection(&eta, a.nodes, &mut r, 1_000_000)?
            } else {
                gw_conditioned(&eta, a.nodes, &mut r)?
            };
            Ok(lukasiewicz_word(&t))
        })
        .collect::<treeprune::Result<_>>()?;
    let mut counts = vec![0u64; shapes.len()];
    for w in &words {
        match shapes.iter().position(|s| s.0 == *w) {
            Some(k) => counts[k] += 1,
            None => return Err(CliError::Runtime(format!("sampled shape {w:?} is not enumerated"))),
        }
    }
    let probs: Vec<f64> = shapes.iter().map(|s| s.1).collect();
    let (stat, p) = chi_square_gof(&counts, &probs);
    let mut out = csv_header_line(&config);
    out.push_str(&format!("# chi_square: statistic={stat}, p_value={p}\n"));
    out.push_str("shape,probability,count,frequency\n");
    for ((w, prob), c) in shapes.iter().zip(&counts) {
        let word: Vec<String> = w.iter().map(|k| k.to_string()).collect();
        out.push_str(&format!("{},{prob},{c},{}\n", word.join("-"), *c as f64 / a.samples.max(1) as f64));
    }
    Ok((config, out))
}
