use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tablecache::harness::bench::{ablation_table, is_monotone, run_bench, AblationRow};
use tablecache::harness::demo::{demo_config, demo_schemas, generate_workload, WorkloadSpec, DEMO_SEED};
use tablecache::harness::formats::{
    load_schema_corpus, load_workload, schema_corpus_json, workload_jsonl, RunConfig, SlowTierKind,
};
use tablecache::harness::run::{run_workload, tokenize_workload, Verifier, VerifyReport};
use tablecache::harness::{precompute_corpus, HarnessError, Manifest, PrecomputeOptions, PreparedCorpus};
use tablecache::kvstore::EvictionPolicy;
use tablecache::pipeline::SimReport;
use tablecache::schema::CycleMode;

#[derive(Parser)]
#[command(name = "tablecache", version, about = "Table-level KV cache precomputation and serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode every table of a schema corpus into a cache directory.
    Precompute {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model weight seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop back edges instead of rejecting cyclic foreign keys.
        #[arg(long)]
        break_cycles: bool,
    },
    /// Simulate a workload against a cache directory.
    Run {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[command(flatten)]
        settings: Settings,
        /// Check a sample of queries against direct prefill.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 8)]
        sample: usize,
        /// Also run all four ablation configurations.
        #[arg(long)]
        ablations: bool,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-query CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check cached tables, or sampled workload queries, against direct prefill.
    Verify {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        sample: usize,
    },
    /// Scaling curves and the simulated ablation table.
    Bench {
        /// Schema corpus; the built-in demo corpus when omitted.
        #[arg(long, requires = "workload")]
        schema: Option<PathBuf>,
        #[arg(long, requires = "schema")]
        workload: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
        #[arg(long, default_value_t = DEMO_SEED)]
        seed: u64,
        /// Write the JSON report here as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the demo schema, workload and config.
    GenWorkload {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEMO_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 90)]
        per_cluster: usize,
        #[arg(long, default_value_t = 20)]
        cold: usize,
        /// Keep each query's tables in id order.
        #[arg(long)]
        no_shuffle: bool,
    },
}

/// Config file plus per-key overrides.
#[derive(Args)]
struct Settings {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "capacity-c")]
    capacity: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<EvictionPolicy>,
    #[arg(long)]
    b_c: Option<usize>,
    #[arg(long)]
    b_m: Option<usize>,
    #[arg(long)]
    compute_per_token: Option<f64>,
    #[arg(long)]
    load_per_token: Option<f64>,
    #[arg(long)]
    switch_overhead: Option<f64>,
    #[arg(long)]
    rerank_on: Option<bool>,
    #[arg(long)]
    pipeline_on: Option<bool>,
    #[arg(long)]
    rerank_seed: Option<u64>,
    #[arg(long)]
    file_tier: bool,
}

fn parse_policy(s: &str) -> Result<EvictionPolicy, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase())).map_err(|_| format!("unknown policy {s:?}"))
}

impl Settings {
    fn resolve(&self, default: RunConfig) -> Result<RunConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => default,
        };
        if let Some(v) = self.capacity {
            c.capacity = v;
        }
        if let Some(v) = self.policy {
            c.policy = v;
        }
        if let Some(v) = self.b_c {
            c.b_c = v;
        }
        if let Some(v) = self.b_m {
            c.b_m = v;
        }
        if let Some(v) = self.compute_per_token {
            c.compute_per_token = v;
        }
        if let Some(v) = self.load_per_token {
            c.load_per_token = v;
        }
        if let Some(v) = self.switch_overhead {
            c.switch_overhead = v;
        }
        if let Some(v) = self.rerank_on {
            c.rerank_on = v;
        }
        if let Some(v) = self.pipeline_on {
            c.pipeline_on = v;
        }
        if self.rerank_seed.is_some() {
            c.seed = self.rerank_seed;
        }
        if self.file_tier {
            c.slow_tier = SlowTierKind::File;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Serialize)]
struct RunOutput {
    config: RunConfig,
    report: SimReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<VerifyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ablations: Option<Vec<AblationRow>>,
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn print_ablations(rows: &[AblationRow]) {
    for r in rows {
        eprintln!("  {:<22} total TTFT {:>10.4}  swaps {}", r.label, r.total_ttft, r.swaps);
    }
    eprintln!("  monotone: {}", is_monotone(rows));
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Precompute { schema, out, seed, break_cycles } => {
            let mut options = PrecomputeOptions::default();
            options.model.weight_seed = seed;
            options.cycle_mode = if break_cycles { CycleMode::BreakCycles } else { CycleMode::Strict };
            let manifest = precompute_corpus(load_schema_corpus(&schema)?, &out, &options)?;
            for (a, b) in &manifest.removed_edges {
                eprintln!("removed foreign-key edge {a} -> {b} to break a cycle");
            }
            eprintln!(
                "wrote {} tables in {} groups to {}",
                manifest.tables.len(),
                manifest.plan.groups.len(),
                out.display()
            );
        }
        Command::Run { cache, workload, settings, verify, sample, ablations, report, csv } => {
            let config = settings.resolve(RunConfig::default())?;
            let manifest = Manifest::load(&cache)?;
            let queries = tokenize_workload(&manifest, &load_workload(&workload)?);
            let sim = run_workload(&cache, &manifest, &queries, &config)?;
            let verification = if verify {
                let v = Verifier::new(&cache, &manifest)?.check_queries(&manifest.engine()?, &queries, sample)?;
                eprintln!("verify: {} checks, max abs diff {:.3e}", v.checks.len(), v.max_abs_diff);
                Some(v)
            } else {
                None
            };
            let ablation_rows = if ablations {
                let rows = ablation_table(&manifest.engine()?, &queries, &config)?;
                print_ablations(&rows);
                Some(rows)
            } else {
                None
            };
            if let Some(path) = csv {
                write_file(&path, &sim.to_csv()?)?;
            }
            eprintln!("{} queries, total TTFT {:.4}", sim.queries.len(), sim.total_ttft);
            let failed = verification.as_ref().filter(|v| !v.passed).cloned();
            let out = RunOutput { config, report: sim, verification, ablations: ablation_rows };
            match report {
                Some(path) => write_file(&path, &to_json(&out))?,
                None => print!("{}", to_json(&out)),
            }
            if let Some(v) = failed {
                v.into_result()?;
            }
        }
        Command::Verify { cache, workload, sample } => {
            let manifest = Manifest::load(&cache)?;
            let verifier = Verifier::new(&cache, &manifest)?;
            let report = match workload {
                Some(path) => {
                    let queries = tokenize_workload(&manifest, &load_workload(&path)?);
                    verifier.check_queries(&manifest.engine()?, &queries, sample)?
                }
                None => verifier.check_corpus()?,
            };
            print!("{}", to_json(&report));
            eprintln!("verify: {} checks, max abs diff {:.3e}", report.checks.len(), report.max_abs_diff);
            report.into_result()?;
        }
        Command::Bench { schema, workload, settings, seed, json } => {
            let (schemas, lines) = match (schema, workload) {
                (Some(s), Some(w)) => (load_schema_corpus(&s)?, load_workload(&w)?),
                _ => {
                    let schemas = demo_schemas();
                    let lines = generate_workload(&schemas, &WorkloadSpec::default());
                    (schemas, lines)
                }
            };
            let config = settings.resolve(demo_config())?;
            let corpus = PreparedCorpus::new(schemas, CycleMode::Strict)?;
            let report = run_bench(&corpus, &lines, &config, seed)?;
            print!("{}", report.render());
            if let Some(path) = json {
                write_file(&path, &to_json(&report))?;
            }
            if report.speedup.partial_cmp(&1.0) != Some(std::cmp::Ordering::Greater) {
                return Err(HarnessError::BenchFailed(format!("speedup {:.3} is not above 1", report.speedup)));
            }
        }
        Command::GenWorkload { out, seed, per_cluster, cold, no_shuffle } => {
            fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            let schemas = demo_schemas();
            let spec = WorkloadSpec { seed, per_cluster, cold, shuffle_tables: !no_shuffle };
            write_file(&out.join("schema.json"), &schema_corpus_json(&schemas))?;
            write_file(&out.join("workload.jsonl"), &workload_jsonl(&generate_workload(&schemas, &spec)))?;
            write_file(&out.join("config.json"), &demo_config().to_json())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
