use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ravenlet::driver::{
    build_plan, compare_results, load_catalog, load_model, load_stats, load_tables, optimize_plan, output_columns,
    read_text, run_plan, run_plans, OptimizeConfig, OptimizedPlan,
};
use ravenlet::ir::{explain, to_dot, Plan, PlanOp};
use ravenlet::ml2dnn::compile_plan_to_tensors;
use ravenlet::ml2sql::{compile_plan_to_sql, render_sql, Dialect, Ml2SqlConfig};
use ravenlet::strategy::{extract_stats, PredictorTable, StrategySpec};
use ravenlet::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Optimize the query and emit the plan.
    Optimize,
    /// Optimize, execute and write the result as CSV.
    Run,
    /// Run the unoptimized and the optimized plan and compare predictions.
    Compare,
    /// Print the pipeline statistics the strategy uses.
    Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Plan,
    Explain,
    Sql,
    Tensor,
    Dot,
}

/// Optimizer and reference engine for prediction queries.
#[derive(Debug, Parser)]
#[command(name = "raven", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Prediction query (SQL with PREDICT).
    #[arg(long)]
    query: Option<PathBuf>,
    /// Trained pipeline (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Table schemas (JSON).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Directory holding <table>.csv for every catalog table.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column statistics (JSON) for data-induced pruning.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Comma-separated passes: pred_prune, proj_pushdown, data_induced,
    /// ml2sql, ml2dnn, or all / none.
    #[arg(long, default_value = "all")]
    passes: String,
    /// rule, none, or table:<path> for a predictor table.
    #[arg(long, default_value = "rule")]
    strategy: String,
    /// Tell the strategy a GPU is available.
    #[arg(long)]
    gpu: bool,
    #[arg(long, value_enum, default_value = "plan")]
    emit: Emit,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// compare: model for the unoptimized side (defaults to --model).
    #[arg(long)]
    baseline_model: Option<PathBuf>,
    /// compare: minimum label agreement in percent.
    #[arg(long, default_value_t = 99.5)]
    threshold: f64,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Error> {
    p.as_deref().ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn config(cli: &Cli) -> Result<OptimizeConfig, Error> {
    let mut cfg = OptimizeConfig {
        has_gpu: cli.gpu,
        ..OptimizeConfig::default()
    };
    cfg.set_passes(&cli.passes)?;
    cfg.strategy = match cli.strategy.as_str() {
        "rule" => StrategySpec::Rule,
        "none" => StrategySpec::None,
        s => match s.strip_prefix("table:") {
            Some(path) => StrategySpec::Table(PredictorTable::from_json(&read_text(Path::new(path))?)?),
            None => return Err(Error::Usage(format!("unknown strategy '{s}'"))),
        },
    };
    Ok(cfg)
}

fn has_ml(plan: &Plan) -> bool {
    plan.nodes.values().any(|n| !n.op.is_relational() || matches!(n.op, PlanOp::PredictBoundary { .. }))
}

fn emit(cli: &Cli, plans: &[OptimizedPlan]) -> Result<String, Error> {
    let mut out = String::new();
    match cli.emit {
        Emit::Plan => {
            let doc: Vec<serde_json::Value> = plans
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "partition": p.selector,
                        "strategy": p.choice.as_ref().map(|c| serde_json::json!({
                            "choice": c.transform,
                            "rationale": c.rationale,
                        })),
                        "plan": p.plan,
                    })
                })
                .collect();
            out = serde_json::to_string_pretty(&doc).expect("plans serialize") + "\n";
        }
        Emit::Explain => {
            for p in plans {
                out.push_str(&format!("-- {}\n{}", p.selector, explain(&p.plan)));
            }
        }
        Emit::Dot => {
            for p in plans {
                out.push_str(&to_dot(&p.plan));
            }
        }
        Emit::Sql => {
            for p in plans {
                out.push_str(&format!("-- {}\n", p.selector));
                if p.plan.is_empty_result() {
                    out.push_str("-- no rows can match\n");
                    continue;
                }
                if p.plan.find(|op| matches!(op, PlanOp::Tensor(_))).is_some() {
                    return Err(Error::Usage(
                        "the plan holds a tensor program; use --emit tensor or --passes without ml2dnn".into(),
                    ));
                }
                let plan = if has_ml(&p.plan) {
                    compile_plan_to_sql(&p.plan, &Ml2SqlConfig::default())?
                } else {
                    p.plan.clone()
                };
                out.push_str(&render_sql(&plan, Dialect::Neutral)?);
                out.push_str(";\n");
            }
        }
        Emit::Tensor => {
            let mut programs = Vec::new();
            for p in plans {
                let plan = if p.plan.find(|op| matches!(op, PlanOp::Tensor(_))).is_some() {
                    p.plan.clone()
                } else {
                    compile_plan_to_tensors(&p.plan)?
                };
                for n in plan.nodes.values() {
                    if let PlanOp::Tensor(t) = &n.op {
                        programs.push(serde_json::json!({"partition": p.selector, "program": t}));
                    }
                }
            }
            out = serde_json::to_string_pretty(&programs).expect("programs serialize") + "\n";
        }
    }
    Ok(out)
}

fn execute(cli: &Cli) -> Result<ExitCode, Error> {
    if cli.command == Command::Stats {
        let model = load_model(required(&cli.model, "model")?)?;
        write_output(&cli.out, &extract_stats(&model).to_json())?;
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = config(cli)?;
    let catalog = load_catalog(required(&cli.catalog, "catalog")?)?;
    let query = read_text(required(&cli.query, "query")?)?;
    let model = load_model(required(&cli.model, "model")?)?;
    let stats = cli.stats.as_deref().map(load_stats).transpose()?;
    let plan = build_plan(&query, &model, &catalog)?;
    let plans = optimize_plan(&plan, &cfg, stats.as_ref(), &catalog)?;
    match cli.command {
        Command::Optimize => {
            for p in &plans {
                eprint!("-- {}\n{}", p.selector, explain(&p.plan));
            }
            write_output(&cli.out, &emit(cli, &plans)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run => {
            let tables = load_tables(required(&cli.data, "data")?, &catalog)?;
            let result = run_plans(&plans, &tables)?;
            write_output(&cli.out, &result.to_csv())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare => {
            let tables = load_tables(required(&cli.data, "data")?, &catalog)?;
            let base_model = match &cli.baseline_model {
                Some(p) => load_model(p)?,
                None => model,
            };
            let base_plan = build_plan(&query, &base_model, &catalog)?;
            let baseline = run_plan(&base_plan, &tables)?;
            let candidate = run_plans(&plans, &tables)?;
            let (labels, scores) = output_columns(&base_plan);
            let c = compare_results(&baseline, &candidate, &labels, &scores);
            let nodes_after: usize = plans.iter().map(|p| p.plan.nodes.len()).max().unwrap_or(0);
            let cols_after: usize = plans.iter().map(|p| p.plan.scanned_columns()).max().unwrap_or(0);
            let report = format!(
                "baseline rows: {}\noptimized rows: {}\nlabel agreement: {:.3}%\nmax relative score delta: {:e}\nplan nodes: {} -> {}\nscanned columns: {} -> {}\n",
                c.baseline_rows,
                c.candidate_rows,
                c.agreement,
                c.max_score_delta,
                base_plan.nodes.len(),
                nodes_after,
                base_plan.scanned_columns(),
                cols_after,
            );
            write_output(&cli.out, &report)?;
            Ok(if c.agreement >= cli.threshold {
                ExitCode::SUCCESS
            } else {
                eprintln!("agreement {:.3}% is below {}%", c.agreement, cli.threshold);
                ExitCode::from(1)
            })
        }
        Command::Stats => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("raven: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 3 })
        }
        Err(_) => ExitCode::from(3),
    }
}
