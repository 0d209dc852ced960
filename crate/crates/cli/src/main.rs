use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use filterprune::cost::{compare, cost_report, render_table};
use filterprune::importance::{rank_model, Method, RankOptions, Tap};
use filterprune::io::{
    self, read_document, write_document, CostDocument, HashScope, PlanDocument, ScoresDocument,
};
use filterprune::netgraph::discover_groups;
use filterprune::pruner::{apply_plan, make_plan, verify_equivalence};
use filterprune::{fixtures, Error, Exec, Model};

#[derive(Parser)]
#[command(
    name = "filterprune",
    version,
    about = "Data-free structured filter pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score the filters of conv layers.
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<String>>,
        /// Input samples (PFPW blob); required by hrank and energy.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = filterprune::importance::DEFAULT_ACTIVE_SAMPLES)]
        samples: usize,
        #[arg(long, default_value = "post-act")]
        tap: Tap,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn scores into a keep/drop plan.
    Plan {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the pruned model to a directory.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Count parameters and MACs.
    Cost {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// C,H,W
        #[arg(long, value_parser = parse_shape)]
        input_shape: Option<[usize; 3]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a pruned model against its source on random inputs.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a built-in architecture as a model container.
    Fixture {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest only, no weight blob.
        #[arg(long)]
        graph_only: bool,
    },
    /// Write seeded standard-normal input samples for a model.
    Samples {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(format!("expected three positive integers C,H,W, got `{s}`")),
    }
}

struct Failure {
    code: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

/// `DIR/model.json` when given a directory.
fn manifest_in(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.json")
    } else {
        path.to_path_buf()
    }
}

fn print_json(v: &serde_json::Value) {
    print!("{}", io::canonical_json(v));
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Rank {
            model,
            method,
            layers,
            inputs,
            samples,
            tap,
            out,
        } => {
            let m = io::load_model(&manifest_in(&model))?;
            if method.is_active() && inputs.is_none() {
                return Err(Error::ActiveMethodNeedsData(method.cli_name().into()).into());
            }
            let inputs = match (method.is_active(), inputs) {
                (true, Some(p)) => Some(io::load_inputs(&p)?),
                _ => None,
            };
            let opts = RankOptions {
                inputs,
                samples,
                tap,
                exec: Exec::default(),
            };
            let outcome = rank_model(&m, method, layers.as_deref(), &opts)?;
            let groups = discover_groups(m.graph())?;
            let doc = ScoresDocument::new(m.content_hash(), method, outcome.reports, groups);
            write_document(&out, &doc)?;
            print_json(&json!({
                "layers": doc.reports.len(),
                "method": method.cli_name(),
                "forward_passes": outcome.forward_passes,
                "out": out,
            }));
        }
        Command::Plan {
            scores,
            ratio,
            layers,
            out,
        } => {
            let doc: ScoresDocument = read_document(&scores)?;
            let plan = make_plan(
                &doc.reports,
                &doc.groups,
                ratio,
                layers.as_deref(),
                &doc.model_hash,
            )?;
            let dropped: usize = plan.groups.iter().map(|g| g.drop.len()).sum();
            let groups = plan.groups.len();
            write_document(&out, &PlanDocument::new(plan))?;
            print_json(&json!({"groups": groups, "dropped_filters": dropped, "out": out}));
        }
        Command::Apply {
            model,
            plan,
            out_dir,
        } => {
            let m = io::load_model(&manifest_in(&model))?;
            let doc: PlanDocument = read_document(&plan)?;
            let actual = m.content_hash();
            if doc.plan.model_hash != actual {
                return Err(Error::HashMismatch {
                    expected: doc.plan.model_hash,
                    actual,
                }
                .into());
            }
            let pruned = apply_plan(&m, &doc.plan)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Failure {
                code: "io",
                message: format!("creating {}: {e}", out_dir.display()),
            })?;
            let manifest = out_dir.join("model.json");
            let blob = io::save_model(&pruned, &manifest)?;
            print_json(&json!({
                "manifest": manifest,
                "blob": blob,
                "params_before": filterprune::cost::count_params(m.graph(), true),
                "params_after": filterprune::cost::count_params(pruned.graph(), true),
                "model_hash": pruned.content_hash(),
            }));
        }
        Command::Cost {
            model,
            baseline,
            input_shape,
            out,
        } => {
            let path = manifest_in(&model);
            let (report, hash, scope) = graph_cost(&path, input_shape)?;
            let report = match baseline {
                Some(b) => compare(&graph_cost(&manifest_in(&b), input_shape)?.0, &report)?,
                None => report,
            };
            print!("{}", render_table(&report));
            write_document(&out, &CostDocument::new(hash, scope, report))?;
        }
        Command::Verify {
            model,
            pruned,
            plan,
            samples,
            seed,
        } => {
            let m = io::load_model(&manifest_in(&model))?;
            let p = io::load_model(&manifest_in(&pruned))?;
            let doc: PlanDocument = read_document(&plan)?;
            let xs = fixtures::random_inputs(m.graph().input_shape(), samples, seed);
            let report = verify_equivalence(&m, &p, &doc.plan, &xs, Exec::default())?;
            print_json(&serde_json::to_value(&report).map_err(Error::from)?);
            if !report.passed {
                return Err(Failure {
                    code: "equivalence_violated",
                    message: format!("outputs differ at {}", report.violations.join(", ")),
                });
            }
        }
        Command::Fixture {
            name,
            out,
            seed,
            graph_only,
        } => {
            let graph = fixtures::by_name(&name)?;
            if graph_only {
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                io::save_graph(&graph, &out, &format!("{stem}.pfpw"))?;
            } else {
                let m = if name == "toy" {
                    fixtures::worked_toy()
                } else {
                    Model::with_random_weights(graph, seed)?
                };
                io::save_model(&m, &out)?;
            }
        }
        Command::Samples {
            model,
            count,
            seed,
            out,
        } => {
            let graph = io::load_graph(&manifest_in(&model))?;
            let xs = fixtures::random_inputs(graph.input_shape(), count, seed);
            io::save_inputs(&xs, &out)?;
        }
    }
    Ok(())
}

/// Cost of a manifest; the blob is only read (for the hash) when present.
fn graph_cost(
    manifest: &Path,
    input_shape: Option<[usize; 3]>,
) -> Result<(filterprune::cost::CostReport, String, HashScope), Failure> {
    let m = io::read_manifest(manifest)?;
    let blob = manifest
        .parent()
        .unwrap_or(Path::new("."))
        .join(&m.weight_blob);
    let graph = m.to_graph()?;
    let (hash, scope) = if blob.is_file() {
        (
            io::load_model(manifest)?.content_hash(),
            HashScope::GraphAndWeights,
        )
    } else {
        (io::graph_hash(&graph), HashScope::Graph)
    };
    Ok((cost_report(&graph, input_shape, true)?, hash, scope))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let doc = json!({"error": {"code": "usage", "message": e.to_string()}});
            eprint!("{}", io::canonical_json(&doc));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let doc = json!({"error": {"code": f.code, "message": f.message}});
            eprint!("{}", io::canonical_json(&doc));
            ExitCode::FAILURE
        }
    }
}
