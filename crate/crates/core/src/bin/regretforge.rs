use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use regretforge::adversary::Adversary;
use regretforge::bench::{evaluate, select_tasks, test_suite, EvalReport, TaskFilter};
use regretforge::checks::gradcheck_suite;
use regretforge::config::{self, RunCompletion, RunManifest};
use regretforge::env::EnvConfig;
use regretforge::navigator::{Actor, Navigator, OracleActor};
use regretforge::seed;
use regretforge::site::{render, DesignSpec};
use regretforge::tensor::{set_corrupt_gradients, ParamStore};
use regretforge::trainer::{cl_sample, dr_sample, train, Algorithm, RunPaths, TrainConfig};

/// Exit 2 for anything the operator got wrong, 1 for runtime failures.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "regretforge", version, about = "Adversarial curriculum training for web-navigation agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a pair of navigators under one curriculum algorithm.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint on benchmark tasks.
    Eval(EvalArgs),
    /// Render a design spec to HTML and the canonical text forms.
    Render(RenderArgs),
    /// Finite-difference gradient checks over every op and model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<Algorithm>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Run directory; defaults to runs/<algo>_s<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Comma-separated task selectors, e.g. `login:1,address`.
    #[arg(long)]
    eval_tasks: Option<String>,
    #[arg(long)]
    lambda_budget: Option<f64>,
    /// Maximum number of pages.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Design steps per episode.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Navigator episodes per agent per iteration.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Comma-separated primitive names, or `scaled`.
    #[arg(long)]
    primitive_subset: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("algo", self.algo.map(|a| a.as_str().to_string()));
        put("iterations", self.iters.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("workers", self.workers.map(|v| v.to_string()));
        put("eval_every", self.eval_every.map(|v| v.to_string()));
        put("eval_episodes", self.eval_episodes.map(|v| v.to_string()));
        put("eval_tasks", self.eval_tasks.clone());
        put("lambda_budget", self.lambda_budget.map(|v| format!("{v:?}")));
        put("max_pages", self.k.map(|v| v.to_string()));
        put("steps", self.n.map(|v| v.to_string()));
        put("episodes", self.m.map(|v| v.to_string()));
        put("primitive_subset", self.primitive_subset.clone());
        put("checkpoint_every", self.checkpoint_every.map(|v| v.to_string()));
        o
    }
}

#[derive(Args)]
struct EvalArgs {
    /// A `.rfck` navigator checkpoint, or a checkpoint directory holding
    /// `agent_a.rfck` and `agent_p.rfck`.
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the scripted oracle instead of a checkpoint.
    #[arg(long)]
    oracle: bool,
    /// Task selectors such as `login:1`, `login` or `all` (repeatable).
    #[arg(long = "tasks", default_value = "all")]
    tasks: Vec<TaskFilter>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory for the CSV reports; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleSource {
    Dr,
    Cl,
    Adversary,
}

#[derive(Args)]
struct RenderArgs {
    /// GMDS/1 spec file.
    #[arg(long, conflicts_with_all = ["sample", "task"])]
    spec: Option<PathBuf>,
    /// Draw a spec from a generator.
    #[arg(long, value_enum, conflicts_with = "task")]
    sample: Option<SampleSource>,
    /// Benchmark task, e.g. `login:4`.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "K", default_value_t = 3)]
    k: usize,
    #[arg(long = "N", default_value_t = 8)]
    n: usize,
    #[arg(long)]
    primitive_subset: Option<String>,
    /// CL iteration at which to sample (with `--sample cl`).
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    #[arg(long, default_value = "render")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Deliberately break one backward rule (negative control).
    #[arg(long)]
    corrupt: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let cfg = config::resolve(a.config.as_deref(), std::env::vars(), &a.overrides()).map_err(|e| usage(e.to_string()))?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}_s{}", cfg.algo.as_str(), cfg.seed)));
    fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let paths = RunPaths::new(&out);
    let manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        out_dir: out.display().to_string(),
        metrics: paths.metrics.display().to_string(),
        eval: paths.eval_dir.display().to_string(),
        checkpoints: paths.checkpoints.display().to_string(),
        started_at: config::unix_now(),
    };
    write(&out.join("manifest.json"), json(&manifest))?;
    info!("training {} for {} iterations into {}", cfg.algo.as_str(), cfg.iterations, out.display());

    let n = cfg.iterations;
    let every = (n / 20).max(1);
    let summary = train(cfg, Some(&out), |r| {
        if (r.iteration + 1) % every == 0 {
            info!(
                "iter {:>6}  return a {:+.3} p {:+.3}  success a {:.2} p {:.2}  regret {}  active {:.2}",
                r.iteration + 1,
                r.mean_return_a,
                r.mean_return_p,
                r.success_a,
                r.success_p,
                r.regret.map_or("-".into(), |v| format!("{v:.3}")),
                r.active_fraction
            );
        }
    })?;
    for e in &summary.evals {
        info!("eval iter {} agent {:?}: {}", e.iteration, e.agent, fmt_report(&e.report));
    }
    write(&out.join("completion.json"), json(&RunCompletion { iterations: summary.records.len(), finished_at: config::unix_now() }))?;
    println!("{}", out.display());
    Ok(())
}

fn fmt_report(r: &EvalReport) -> String {
    r.rows.iter().map(|row| format!("{}:{}={:.2}", row.task, row.difficulty, row.success_rate)).collect::<Vec<_>>().join(" ")
}

fn load_navigator(path: &Path) -> CliResult<Navigator> {
    let f = fs::File::open(path).map_err(|e| usage(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let store = ParamStore::load(std::io::BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Navigator::from_store(&store).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    if a.episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    let mut actors: Vec<(String, Box<dyn Actor>)> = Vec::new();
    if a.oracle {
        actors.push(("oracle".into(), Box::new(OracleActor)));
    } else {
        let ck = a.checkpoint.as_ref().expect("clap requires --checkpoint without --oracle");
        if ck.is_dir() {
            for tag in ["a", "p"] {
                let path = ck.join(format!("agent_{tag}.rfck"));
                actors.push((format!("agent_{tag}"), Box::new(load_navigator(&path)?)));
            }
        } else if ck.is_file() {
            let stem = ck.file_stem().map_or("agent".into(), |s| s.to_string_lossy().into_owned());
            actors.push((stem, Box::new(load_navigator(ck)?)));
        } else {
            return Err(usage(format!("checkpoint {} does not exist", ck.display())));
        }
    }
    let tasks = select_tasks(&a.tasks);
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
    }
    for (name, actor) in &actors {
        let report = evaluate(actor.as_ref(), &tasks, a.episodes, a.seed, &EnvConfig::default(), a.workers)?;
        match &a.out {
            Some(out) => {
                let path = out.join(format!("eval_{name}.csv"));
                write(&path, report.to_csv())?;
                println!("{}", path.display());
            }
            None => print!("# {name}\n{}", report.to_csv()),
        }
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> CliResult<()> {
    let spec = if let Some(path) = &a.spec {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        DesignSpec::from_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else if let Some(task) = &a.task {
        let f: TaskFilter = task.parse().map_err(Failure::Usage)?;
        if f.difficulty.is_none() {
            return Err(usage(format!("--task needs a difficulty, e.g. {task}:1")));
        }
        let t = test_suite().iter().find(|t| f.matches(t)).expect("every name:difficulty is in the suite");
        t.spec.clone()
    } else if let Some(source) = a.sample {
        let mut overrides = vec![("max_pages".to_string(), a.k.to_string()), ("steps".to_string(), a.n.to_string())];
        if let Some(s) = &a.primitive_subset {
            overrides.push(("primitive_subset".into(), s.clone()));
        }
        let cfg: TrainConfig = config::resolve(None, Vec::new(), &overrides).map_err(|e| usage(e.to_string()))?;
        let subset = cfg.subset_ids().map_err(|e| usage(e.to_string()))?;
        let mut rng = seed::rng(&[a.seed, 1, a.iteration as u64]);
        match source {
            SampleSource::Dr => dr_sample(cfg.max_pages, cfg.steps, subset.as_deref(), &mut rng),
            SampleSource::Cl => cl_sample(a.iteration, &cfg.cl_schedule(), cfg.max_pages, cfg.steps, subset.as_deref(), &mut rng),
            SampleSource::Adversary => {
                let adv = Adversary::new(cfg.adversary_config()?, &mut seed::rng(&[a.seed, 4, 2]));
                adv.sample_design(&mut rng)?.spec
            }
        }
    } else {
        return Err(usage("one of --spec, --sample or --task is required"));
    };
    let site = render(&spec)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("spec.gmds"), spec.to_text())?;
    write(&a.out.join("website.gmwb"), site.serialize())?;
    for p in site.export_html_dir(&a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    set_corrupt_gradients(a.corrupt);
    let checks = gradcheck_suite(a.tolerance, a.seed);
    set_corrupt_gradients(false);
    let mut failed = 0;
    for c in &checks {
        let status = if c.report.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<28} max rel err {:.3e}  ({} entries)", c.model, c.report.max_rel_err, c.report.coords_checked);
        failed += usize::from(!c.report.passed);
    }
    if let Some(out) = &a.out {
        write(out, json(&checks))?;
    }
    println!("{} of {} checks passed at tolerance {:e}", checks.len() - failed, checks.len(), a.tolerance);
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REGRETFORGE_LOG", "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
