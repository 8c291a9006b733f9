//! Regret objectives, the adversarial training loop and the DR/CL baselines.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{Adversary, AdversaryConfig, DesignSample, EmaBaseline, LossCoefficients};
use crate::bench::{evaluate, select_tasks, EvalReport, TaskFilter};
use crate::catalog::{active_fraction, catalog, CatalogError, NUM_PRIMITIVES};
use crate::env::EnvConfig;
use crate::navigator::{collect_par, A2cConfig, AgentError, Collected, LossStats, Navigator, NavigatorConfig};
use crate::seed;
use crate::site::{render, DesignAction, DesignSpec, Provenance, SiteError};
use crate::tensor::{AdamConfig, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {field}: {msg}")]
    Config { field: String, msg: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("iteration {iteration}: render failed: {source}")]
    Render { iteration: usize, source: SiteError },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn config_err<T>(field: &str, msg: impl Into<String>) -> Result<T> {
    Err(TrainError::Config { field: field.into(), msg: msg.into() })
}

/// `max(returns_A) − mean(returns_P)`, with agent A as antagonist.
pub fn paired_regret(returns_a: &[f64], returns_p: &[f64]) -> Option<f64> {
    if returns_a.is_empty() || returns_p.is_empty() {
        return None;
    }
    let max_a = returns_a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_p = returns_p.iter().sum::<f64>() / returns_p.len() as f64;
    Some(max_a - mean_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentTag {
    A,
    P,
}

/// `max(a, p) − (a + p)/2`; the better agent is tagged antagonist, A on ties.
///
/// Evaluated as half the gap `(max − min)/2`, the same real number, so the
/// result is rounded once instead of three times.
pub fn flexible_regret(mean_a: f64, mean_p: f64) -> (f64, AgentTag) {
    let (tag, hi, lo) = if mean_a >= mean_p { (AgentTag::A, mean_a, mean_p) } else { (AgentTag::P, mean_p, mean_a) };
    (0.5 * (hi - lo), tag)
}

/// `R_best · Σ log π(SKIP)`.
pub fn budget_objective(r_best: f64, skip_logps: &[f64]) -> f64 {
    r_best * skip_logps.iter().sum::<f64>()
}

fn placement_mask(subset: Option<&[usize]>) -> Vec<usize> {
    match subset {
        None => (0..NUM_PRIMITIVES).collect(),
        Some(ids) => ids.to_vec(),
    }
}

/// Domain randomization: `k` uniform on `1..=K`, each step a uniform draw over
/// the primitives plus SKIP and a uniform page below `k`.
pub fn dr_sample(max_pages: usize, steps: usize, subset: Option<&[usize]>, rng: &mut impl Rng) -> DesignSpec {
    let ids = placement_mask(subset);
    let k = rng.gen_range(1..=max_pages);
    let actions = (0..steps)
        .map(|_| {
            let i = rng.gen_range(0..=ids.len());
            let page = rng.gen_range(0..k);
            if i == ids.len() {
                DesignAction::Skip
            } else {
                DesignAction::Place { primitive: ids[i], page }
            }
        })
        .collect();
    DesignSpec { k, actions, provenance: Provenance::Dr }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClSchedule {
    pub p0: f64,
    pub iterations_to_one: usize,
}

impl ClSchedule {
    pub fn p(&self, iteration: usize) -> f64 {
        if iteration >= self.iterations_to_one {
            return 1.0;
        }
        (self.p0 + iteration as f64 * (1.0 - self.p0) / self.iterations_to_one as f64).min(1.0)
    }
}

/// Scheduled curriculum: each slot places a uniform primitive on a uniform
/// page with probability `p(iteration)`, else SKIP.
pub fn cl_sample(iteration: usize, schedule: &ClSchedule, max_pages: usize, steps: usize, subset: Option<&[usize]>, rng: &mut impl Rng) -> DesignSpec {
    let ids = placement_mask(subset);
    let p = schedule.p(iteration);
    let k = rng.gen_range(1..=max_pages);
    let actions = (0..steps)
        .map(|_| {
            let place = rng.gen::<f64>() < p;
            let prim = ids[rng.gen_range(0..ids.len())];
            let page = rng.gen_range(0..k);
            if place {
                DesignAction::Place { primitive: prim, page }
            } else {
                DesignAction::Skip
            }
        })
        .collect();
    DesignSpec { k, actions, provenance: Provenance::Cl }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    Paired,
    PairedB,
    Flexible,
    FlexibleB,
    Dr,
    Cl,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Paired => "paired",
            Algorithm::PairedB => "paired_b",
            Algorithm::Flexible => "flexible",
            Algorithm::FlexibleB => "flexible_b",
            Algorithm::Dr => "dr",
            Algorithm::Cl => "cl",
        }
    }

    pub fn uses_adversary(self) -> bool {
        !matches!(self, Algorithm::Dr | Algorithm::Cl)
    }

    pub fn budget(self) -> bool {
        matches!(self, Algorithm::PairedB | Algorithm::FlexibleB)
    }

    pub fn flexible(self) -> bool {
        matches!(self, Algorithm::Flexible | Algorithm::FlexibleB)
    }
}

/// Primitive names of the desk-scale subset: the login and address
/// primitives plus four passives.
pub const SCALED_SUBSET: [&str; 12] = [
    "username",
    "password",
    "fullname",
    "addressline1",
    "addressline2",
    "city",
    "zipcode",
    "state",
    "header_login",
    "navbar",
    "submit",
    "footer1",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algorithm,
    pub iterations: usize,
    pub seed: u64,
    /// Maximum page count `K`.
    pub max_pages: usize,
    /// Design steps `N`.
    pub steps: usize,
    /// Episodes per agent per iteration `M`.
    pub episodes: usize,
    pub gamma: f64,
    pub lambda_budget: f64,
    /// Primitive names the generators may place; `None` allows all 40.
    pub primitive_subset: Option<Vec<String>>,
    pub navigator: NavigatorConfig,
    pub nav_lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adversary_hidden: usize,
    pub noise_dim: usize,
    pub adv_lr: f64,
    pub adv_entropy_coef: f64,
    pub baseline_decay: f64,
    pub cl_p0: f64,
    /// Fraction of `iterations` over which the CL probability reaches 1.
    pub cl_fraction: f64,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Task selectors (`login:1`, `shopping`, ...); empty means all 20.
    pub eval_tasks: Vec<String>,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::FlexibleB,
            iterations: 1000,
            seed: 0,
            max_pages: 3,
            steps: 8,
            episodes: 4,
            gamma: 0.99,
            lambda_budget: 1.0,
            primitive_subset: None,
            navigator: NavigatorConfig::default(),
            nav_lr: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.01,
            adversary_hidden: 64,
            noise_dim: 16,
            adv_lr: 1e-3,
            adv_entropy_coef: 0.01,
            baseline_decay: 0.95,
            cl_p0: 0.1,
            cl_fraction: 0.8,
            eval_every: 100,
            eval_episodes: 100,
            eval_tasks: Vec::new(),
            checkpoint_every: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// The desk-scale configuration used for the scaled training runs.
    pub fn scaled(algo: Algorithm, seed: u64) -> Self {
        Self {
            algo,
            seed,
            max_pages: 2,
            steps: 8,
            episodes: 4,
            primitive_subset: Some(SCALED_SUBSET.iter().map(|s| s.to_string()).collect()),
            eval_tasks: vec!["login:1".into()],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("max_pages", self.max_pages),
            ("steps", self.steps),
            ("episodes", self.episodes),
            ("navigator.embed", self.navigator.embed),
            ("navigator.hidden", self.navigator.hidden),
            ("adversary_hidden", self.adversary_hidden),
            ("noise_dim", self.noise_dim),
            ("eval_episodes", self.eval_episodes),
            ("workers", self.workers),
        ];
        for (field, v) in positive {
            if v == 0 {
                return config_err(field, "must be at least 1");
            }
        }
        if self.navigator.hidden < 2 {
            return config_err("navigator.hidden", "must be at least 2");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return config_err("gamma", format!("{} is outside (0, 1]", self.gamma));
        }
        for (field, v) in [("lambda_budget", self.lambda_budget), ("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef), ("adv_entropy_coef", self.adv_entropy_coef)] {
            if !(v.is_finite() && v >= 0.0) {
                return config_err(field, format!("{v} must be finite and non-negative"));
            }
        }
        for (field, v) in [("nav_lr", self.nav_lr), ("adv_lr", self.adv_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return config_err(field, format!("{v} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return config_err("baseline_decay", format!("{} is outside [0, 1)", self.baseline_decay));
        }
        if !(self.cl_p0 > 0.0 && self.cl_p0 <= 1.0) {
            return config_err("cl_p0", format!("{} is outside (0, 1]", self.cl_p0));
        }
        if !(0.0..=1.0).contains(&self.cl_fraction) {
            return config_err("cl_fraction", format!("{} is outside [0, 1]", self.cl_fraction));
        }
        self.subset_ids()?;
        self.task_filters()?;
        Ok(())
    }

    pub fn subset_ids(&self) -> Result<Option<Vec<usize>>> {
        let Some(names) = &self.primitive_subset else {
            return Ok(None);
        };
        if names.is_empty() {
            return config_err("primitive_subset", "must name at least one primitive");
        }
        let mut ids = Vec::with_capacity(names.len());
        for n in names {
            match catalog().lookup(n) {
                Ok(p) if !ids.contains(&p.id) => ids.push(p.id),
                Ok(_) => return config_err("primitive_subset", format!("`{n}` listed twice")),
                Err(e) => return config_err("primitive_subset", e.to_string()),
            }
        }
        Ok(Some(ids))
    }

    pub fn task_filters(&self) -> Result<Vec<TaskFilter>> {
        self.eval_tasks
            .iter()
            .map(|t| t.parse::<TaskFilter>().or_else(|e| config_err("eval_tasks", e)))
            .collect()
    }

    pub fn cl_schedule(&self) -> ClSchedule {
        ClSchedule { p0: self.cl_p0, iterations_to_one: (self.cl_fraction * self.iterations as f64).round() as usize }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig { gamma: self.gamma }
    }

    fn a2c(&self) -> A2cConfig {
        A2cConfig {
            gamma: self.gamma,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            adam: AdamConfig { lr: self.nav_lr, ..AdamConfig::default() },
        }
    }

    pub fn adversary_config(&self) -> Result<AdversaryConfig> {
        Ok(AdversaryConfig {
            max_pages: self.max_pages,
            steps: self.steps,
            obs_dim: self.noise_dim,
            hidden: self.adversary_hidden,
            primitive_subset: self.subset_ids()?,
        })
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub algo: Algorithm,
    /// `GMDS/1` text of the generated design, one line with `;` separators.
    pub design: String,
    pub design_digest: String,
    pub k: usize,
    pub placed: Vec<usize>,
    pub n_fields: usize,
    pub active_fraction: f64,
    pub mean_return_a: f64,
    pub mean_return_p: f64,
    pub success_a: f64,
    pub success_p: f64,
    /// Adversary reward; absent for the DR and CL baselines.
    pub regret: Option<f64>,
    pub antagonist: Option<AgentTag>,
    pub r_best: f64,
    pub baseline: Option<f64>,
    pub adversary_loss: Option<f64>,
    pub cl_p: Option<f64>,
    pub loss_a: LossStats,
    pub loss_p: LossStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub agent: AgentTag,
    pub report: EvalReport,
}

const STREAM_DESIGN: u64 = 1;
const STREAM_AGENT_A: u64 = 2;
const STREAM_AGENT_P: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_EVAL: u64 = 5;

pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent_a: Navigator,
    pub agent_p: Navigator,
    pub adversary: Adversary,
    pub baseline: EmaBaseline,
    pub iteration: usize,
    subset: Option<Vec<usize>>,
    schedule: ClSchedule,
}

fn compact(spec: &DesignSpec) -> String {
    spec.to_text().trim_end().replace('\n', ";")
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let agent_a = Navigator::new(cfg.navigator, &mut seed::rng(&[cfg.seed, STREAM_INIT, 0]));
        let agent_p = Navigator::new(cfg.navigator, &mut seed::rng(&[cfg.seed, STREAM_INIT, 1]));
        let adversary = Adversary::new(cfg.adversary_config()?, &mut seed::rng(&[cfg.seed, STREAM_INIT, 2]));
        Ok(Self {
            subset: cfg.subset_ids()?,
            schedule: cfg.cl_schedule(),
            baseline: EmaBaseline { value: 0.0, decay: cfg.baseline_decay },
            agent_a,
            agent_p,
            adversary,
            iteration: 0,
            cfg,
        })
    }

    fn design(&self, rng: &mut impl Rng) -> Result<(DesignSpec, Option<DesignSample>, Option<f64>)> {
        let c = &self.cfg;
        Ok(match c.algo {
            Algorithm::Dr => (dr_sample(c.max_pages, c.steps, self.subset.as_deref(), rng), None, None),
            Algorithm::Cl => {
                let spec = cl_sample(self.iteration, &self.schedule, c.max_pages, c.steps, self.subset.as_deref(), rng);
                (spec, None, Some(self.schedule.p(self.iteration)))
            }
            _ => {
                let s = self.adversary.sample_design(rng)?;
                (s.spec.clone(), Some(s), None)
            }
        })
    }

    /// One iteration: design, render, collect, score, update.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let it = self.iteration;
        let s = self.cfg.seed;
        let (spec, sample, cl_p) = self.design(&mut seed::rng(&[s, STREAM_DESIGN, it as u64]))?;
        let website = render(&spec).map_err(|source| TrainError::Render { iteration: it, source })?;

        let env = self.cfg.env();
        let (m, w) = (self.cfg.episodes, self.cfg.workers);
        let ca: Collected = collect_par(&self.agent_a, &website, m, &env, &mut seed::rng(&[s, STREAM_AGENT_A, it as u64]), false, w)?;
        let cp: Collected = collect_par(&self.agent_p, &website, m, &env, &mut seed::rng(&[s, STREAM_AGENT_P, it as u64]), false, w)?;
        let r_best = ca.mean_return.max(cp.mean_return);

        let (regret, antagonist) = match self.cfg.algo {
            Algorithm::Paired | Algorithm::PairedB => {
                let ra: Vec<f64> = ca.trajectories.iter().map(|t| t.ret).collect();
                let rp: Vec<f64> = cp.trajectories.iter().map(|t| t.ret).collect();
                (paired_regret(&ra, &rp), Some(AgentTag::A))
            }
            Algorithm::Flexible | Algorithm::FlexibleB => {
                let (r, tag) = flexible_regret(ca.mean_return, cp.mean_return);
                (Some(r), Some(tag))
            }
            Algorithm::Dr | Algorithm::Cl => (None, None),
        };

        let (mut baseline, mut adversary_loss) = (None, None);
        if let (Some(sample), Some(regret)) = (&sample, regret) {
            let b = self.baseline.observe(regret);
            let coeffs = LossCoefficients {
                regret,
                baseline: b,
                r_best,
                lambda_budget: if self.cfg.algo.budget() { self.cfg.lambda_budget } else { 0.0 },
                entropy_coef: self.cfg.adv_entropy_coef,
            };
            let adam = AdamConfig { lr: self.cfg.adv_lr, ..AdamConfig::default() };
            adversary_loss = Some(self.adversary.update(sample, &coeffs, &adam)?);
            baseline = Some(b);
        }

        let a2c = self.cfg.a2c();
        let loss_a = self.agent_a.a2c_update(&ca.trajectories, &a2c)?;
        let loss_p = self.agent_p.a2c_update(&cp.trajectories, &a2c)?;

        let placed = spec.placed_ids();
        let design = compact(&spec);
        let digest = Sha256::digest(design.as_bytes());
        let record = IterationRecord {
            iteration: it,
            algo: self.cfg.algo,
            design_digest: digest.iter().take(8).map(|b| format!("{b:02x}")).collect(),
            design,
            k: spec.k,
            n_fields: website.n_fields(),
            active_fraction: active_fraction(&placed)?,
            placed,
            mean_return_a: ca.mean_return,
            mean_return_p: cp.mean_return,
            success_a: ca.success_rate,
            success_p: cp.success_rate,
            regret,
            antagonist,
            r_best,
            baseline,
            adversary_loss,
            cl_p,
            loss_a,
            loss_p,
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Greedy evaluation of one agent on the configured tasks.
    pub fn evaluate(&self, agent: AgentTag) -> Result<EvalReport> {
        let filters = self.cfg.task_filters()?;
        let tasks = select_tasks(&filters);
        let nav = match agent {
            AgentTag::A => &self.agent_a,
            AgentTag::P => &self.agent_p,
        };
        let eval_seed = seed::derive(&[self.cfg.seed, STREAM_EVAL, self.iteration as u64]);
        Ok(evaluate(nav, &tasks, self.cfg.eval_episodes, eval_seed, &self.cfg.env(), self.cfg.workers)?)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.into(), source })?;
        let mut stores = vec![("agent_a.rfck", &self.agent_a.store), ("agent_p.rfck", &self.agent_p.store)];
        if self.cfg.algo.uses_adversary() {
            stores.push(("adversary.rfck", &self.adversary.store));
        }
        for (name, store) in stores {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|source| TrainError::Io { path: path.clone(), source })?;
            store.save(BufWriter::new(f)).map_err(|source| TrainError::Io { path, source })?;
        }
        Ok(())
    }
}

/// Output files of a run directory.
pub struct RunPaths {
    pub metrics: PathBuf,
    pub eval_jsonl: PathBuf,
    pub eval_dir: PathBuf,
    pub checkpoints: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        Self {
            metrics: out.join("metrics.jsonl"),
            eval_jsonl: out.join("eval.jsonl"),
            eval_dir: out.join("eval"),
            checkpoints: out.join("checkpoints"),
        }
    }
}

/// What a finished run produced.
pub struct RunSummary {
    pub records: Vec<IterationRecord>,
    pub evals: Vec<EvalRecord>,
    pub trainer: Trainer,
}

struct Sink {
    metrics: BufWriter<File>,
    evals: BufWriter<File>,
    paths: RunPaths,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

impl Sink {
    fn open(out: &Path) -> Result<Self> {
        let paths = RunPaths::new(out);
        fs::create_dir_all(&paths.eval_dir).map_err(io_err(&paths.eval_dir))?;
        let metrics = BufWriter::new(File::create(&paths.metrics).map_err(io_err(&paths.metrics))?);
        let evals = BufWriter::new(File::create(&paths.eval_jsonl).map_err(io_err(&paths.eval_jsonl))?);
        Ok(Self { metrics, evals, paths })
    }

    fn record(&mut self, r: &IterationRecord) -> Result<()> {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(self.metrics, "{line}").map_err(io_err(&self.paths.metrics))
    }

    fn eval(&mut self, e: &EvalRecord) -> Result<()> {
        let line = serde_json::to_string(e).expect("records serialize");
        writeln!(self.evals, "{line}").map_err(io_err(&self.paths.eval_jsonl))?;
        let tag = match e.agent {
            AgentTag::A => "a",
            AgentTag::P => "p",
        };
        let path = self.paths.eval_dir.join(format!("iter_{:06}_agent_{tag}.csv", e.iteration));
        fs::write(&path, e.report.to_csv()).map_err(io_err(&path))
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(io_err(&self.paths.metrics))?;
        self.evals.flush().map_err(io_err(&self.paths.eval_jsonl))
    }
}

/// Runs `cfg.iterations` steps, evaluating at the configured cadence. With
/// `out`, streams records to `metrics.jsonl`, evaluations to `eval.jsonl`
/// and `eval/*.csv`, and writes checkpoints under `checkpoints/`.
pub fn train(cfg: TrainConfig, out: Option<&Path>, mut progress: impl FnMut(&IterationRecord)) -> Result<RunSummary> {
    let mut trainer = Trainer::new(cfg)?;
    let mut sink = out.map(Sink::open).transpose()?;
    let (mut records, mut evals) = (Vec::new(), Vec::new());
    let n = trainer.cfg.iterations;
    for _ in 0..n {
        let r = trainer.step()?;
        progress(&r);
        if let Some(s) = sink.as_mut() {
            s.record(&r)?;
        }
        records.push(r);
        let done = trainer.iteration;
        let every = trainer.cfg.eval_every;
        if every > 0 && done % every == 0 {
            for agent in [AgentTag::A, AgentTag::P] {
                let e = EvalRecord { iteration: done, agent, report: trainer.evaluate(agent)? };
                if let Some(s) = sink.as_mut() {
                    s.eval(&e)?;
                }
                evals.push(e);
            }
        }
        let ck = trainer.cfg.checkpoint_every;
        if let Some(s) = &sink {
            if ck > 0 && done % ck == 0 && done < n {
                trainer.save_checkpoint(&s.paths.checkpoints.join(format!("iter_{done:06}")))?;
            }
        }
    }
    if let Some(s) = sink.as_mut() {
        s.flush()?;
        trainer.save_checkpoint(&s.paths.checkpoints.join("final"))?;
    }
    Ok(RunSummary { records, evals, trainer })
}

/// Fraction of SKIP actions across a design stream.
pub fn skip_frequency(specs: &[DesignSpec]) -> f64 {
    let (mut skips, mut total) = (0usize, 0usize);
    for s in specs {
        total += s.actions.len();
        skips += s.actions.iter().filter(|a| **a == DesignAction::Skip).count();
    }
    if total == 0 {
        0.0
    } else {
        skips as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(algo: Algorithm) -> TrainConfig {
        TrainConfig {
            algo,
            iterations: 6,
            max_pages: 2,
            steps: 4,
            episodes: 2,
            navigator: NavigatorConfig { embed: 6, hidden: 8 },
            adversary_hidden: 8,
            noise_dim: 4,
            eval_every: 3,
            eval_episodes: 2,
            eval_tasks: vec!["login:1".into()],
            ..TrainConfig::scaled(algo, 5)
        }
    }

    #[test]
    fn regret_examples() {
        assert!((paired_regret(&[1.0, 0.2], &[0.4, 0.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(paired_regret(&[0.3, 0.3], &[0.3, 0.3]), Some(0.0));
        assert_eq!(paired_regret(&[-1.0], &[1.0]), Some(-2.0));
        assert_eq!(paired_regret(&[], &[1.0]), None);
        let (r, t) = flexible_regret(1.0, 0.2);
        assert!((r - 0.4).abs() < 1e-15);
        assert_eq!(t, AgentTag::A);
        assert_eq!(flexible_regret(0.2, 1.0).1, AgentTag::P);
        assert_eq!(flexible_regret(0.7, 0.7), (0.0, AgentTag::A));
        assert_eq!(budget_objective(0.5, &[-1.0, -2.0]), -1.5);
        assert_eq!(budget_objective(0.0, &[-1.0, -2.0]), 0.0);
        assert_eq!(budget_objective(-0.5, &[-3.0]), 1.5);
    }

    #[test]
    fn cl_schedule_endpoints() {
        let s = ClSchedule { p0: 0.1, iterations_to_one: 80 };
        assert_eq!(s.p(0), 0.1);
        assert_eq!(s.p(80), 1.0);
        assert_eq!(s.p(1000), 1.0);
        let mut last = 0.0;
        for i in 0..100 {
            assert!(s.p(i) >= last);
            last = s.p(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = cl_sample(80, &s, 2, 50, None, &mut rng);
        assert!(full.actions.iter().all(|a| *a != DesignAction::Skip));
    }

    #[test]
    fn generators_respect_pages_and_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let subset = [3usize, 9];
        for _ in 0..200 {
            let d = dr_sample(3, 6, Some(&subset), &mut rng);
            assert!((1..=3).contains(&d.k));
            for a in &d.actions {
                if let DesignAction::Place { primitive, page } = a {
                    assert!(*page < d.k);
                    assert!(subset.contains(primitive));
                }
            }
        }
        let a = dr_sample(3, 6, None, &mut ChaCha8Rng::seed_from_u64(2));
        let b = dr_sample(3, 6, None, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let bad = TrainConfig { episodes: 0, ..TrainConfig::default() };
        match bad.validate() {
            Err(TrainError::Config { field, .. }) => assert_eq!(field, "episodes"),
            other => panic!("{other:?}"),
        }
        let bad = TrainConfig { primitive_subset: Some(vec!["bogus".into()]), ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config { field, .. }) if field == "primitive_subset"));
        let bad = TrainConfig { eval_tasks: vec!["login:9".into()], ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config { field, .. }) if field == "eval_tasks"));
        TrainConfig::scaled(Algorithm::FlexibleB, 0).validate().unwrap();
    }

    #[test]
    fn flexible_records_are_exact_and_nonnegative() {
        for algo in [Algorithm::Flexible, Algorithm::FlexibleB] {
            let run = train(tiny(algo), None, |_| {}).unwrap();
            assert_eq!(run.records.len(), 6);
            assert_eq!(run.evals.len(), 4);
            for r in &run.records {
                let regret = r.regret.unwrap();
                assert!(regret >= 0.0);
                assert_eq!(regret, 0.5 * (r.mean_return_a - r.mean_return_p).abs());
            }
        }
    }

    #[test]
    fn baselines_leave_adversary_untouched() {
        for algo in [Algorithm::Dr, Algorithm::Cl] {
            let before = Trainer::new(tiny(algo)).unwrap().adversary.store.checksum();
            let run = train(tiny(algo), None, |_| {}).unwrap();
            assert_eq!(run.trainer.adversary.store.checksum(), before);
            assert!(run.records.iter().all(|r| r.regret.is_none() && r.adversary_loss.is_none()));
        }
    }

    #[test]
    fn adversary_variants_move_the_adversary() {
        for algo in [Algorithm::Paired, Algorithm::PairedB, Algorithm::FlexibleB] {
            let before = Trainer::new(tiny(algo)).unwrap().adversary.store.checksum();
            let run = train(tiny(algo), None, |_| {}).unwrap();
            assert_ne!(run.trainer.adversary.store.checksum(), before, "{algo:?}");
        }
    }

    #[test]
    fn runs_are_deterministic_and_worker_independent() {
        let a = train(tiny(Algorithm::FlexibleB), None, |_| {}).unwrap().records;
        let b = train(TrainConfig { workers: 3, ..tiny(Algorithm::FlexibleB) }, None, |_| {}).unwrap().records;
        assert_eq!(a, b);
    }

    #[test]
    fn run_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        train(tiny(Algorithm::Dr), Some(dir.path()), |_| {}).unwrap();
        let p = RunPaths::new(dir.path());
        assert_eq!(fs::read_to_string(&p.metrics).unwrap().lines().count(), 6);
        assert_eq!(fs::read_to_string(&p.eval_jsonl).unwrap().lines().count(), 4);
        assert!(p.eval_dir.join("iter_000003_agent_a.csv").exists());
        assert!(p.checkpoints.join("final/agent_a.rfck").exists());
        assert!(!p.checkpoints.join("final/adversary.rfck").exists());
    }
}
