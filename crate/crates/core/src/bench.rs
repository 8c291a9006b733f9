//! Benchmark websites, greedy evaluation and design-complexity metrics.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::catalog::{catalog, NUM_PRIMITIVES};
use crate::env::EnvConfig;
use crate::navigator::{run_episode, Actor, Result};
use crate::parallel::par_map;
use crate::site::{parse_spec_body, render, DesignSpec, SiteError, Website};

pub const BENCHMARK_TEXT: &str = include_str!("../data/benchmark.txt");
/// SHA-256 of the shipped benchmark file; changing a composition must be deliberate.
pub const BENCHMARK_SHA256: &str = "5dbb4c7b275846f8faa1edba8da3153a9c6a55967ec3ca7a4c7dc87be24d3150";

pub const TASKS: [&str; 5] = ["login", "address", "payment", "flight", "shopping"];
pub const DIFFICULTIES: usize = 4;

#[derive(Debug, Clone)]
pub struct TestTask {
    pub name: String,
    pub difficulty: usize,
    pub spec: DesignSpec,
    pub website: Website,
}

impl TestTask {
    pub fn id(&self) -> String {
        format!("{}:{}", self.name, self.difficulty)
    }

    /// Stable index used to derive evaluation seeds, independent of filtering.
    fn key(&self) -> u64 {
        let t = TASKS.iter().position(|n| *n == self.name).unwrap_or(TASKS.len());
        (t * DIFFICULTIES + self.difficulty) as u64
    }
}

/// Parses the benchmark file format: `task <name> <difficulty>` lines, each
/// followed by a `GMDS/1` spec. `#` lines and blank lines are ignored.
pub fn parse_benchmark(text: &str) -> std::result::Result<Vec<TestTask>, SiteError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .peekable();
    let mut tasks = Vec::new();
    while let Some((ln, line)) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [kw, name, diff] = parts.as_slice() else {
            return Err(SiteError::Parse { line: ln, col: 1, msg: "expected `task <name> <difficulty>`".into() });
        };
        if *kw != "task" {
            return Err(SiteError::Parse { line: ln, col: 1, msg: format!("expected `task`, got `{kw}`") });
        }
        let difficulty: usize = diff
            .parse()
            .map_err(|_| SiteError::Parse { line: ln, col: 7 + name.len(), msg: format!("bad difficulty `{diff}`") })?;
        let spec = parse_spec_body(&mut lines, ln + 1)?;
        let website = render(&spec)?;
        tasks.push(TestTask { name: name.to_string(), difficulty, spec, website });
    }
    Ok(tasks)
}

/// The 20 shipped benchmark tasks, in file order.
pub fn test_suite() -> &'static [TestTask] {
    static SUITE: OnceLock<Vec<TestTask>> = OnceLock::new();
    SUITE.get_or_init(|| parse_benchmark(BENCHMARK_TEXT).expect("shipped benchmark parses"))
}

/// Task selector such as `login:1`, `login` or `all`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFilter {
    pub name: Option<String>,
    pub difficulty: Option<usize>,
}

impl TaskFilter {
    pub const ALL: TaskFilter = TaskFilter { name: None, difficulty: None };

    pub fn matches(&self, t: &TestTask) -> bool {
        self.name.as_deref().map_or(true, |n| n == t.name) && self.difficulty.map_or(true, |d| d == t.difficulty)
    }
}

impl FromStr for TaskFilter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(Self::ALL);
        }
        let (name, diff) = match s.split_once(':') {
            Some((n, d)) => (n, Some(d)),
            None => (s, None),
        };
        if !TASKS.contains(&name) {
            return Err(format!("unknown task `{name}`; expected one of {}", TASKS.join(", ")));
        }
        let difficulty = match diff {
            None => None,
            Some(d) => match d.parse::<usize>() {
                Ok(v) if (1..=DIFFICULTIES).contains(&v) => Some(v),
                _ => return Err(format!("difficulty `{d}` must be 1..{DIFFICULTIES}")),
            },
        };
        Ok(Self { name: Some(name.to_string()), difficulty })
    }
}

impl fmt::Display for TaskFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.name, self.difficulty) {
            (None, _) => write!(f, "all"),
            (Some(n), None) => write!(f, "{n}"),
            (Some(n), Some(d)) => write!(f, "{n}:{d}"),
        }
    }
}

/// Tasks matching any of `filters` (all tasks when `filters` is empty).
pub fn select_tasks(filters: &[TaskFilter]) -> Vec<&'static TestTask> {
    test_suite()
        .iter()
        .filter(|t| filters.is_empty() || filters.iter().any(|f| f.matches(t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: String,
    pub difficulty: usize,
    pub success_rate: f64,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Mean success over the evaluated tasks of each difficulty (`None` when
    /// no task of that difficulty was evaluated).
    pub per_difficulty: Vec<Option<f64>>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "task,difficulty,success_rate,episodes,seed";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.task, r.difficulty, r.success_rate, r.episodes, r.seed));
        }
        s
    }

    pub fn success(&self, task: &str, difficulty: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.task == task && r.difficulty == difficulty).map(|r| r.success_rate)
    }
}

/// Greedy, gradient-free evaluation: `episodes` fresh-seeded episodes per task.
pub fn evaluate(actor: &dyn Actor, tasks: &[&TestTask], episodes: usize, seed: u64, env: &EnvConfig, workers: usize) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(crate::navigator::AgentError::Argument("evaluation needs at least one episode".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..episodes).map(move |e| (t, e))).collect();
    let outcomes = par_map(&jobs, workers, |&(t, e)| {
        run_episode(actor, &tasks[t].website, crate::seed::derive(&[seed, tasks[t].key(), e as u64]), env, true).map(|tr| tr.success())
    });
    let mut wins = vec![0usize; tasks.len()];
    for (&(t, _), o) in jobs.iter().zip(outcomes) {
        if o? {
            wins[t] += 1;
        }
    }
    let rows: Vec<EvalRow> = tasks
        .iter()
        .zip(&wins)
        .map(|(t, w)| EvalRow {
            task: t.name.clone(),
            difficulty: t.difficulty,
            success_rate: *w as f64 / episodes as f64,
            episodes,
            seed,
        })
        .collect();
    let per_difficulty = (1..=DIFFICULTIES)
        .map(|d| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.difficulty == d).map(|r| r.success_rate).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect();
    Ok(EvalReport { rows, per_difficulty })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityMetrics {
    /// Active fraction of each design (SKIPs excluded; 0 for an all-SKIP design).
    pub active_fraction: Vec<f64>,
    /// Placement counts over the 40 primitives for the early, middle and late
    /// thirds of the stream.
    pub histograms: [Vec<u64>; 3],
}

impl ComplexityMetrics {
    pub fn total_placements(&self) -> u64 {
        self.histograms.iter().flatten().sum()
    }
}

/// Per-design active fraction and windowed primitive histograms over a
/// stream of placed-id lists.
pub fn complexity_metrics(stream: &[Vec<usize>]) -> std::result::Result<ComplexityMetrics, crate::catalog::CatalogError> {
    let cat = catalog();
    let n = stream.len();
    let mut histograms = [vec![0u64; NUM_PRIMITIVES], vec![0u64; NUM_PRIMITIVES], vec![0u64; NUM_PRIMITIVES]];
    let mut active_fraction = Vec::with_capacity(n);
    for (i, ids) in stream.iter().enumerate() {
        active_fraction.push(cat.active_fraction(ids)?);
        let window = (3 * i / n.max(1)).min(2);
        for &id in ids {
            histograms[window][id] += 1;
        }
    }
    Ok(ComplexityMetrics { active_fraction, histograms })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with n − 2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<Spearman> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Some(Spearman { rho: 0.0, p_value: 1.0, n });
    }
    let rho = sxy / (sxx * syy).sqrt();
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Some(Spearman { rho, p_value, n })
}
