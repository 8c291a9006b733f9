//! Web-navigation agent: an LSTM element encoder, a feed-forward field
//! encoder, a bilinear joint policy over `(element, field)` pairs and a value
//! head over the attention-pooled page context, trained with advantage
//! actor-critic.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{catalog, tokenize};
use crate::env::{episode_return, reset, EnvConfig, EpisodeState, NavAction, Observation, TerminalKind};
use crate::parallel::par_map;
use crate::site::{render, DesignAction, DesignSpec, Provenance, Tag, Website};
use crate::tensor::{grad_check_params, AdamConfig, GradCheckReport, Graph, Linear, Lstm, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error("observation has no focusable element")]
    NoFocusable,
    #[error("{0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, AgentError>;

const UNK: usize = 0;
const NULL_FIELD: usize = 1;

/// Closed token vocabulary built from every string the catalog can render.
#[derive(Debug, Clone)]
pub struct Vocab {
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_catalog() -> Self {
        let mut tokens = BTreeSet::new();
        let mut add = |s: &str| {
            for t in tokenize(s) {
                tokens.insert(t);
            }
        };
        for p in catalog().primitives() {
            add(&p.name);
            if let Some(k) = &p.field_key {
                add(k);
            }
            if let Some(d) = &p.value_domain {
                d.values().iter().for_each(|v| add(v));
            }
            let spec = DesignSpec { k: 2, actions: vec![DesignAction::Place { primitive: p.id, page: 1 }], provenance: Provenance::Dr };
            for e in render(&spec).expect("single placement renders").elements() {
                add(&e.text);
            }
        }
        add("selected");
        let mut index = HashMap::new();
        index.insert("<unk>".to_string(), UNK);
        index.insert("<null>".to_string(), NULL_FIELD);
        for t in tokens {
            let n = index.len();
            index.insert(t, n);
        }
        Self { index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigatorConfig {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        Self { embed: 32, hidden: 64 }
    }
}

const STRUCT_FEATURES: usize = 3;

pub struct Navigator {
    pub store: ParamStore,
    pub cfg: NavigatorConfig,
    vocab: Vocab,
    embedding: ParamId,
    encoder: Lstm,
    field_encoder: Linear,
    scorer: ParamId,
    element_prior: Linear,
    value_hidden: Linear,
    value_out: Linear,
}

/// Forward-pass handles for one observation.
pub struct PolicyOutput {
    /// Log-probabilities of the flattened `elements × fields` joint.
    pub log_probs: Var,
    pub probs: Vec<f64>,
    pub value: Var,
    pub elem_ids: Vec<usize>,
    pub n_fields: usize,
    mask: Vec<bool>,
}

impl PolicyOutput {
    pub fn action(&self, index: usize) -> NavAction {
        NavAction { element: self.elem_ids[index / self.n_fields], field: index % self.n_fields }
    }

    /// Element marginal of the joint distribution.
    pub fn element_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.n_fields).map(|r| r.iter().sum()).collect()
    }

    /// Differentiable entropy of the joint.
    pub fn entropy(&self, g: &mut Graph) -> Result<Var> {
        let e = g.exp(self.log_probs);
        let m = g.vector(self.mask.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect());
        let p = g.mul(e, m)?;
        let plogp = g.mul(p, self.log_probs)?;
        let s = g.sum(plogp);
        Ok(g.scale(s, -1.0))
    }
}

impl Navigator {
    pub fn new(cfg: NavigatorConfig, rng: &mut impl Rng) -> Self {
        let vocab = Vocab::from_catalog();
        let mut store = ParamStore::new();
        let (e, h) = (cfg.embed, cfg.hidden);
        let embedding = store.add_random("nav.embedding", &[vocab.len(), e], rng);
        // fan-in scaling of the embedding init would shrink rows to ~1/sqrt(V)
        let scale = (vocab.len() as f64).sqrt() * 0.5;
        store.value_mut(embedding).data_mut().iter_mut().for_each(|v| *v *= scale);
        let elem_in = 2 * e + Tag::ALL.len() + STRUCT_FEATURES;
        let encoder = Lstm::new(&mut store, "nav.encoder", elem_in, h, rng);
        let field_encoder = Linear::new(&mut store, "nav.field", 2 * e, h, rng);
        let scorer = store.add_random("nav.scorer", &[h, h], rng);
        let element_prior = Linear::new(&mut store, "nav.prior", h, 1, rng);
        let value_hidden = Linear::new(&mut store, "nav.value1", h, h / 2, rng);
        let value_out = Linear::new(&mut store, "nav.value2", h / 2, 1, rng);
        Self { store, cfg, vocab, embedding, encoder, field_encoder, scorer, element_prior, value_hidden, value_out }
    }

    /// Rebuilds a navigator from checkpointed parameters, reading the sizes
    /// off the embedding and scorer shapes.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let shape = |name: &str| {
            store
                .id(name)
                .map(|id| store.value(id).shape().to_vec())
                .ok_or_else(|| AgentError::Argument(format!("checkpoint has no tensor {name}")))
        };
        let (emb, sc) = (shape("nav.embedding")?, shape("nav.scorer")?);
        let cfg = NavigatorConfig { embed: emb[1], hidden: sc[0] };
        let mut nav = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        if emb[0] != nav.vocab.len() {
            return Err(AgentError::Argument(format!("checkpoint vocabulary has {} tokens, expected {}", emb[0], nav.vocab.len())));
        }
        nav.store.copy_values_from(store)?;
        Ok(nav)
    }

    /// Zeroes the bilinear scorer and element prior: the joint becomes uniform.
    pub fn zero_scorer(&mut self) {
        self.store.value_mut(self.scorer).data_mut().fill(0.0);
        self.store.value_mut(self.element_prior.weight).data_mut().fill(0.0);
        self.store.value_mut(self.element_prior.bias).data_mut().fill(0.0);
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn is_value_param(name: &str) -> bool {
        name.starts_with("nav.value")
    }

    fn mean_embedding(&self, g: &mut Graph, table: Var, tokens: &[String]) -> Result<Var> {
        if tokens.is_empty() {
            return Ok(g.vector(vec![0.0; self.cfg.embed]));
        }
        let rows = tokens
            .iter()
            .map(|t| g.embedding(table, self.vocab.id(t)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let s = g.stack(&rows)?;
        let w = g.vector(vec![1.0 / tokens.len() as f64; tokens.len()]);
        Ok(g.matmul(w, s)?)
    }

    pub fn forward(&self, g: &mut Graph, obs: &Observation) -> Result<PolicyOutput> {
        self.forward_with(&self.store, g, obs)
    }

    /// Forward pass reading parameters from `store`, which must share this
    /// navigator's layout (used by finite-difference checks).
    pub fn forward_with(&self, store: &ParamStore, g: &mut Graph, obs: &Observation) -> Result<PolicyOutput> {
        if !obs.elements.iter().any(|e| e.focusable) {
            return Err(AgentError::NoFocusable);
        }
        let table = g.param(store, self.embedding);
        let (mut h, mut c) = self.encoder.zero_state(g);
        let mut encodings = Vec::with_capacity(obs.elements.len());
        for e in &obs.elements {
            let text = self.mean_embedding(g, table, &e.text)?;
            let value = self.mean_embedding(g, table, &e.value)?;
            let mut feats = vec![0.0; Tag::ALL.len() + STRUCT_FEATURES];
            feats[e.tag.index()] = 1.0;
            feats[Tag::ALL.len()] = e.depth as f64;
            feats[Tag::ALL.len() + 1] = e.sibling as f64 / 4.0;
            feats[Tag::ALL.len() + 2] = if e.focusable { 1.0 } else { 0.0 };
            let f = g.vector(feats);
            let x = g.concat(&[text, value, f])?;
            (h, c) = self.encoder.cell(g, store, x, h, c)?;
            encodings.push(h);
        }
        let elems = g.stack(&encodings)?;

        let mut fields = Vec::new();
        if obs.fields.is_empty() {
            let key = g.embedding(table, NULL_FIELD)?;
            let value = g.vector(vec![0.0; self.cfg.embed]);
            fields.push(g.concat(&[key, value])?);
        } else {
            for f in &obs.fields {
                let key = self.mean_embedding(g, table, &f.key)?;
                let value = self.mean_embedding(g, table, &f.value)?;
                fields.push(g.concat(&[key, value])?);
            }
        }
        let n_fields = fields.len();
        let n_elems = encodings.len();
        let fin = g.stack(&fields)?;
        let fenc = self.field_encoder.forward(g, store, fin)?;
        let fenc = g.tanh(fenc);

        let w = g.param(store, self.scorer);
        let ew = g.matmul(elems, w)?;
        let ft = g.transpose(fenc)?;
        let scores = g.matmul(ew, ft)?;
        let prior = self.element_prior.forward(g, store, elems)?;
        let ones = g.constant(Tensor::matrix(1, n_fields, vec![1.0; n_fields])?);
        let prior = g.matmul(prior, ones)?;
        let scores = g.add(scores, prior)?;
        let flat = g.reshape(scores, &[n_elems * n_fields])?;
        let mask: Vec<bool> = obs.elements.iter().flat_map(|e| std::iter::repeat(e.focusable).take(n_fields)).collect();
        let log_probs = g.log_softmax(flat, Some(&mask))?;
        let probs: Vec<f64> = g
            .value(log_probs)
            .data()
            .iter()
            .zip(&mask)
            .map(|(l, &ok)| if ok { l.exp() } else { 0.0 })
            .collect();

        // value head reads a detached context so critic gradients stay out of the policy
        let marginal: Vec<f64> = probs.chunks(n_fields).map(|r| r.iter().sum()).collect();
        let enc_vals = g.value(elems).clone();
        let hdim = self.cfg.hidden;
        let mut context = vec![0.0; hdim];
        for (i, p) in marginal.iter().enumerate() {
            for j in 0..hdim {
                context[j] += p * enc_vals.data()[i * hdim + j];
            }
        }
        let ctx = g.vector(context);
        let v = self.value_hidden.forward(g, store, ctx)?;
        let v = g.tanh(v);
        let v = self.value_out.forward(g, store, v)?;
        let value = g.reshape(v, &[])?;

        Ok(PolicyOutput {
            log_probs,
            probs,
            value,
            elem_ids: obs.elements.iter().map(|e| e.elem_id).collect(),
            n_fields,
            mask,
        })
    }
}

/// One chosen action with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub action: NavAction,
    pub index: usize,
    pub log_prob: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Anything that can drive an episode.
pub trait Actor: Sync {
    fn choose(&self, state: &EpisodeState, obs: &Observation, rng: &mut ChaCha8Rng, greedy: bool) -> Result<Choice>;
}

/// Draws an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Actor for Navigator {
    fn choose(&self, _state: &EpisodeState, obs: &Observation, rng: &mut ChaCha8Rng, greedy: bool) -> Result<Choice> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, obs)?;
        let index = if greedy { argmax(&out.probs) } else { sample_index(&out.probs, rng) };
        let lp = g.value(out.log_probs).data();
        let entropy = -out.probs.iter().zip(lp).map(|(p, l)| p * l).sum::<f64>();
        Ok(Choice { action: out.action(index), index, log_prob: lp[index], value: g.scalar_value(out.value), entropy })
    }
}

/// Scripted solver that reads hidden keys.
pub struct OracleActor;

impl Actor for OracleActor {
    fn choose(&self, state: &EpisodeState, _obs: &Observation, _rng: &mut ChaCha8Rng, _greedy: bool) -> Result<Choice> {
        Ok(Choice { action: state.oracle_policy(), index: 0, log_prob: 0.0, value: 0.0, entropy: 0.0 })
    }
}

/// Uniform over valid `(element, field)` pairs.
pub struct RandomActor;

impl Actor for RandomActor {
    fn choose(&self, state: &EpisodeState, _obs: &Observation, rng: &mut ChaCha8Rng, _greedy: bool) -> Result<Choice> {
        let valid = state.valid_actions();
        let i = rng.gen_range(0..valid.len());
        let n = valid.len() as f64;
        Ok(Choice { action: valid[i], index: i, log_prob: -n.ln(), value: 0.0, entropy: n.ln() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Observation,
    pub choice: Choice,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub terminal: TerminalKind,
    pub ret: f64,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn success(&self) -> bool {
        self.terminal == TerminalKind::Success
    }
}

#[derive(Debug, Clone)]
pub struct Collected {
    pub trajectories: Vec<Trajectory>,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Runs one episode from `seed`.
pub fn run_episode(actor: &dyn Actor, website: &Website, seed: u64, env: &EnvConfig, greedy: bool) -> Result<Trajectory> {
    let (mut state, mut obs) = reset(website, seed, env);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut steps = Vec::new();
    while !state.done {
        let choice = actor.choose(&state, &obs, &mut rng, greedy)?;
        let out = state.step(choice.action)?;
        steps.push(StepRecord { observation: obs, choice, reward: out.reward });
        obs = out.observation;
    }
    let ret = episode_return(&steps.iter().map(|s| s.reward).collect::<Vec<_>>(), env.gamma);
    Ok(Trajectory { steps, terminal: state.terminal_kind, ret })
}

/// `m` independent episodes with distinct instruction seeds drawn from `rng`.
pub fn collect(actor: &dyn Actor, website: &Website, m: usize, env: &EnvConfig, rng: &mut impl Rng, greedy: bool) -> Result<Collected> {
    collect_par(actor, website, m, env, rng, greedy, 1)
}

/// [`collect`] with episodes spread over `workers` threads. Seeds are drawn
/// up front, so the result does not depend on `workers`.
pub fn collect_par(
    actor: &dyn Actor,
    website: &Website,
    m: usize,
    env: &EnvConfig,
    rng: &mut impl Rng,
    greedy: bool,
    workers: usize,
) -> Result<Collected> {
    if m == 0 {
        return Err(AgentError::Argument("need at least one episode".into()));
    }
    let seeds: Vec<u64> = (0..m).map(|_| rng.gen()).collect();
    let trajectories = par_map(&seeds, workers, |s| run_episode(actor, website, *s, env, greedy))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mean_return = trajectories.iter().map(|t| t.ret).sum::<f64>() / m as f64;
    let success_rate = trajectories.iter().filter(|t| t.success()).count() as f64 / m as f64;
    Ok(Collected { trajectories, mean_return, success_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2cConfig {
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adam: AdamConfig,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self { gamma: 0.99, value_coef: 0.5, entropy_coef: 0.01, adam: AdamConfig::default() }
    }
}

impl Serialize for AdamConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.lr, self.beta1, self.beta2, self.eps).serialize(s)
    }
}

impl<'de> Deserialize<'de> for AdamConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (lr, beta1, beta2, eps) = <(f64, f64, f64, f64)>::deserialize(d)?;
        Ok(AdamConfig { lr, beta1, beta2, eps })
    }
}

/// Per-step graph handles consumed by [`actor_critic_loss`].
pub struct StepTerms {
    pub log_prob: Var,
    pub value: Var,
    pub entropy: Var,
    /// Value estimate recorded when the action was taken; the advantage
    /// baseline, held constant.
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Discounted return-to-go for every step.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// `−Σ A·logπ + c_v·Σ (G − V)² − c_H·Σ H` with detached advantages `A = G − V̂`,
/// `V̂` being the value recorded at acting time.
pub fn actor_critic_loss(g: &mut Graph, steps: &[StepTerms], rewards: &[f64], cfg: &A2cConfig) -> Result<(Var, LossStats)> {
    let rtg = returns_to_go(rewards, cfg.gamma);
    let mut terms = Vec::with_capacity(steps.len() * 3);
    let mut stats = LossStats::default();
    for (s, ret) in steps.iter().zip(&rtg) {
        let adv = ret - s.baseline;
        let pol = g.scale(s.log_prob, -adv);
        stats.policy += g.scalar_value(pol);
        let target = g.scalar(*ret);
        let diff = g.sub(target, s.value)?;
        let sq = g.mul(diff, diff)?;
        let val = g.scale(sq, cfg.value_coef);
        stats.value += g.scalar_value(val);
        let ent = g.scale(s.entropy, -cfg.entropy_coef);
        stats.entropy += g.scalar_value(s.entropy);
        terms.extend([pol, val, ent]);
    }
    let loss = g.add_all(&terms)?;
    stats.total = g.scalar_value(loss);
    Ok((loss, stats))
}

impl Navigator {
    /// Builds the actor-critic loss over `trajectories` by re-running the
    /// forward pass on the recorded observations and actions.
    pub fn a2c_loss(&self, g: &mut Graph, trajectories: &[Trajectory], cfg: &A2cConfig) -> Result<(Var, LossStats)> {
        self.a2c_loss_with(&self.store, g, trajectories, cfg)
    }

    pub fn a2c_loss_with(&self, store: &ParamStore, g: &mut Graph, trajectories: &[Trajectory], cfg: &A2cConfig) -> Result<(Var, LossStats)> {
        if trajectories.is_empty() {
            return Err(AgentError::Argument("a2c update needs at least one trajectory".into()));
        }
        let mut parts = Vec::new();
        let mut stats = LossStats::default();
        for t in trajectories {
            let mut steps = Vec::with_capacity(t.steps.len());
            for s in &t.steps {
                let out = self.forward_with(store, g, &s.observation)?;
                let log_prob = g.pick(out.log_probs, s.choice.index)?;
                let entropy = out.entropy(g)?;
                steps.push(StepTerms { log_prob, value: out.value, entropy, baseline: s.choice.value });
            }
            let (l, st) = actor_critic_loss(g, &steps, &t.rewards(), cfg)?;
            parts.push(l);
            stats.policy += st.policy;
            stats.value += st.value;
            stats.entropy += st.entropy;
        }
        let loss = g.add_all(&parts)?;
        stats.total = g.scalar_value(loss);
        Ok((loss, stats))
    }

    /// Finite-difference checks of the actor-critic loss. The critic reads a
    /// detached context, so the policy parameters are checked on the loss
    /// without its value term and the value head on the full loss.
    pub fn a2c_grad_check(&self, trajectories: &[Trajectory], cfg: &A2cConfig, tolerance: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
        let run = |cfg: A2cConfig, select: fn(&str) -> bool| {
            let mut store = self.store.clone();
            grad_check_params(
                &mut store,
                |g, s| {
                    self.a2c_loss_with(s, g, trajectories, &cfg).map(|(l, _)| l).map_err(|e| match e {
                        AgentError::Tensor(t) => t,
                        other => TensorError::Shape(other.to_string()),
                    })
                },
                tolerance,
                Some(seed),
                select,
            )
        };
        let policy = run(A2cConfig { value_coef: 0.0, ..*cfg }, |n| !Navigator::is_value_param(n))?;
        let value = run(*cfg, Navigator::is_value_param)?;
        Ok(vec![policy, value])
    }

    /// One Adam step on the actor-critic loss.
    pub fn a2c_update(&mut self, trajectories: &[Trajectory], cfg: &A2cConfig) -> Result<LossStats> {
        let mut g = Graph::new();
        let (loss, stats) = self.a2c_loss(&mut g, trajectories, cfg)?;
        self.store.zero_grad();
        g.backward(loss, &mut self.store)?;
        self.store.adam_step(&cfg.adam);
        self.store.zero_grad();
        Ok(stats)
    }
}
