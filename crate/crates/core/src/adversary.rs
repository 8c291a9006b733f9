//! Autoregressive environment designer.
//!
//! A standard-normal noise vector is encoded into an initial state, a page
//! count `k` is drawn, then an LSTM emits `N` (primitive, page) pairs. Each
//! sampled pair is embedded and fed back as the next input. Primitive index
//! 40 is SKIP; its page draw is ignored and excluded from the log-probability.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::NUM_PRIMITIVES;
use crate::navigator::sample_index;
use crate::site::{DesignAction, DesignSpec, Provenance};
use crate::tensor::{grad_check, AdamConfig, GradCheckReport, Graph, Linear, Lstm, ParamStore, Result, TensorError, Var};

/// Index of SKIP in the primitive head.
pub const SKIP: usize = NUM_PRIMITIVES;
pub const PRIMITIVE_ACTIONS: usize = NUM_PRIMITIVES + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    /// Maximum page count `K`.
    pub max_pages: usize,
    /// Design steps `N`.
    pub steps: usize,
    pub obs_dim: usize,
    pub hidden: usize,
    /// Restricts the primitive head to these ids (SKIP stays available).
    pub primitive_subset: Option<Vec<usize>>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self { max_pages: 3, steps: 8, obs_dim: 16, hidden: 64, primitive_subset: None }
    }
}

impl AdversaryConfig {
    /// Admissible entries of the 41-way primitive head.
    pub fn primitive_mask(&self) -> Vec<bool> {
        match &self.primitive_subset {
            None => vec![true; PRIMITIVE_ACTIONS],
            Some(ids) => {
                let mut m = vec![false; PRIMITIVE_ACTIONS];
                for &i in ids {
                    if i < NUM_PRIMITIVES {
                        m[i] = true;
                    }
                }
                m[SKIP] = true;
                m
            }
        }
    }
}

pub struct Adversary {
    pub store: ParamStore,
    pub cfg: AdversaryConfig,
    f0: Linear,
    fk: Linear,
    core: Lstm,
    fp: Linear,
    fl: Linear,
    fi: Linear,
}

/// Graph handles of one teacher-forced or sampled rollout.
pub struct Rollout {
    pub spec: DesignSpec,
    pub total: Var,
    pub logp_k: Var,
    pub primitive_logps: Vec<Var>,
    pub location_logps: Vec<Option<Var>>,
    pub skip_logps: Vec<Var>,
    /// Summed entropy of the primitive heads and the non-SKIP location heads.
    pub entropy: Var,
}

/// Plain-number summary of a sampled design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSample {
    pub spec: DesignSpec,
    pub noise: Vec<f64>,
    pub logp_k: f64,
    pub primitive_logps: Vec<f64>,
    pub location_logps: Vec<Option<f64>>,
    pub skip_logps: Vec<f64>,
    pub total_logp: f64,
    pub entropy: f64,
}

enum Mode<'a, R> {
    Sample(&'a mut R),
    Forced(&'a DesignSpec),
}

fn onehot(n: usize, i: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if let Some(i) = i {
        v[i] = 1.0;
    }
    v
}

/// `−Σ p log p` of a (possibly masked) log-softmax output.
pub fn masked_entropy(g: &mut Graph, log_probs: Var, mask: &[bool]) -> Result<Var> {
    let e = g.exp(log_probs);
    let m = g.vector(mask.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect());
    let p = g.mul(e, m)?;
    let plogp = g.mul(p, log_probs)?;
    let s = g.sum(plogp);
    Ok(g.scale(s, -1.0))
}

impl Adversary {
    pub fn new(cfg: AdversaryConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let (h, kmax) = (cfg.hidden, cfg.max_pages);
        let f0 = Linear::new(&mut store, "adv.f0", cfg.obs_dim, h, rng);
        let fk = Linear::new(&mut store, "adv.fk", h, kmax, rng);
        let core = Lstm::new(&mut store, "adv.core", h, h, rng);
        let fp = Linear::new(&mut store, "adv.fp", h, PRIMITIVE_ACTIONS, rng);
        let fl = Linear::new(&mut store, "adv.fl", h, kmax, rng);
        let fi = Linear::new(&mut store, "adv.fi", PRIMITIVE_ACTIONS + 2 * kmax, h, rng);
        Self { store, cfg, f0, fk, core, fp, fl, fi }
    }

    /// Zeroes the three output heads so every categorical is uniform.
    pub fn uniform_heads(&mut self) {
        for l in [self.fk, self.fp, self.fl] {
            self.store.value_mut(l.weight).data_mut().fill(0.0);
            self.store.value_mut(l.bias).data_mut().fill(0.0);
        }
    }

    /// Bias entry of the primitive head belonging to SKIP.
    pub fn skip_bias(&self) -> (crate::tensor::ParamId, usize) {
        (self.fp.bias, SKIP)
    }

    pub fn sample_noise(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.cfg.obs_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn rollout<R: Rng>(&self, store: &ParamStore, g: &mut Graph, noise: &[f64], mut mode: Mode<'_, R>) -> Result<Rollout> {
        let (kmax, n) = (self.cfg.max_pages, self.cfg.steps);
        if noise.len() != self.cfg.obs_dim {
            return Err(TensorError::Shape(format!("noise of length {}, expected {}", noise.len(), self.cfg.obs_dim)));
        }
        if let Mode::Forced(spec) = &mode {
            if spec.k == 0 || spec.k > kmax || spec.actions.len() != n {
                return Err(TensorError::Shape(format!(
                    "spec with k={} and {} actions does not fit K={kmax}, N={n}",
                    spec.k,
                    spec.actions.len()
                )));
            }
        }
        let o = g.vector(noise.to_vec());
        let h0 = self.f0.forward(g, store, o)?;
        let h0 = g.tanh(h0);

        let k_logits = self.fk.forward(g, store, h0)?;
        let k_lp = g.log_softmax(k_logits, None)?;
        let k = match &mut mode {
            Mode::Sample(rng) => sample_index(&probs(g, k_lp, None), &mut **rng) + 1,
            Mode::Forced(spec) => spec.k,
        };
        let logp_k = g.pick(k_lp, k - 1)?;

        let prim_mask = self.cfg.primitive_mask();
        let loc_mask: Vec<bool> = (0..kmax).map(|i| i < k).collect();
        let k_hot = onehot(kmax, Some(k - 1));

        let mut h = h0;
        let mut c = g.vector(vec![0.0; self.cfg.hidden]);
        let mut prev: (Option<usize>, Option<usize>) = (None, None);
        let mut actions = Vec::with_capacity(n);
        let mut primitive_logps = Vec::with_capacity(n);
        let mut location_logps = Vec::with_capacity(n);
        let mut skip_logps = Vec::with_capacity(n);
        let mut total_terms = vec![logp_k];
        let mut entropy_terms = Vec::new();
        for step in 0..n {
            let mut feats = onehot(PRIMITIVE_ACTIONS, prev.0);
            feats.extend(onehot(kmax, prev.1));
            feats.extend_from_slice(&k_hot);
            let x = g.vector(feats);
            let x = self.fi.forward(g, store, x)?;
            let x = g.tanh(x);
            (h, c) = self.core.cell(g, store, x, h, c)?;

            let p_logits = self.fp.forward(g, store, h)?;
            let p_lp = g.log_softmax(p_logits, Some(&prim_mask))?;
            let l_logits = self.fl.forward(g, store, h)?;
            let l_lp = g.log_softmax(l_logits, Some(&loc_mask))?;

            let (prim, page) = match &mut mode {
                Mode::Sample(rng) => {
                    let a = sample_index(&probs(g, p_lp, Some(&prim_mask)), &mut **rng);
                    let b = sample_index(&probs(g, l_lp, Some(&loc_mask)), &mut **rng);
                    (a, b)
                }
                Mode::Forced(spec) => match spec.actions[step] {
                    DesignAction::Skip => (SKIP, 0),
                    DesignAction::Place { primitive, page } => {
                        if !prim_mask.get(primitive).copied().unwrap_or(false) {
                            return Err(TensorError::Shape(format!("step {step}: primitive {primitive} is masked")));
                        }
                        if page >= k {
                            return Err(TensorError::Index { index: page, len: k });
                        }
                        (primitive, page)
                    }
                },
            };
            let lp_prim = g.pick(p_lp, prim)?;
            primitive_logps.push(lp_prim);
            total_terms.push(lp_prim);
            skip_logps.push(g.pick(p_lp, SKIP)?);
            entropy_terms.push(masked_entropy(g, p_lp, &prim_mask)?);
            if prim == SKIP {
                location_logps.push(None);
                actions.push(DesignAction::Skip);
                prev = (Some(SKIP), None);
            } else {
                let lp_loc = g.pick(l_lp, page)?;
                location_logps.push(Some(lp_loc));
                total_terms.push(lp_loc);
                entropy_terms.push(masked_entropy(g, l_lp, &loc_mask)?);
                actions.push(DesignAction::Place { primitive: prim, page });
                prev = (Some(prim), Some(page));
            }
        }
        let total = g.add_all(&total_terms)?;
        let entropy = g.add_all(&entropy_terms)?;
        let provenance = match &mode {
            Mode::Forced(spec) => spec.provenance,
            Mode::Sample(_) => Provenance::Adversary,
        };
        Ok(Rollout {
            spec: DesignSpec { k, actions, provenance },
            total,
            logp_k,
            primitive_logps,
            location_logps,
            skip_logps,
            entropy,
        })
    }

    /// Draws noise and samples a design.
    pub fn sample_design(&self, rng: &mut impl Rng) -> Result<DesignSample> {
        let noise = self.sample_noise(rng);
        let mut g = Graph::new();
        let r = self.rollout(&self.store, &mut g, &noise, Mode::Sample(rng))?;
        Ok(summarize(&g, r, noise))
    }

    /// Teacher-forced log-probability of `spec` under noise `noise`.
    pub fn design_log_prob(&self, g: &mut Graph, spec: &DesignSpec, noise: &[f64]) -> Result<Rollout> {
        self.design_log_prob_with(&self.store, g, spec, noise)
    }

    pub fn design_log_prob_with(&self, store: &ParamStore, g: &mut Graph, spec: &DesignSpec, noise: &[f64]) -> Result<Rollout> {
        self.rollout::<rand_chacha::ChaCha8Rng>(store, g, noise, Mode::Forced(spec))
    }

    /// Plain-number evaluation of [`Adversary::design_log_prob`].
    pub fn evaluate(&self, spec: &DesignSpec, noise: &[f64]) -> Result<DesignSample> {
        let mut g = Graph::new();
        let r = self.design_log_prob(&mut g, spec, noise)?;
        Ok(summarize(&g, r, noise.to_vec()))
    }

    /// One Adam step on [`adversary_loss`] for a previously sampled design.
    pub fn update(&mut self, sample: &DesignSample, coeffs: &LossCoefficients, adam: &AdamConfig) -> Result<f64> {
        let mut g = Graph::new();
        let r = self.design_log_prob(&mut g, &sample.spec, &sample.noise)?;
        let loss = adversary_loss(&mut g, &r, coeffs)?;
        self.store.zero_grad();
        g.backward(loss, &mut self.store)?;
        self.store.adam_step(adam);
        self.store.zero_grad();
        Ok(g.scalar_value(loss))
    }

    /// Finite-difference check of the full adversary loss on a sampled design.
    pub fn grad_check(&self, sample: &DesignSample, coeffs: &LossCoefficients, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
        let mut store = self.store.clone();
        grad_check(
            &mut store,
            |g, s| {
                let r = self.design_log_prob_with(s, g, &sample.spec, &sample.noise)?;
                adversary_loss(g, &r, coeffs)
            },
            tolerance,
            Some(seed),
        )
    }
}

fn probs(g: &Graph, lp: Var, mask: Option<&[bool]>) -> Vec<f64> {
    g.value(lp)
        .data()
        .iter()
        .enumerate()
        .map(|(i, l)| if mask.map_or(true, |m| m[i]) { l.exp() } else { 0.0 })
        .collect()
}

fn summarize(g: &Graph, r: Rollout, noise: Vec<f64>) -> DesignSample {
    DesignSample {
        spec: r.spec,
        noise,
        logp_k: g.scalar_value(r.logp_k),
        primitive_logps: r.primitive_logps.iter().map(|v| g.scalar_value(*v)).collect(),
        location_logps: r.location_logps.iter().map(|v| v.map(|v| g.scalar_value(v))).collect(),
        skip_logps: r.skip_logps.iter().map(|v| g.scalar_value(*v)).collect(),
        total_logp: g.scalar_value(r.total),
        entropy: g.scalar_value(r.entropy),
    }
}

/// Scalars entering the adversary loss; `r_best` carries no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub regret: f64,
    pub baseline: f64,
    pub r_best: f64,
    pub lambda_budget: f64,
    pub entropy_coef: f64,
}

/// `−(regret − baseline)·log π(design) + λ·R_best·Σ log π(SKIP) − β_H·H`.
pub fn adversary_loss(g: &mut Graph, r: &Rollout, c: &LossCoefficients) -> Result<Var> {
    let pg = g.scale(r.total, -(c.regret - c.baseline));
    let skips = g.add_all(&r.skip_logps)?;
    let budget = g.scale(skips, c.lambda_budget * c.r_best);
    let ent = g.scale(r.entropy, -c.entropy_coef);
    g.add_all(&[pg, budget, ent])
}

/// Exponential moving average used as the REINFORCE baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaBaseline {
    pub value: f64,
    pub decay: f64,
}

impl Default for EmaBaseline {
    fn default() -> Self {
        Self { value: 0.0, decay: 0.95 }
    }
}

impl EmaBaseline {
    /// Returns the baseline before folding in `x`.
    pub fn observe(&mut self, x: f64) -> f64 {
        let b = self.value;
        self.value = self.decay * self.value + (1.0 - self.decay) * x;
        b
    }
}
