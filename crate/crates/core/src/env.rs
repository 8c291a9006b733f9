//! Episodic web-navigation MDP over a rendered website.
//!
//! Each episode samples an instruction (one value per field key), starts on
//! page 0 and accepts `(element, field)` actions. Rewards combine a
//! potential-based shaping term over the fraction of correctly filled
//! fields, a per-step penalty and a ±1 terminal reward.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{catalog, tokenize, NavEffect};
use crate::site::{Tag, Website};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already finished")]
    Done,
    #[error("element {0} does not exist")]
    NoSuchElement(usize),
    #[error("element {elem} is on page {page}, agent is on page {current}")]
    OffPage { elem: usize, page: usize, current: usize },
    #[error("element {0} is not focusable")]
    NotFocusable(usize),
    #[error("field index {index} out of range for {len} field(s)")]
    BadField { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub gamma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { gamma: 0.99 }
    }
}

/// Episode length limit: `3·n_fields + 2·k + 4`.
pub fn horizon(n_fields: usize, k: usize) -> usize {
    3 * n_fields + 2 * k + 4
}

/// Per-step penalty `-2/T`, so penalties sum to at least -2.
pub fn step_penalty(horizon: usize) -> f64 {
    -2.0 / horizon as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub fields: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NavAction {
    pub element: usize,
    pub field: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    #[default]
    None,
    Success,
    FailSubmit,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub potential_before: f64,
    pub potential_after: f64,
    /// `γ·Φ(s') − Φ(s)`.
    pub shaping: f64,
    pub n_correct: usize,
    pub terminal_kind: TerminalKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsElement {
    pub elem_id: usize,
    pub tag: Tag,
    pub text: Vec<String>,
    pub value: Vec<String>,
    pub focusable: bool,
    pub depth: usize,
    pub sibling: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsField {
    pub key: Vec<String>,
    pub value: Vec<String>,
}

/// What an agent sees: the current page and the instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub page: usize,
    pub elements: Vec<ObsElement>,
    pub fields: Vec<ObsField>,
}

impl Observation {
    /// Short hex digest of the serialized observation.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("observation serializes");
        let h = Sha256::digest(&json);
        h.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of a trajectory trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub obs_digest: String,
    pub action: NavAction,
    pub reward: f64,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub website: Website,
    pub current_page: usize,
    pub t: usize,
    pub horizon: usize,
    pub instruction: Instruction,
    pub filled: BTreeMap<String, String>,
    pub done: bool,
    pub gamma: f64,
    pub step_penalty: f64,
    pub terminal_kind: TerminalKind,
}

/// Starts an episode; instruction values are drawn from each key's value
/// domain with a generator seeded by `seed`.
pub fn reset(website: &Website, seed: u64, cfg: &EnvConfig) -> (EpisodeState, Observation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields = website
        .field_keys
        .iter()
        .map(|k| {
            let domain = catalog().domain_for_key(k).expect("field keys come from active primitives");
            (k.clone(), domain.sample(&mut rng))
        })
        .collect();
    let mut site = website.clone();
    for e in site.pages.iter_mut().flatten() {
        e.value.clear();
    }
    let t_max = horizon(website.n_fields(), website.k());
    let state = EpisodeState {
        website: site,
        current_page: 0,
        t: 0,
        horizon: t_max,
        instruction: Instruction { fields },
        filled: BTreeMap::new(),
        done: false,
        gamma: cfg.gamma,
        step_penalty: step_penalty(t_max),
        terminal_kind: TerminalKind::None,
    };
    let obs = state.observe();
    (state, obs)
}

/// `Σ_t γ^t r_t`.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut g = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += g * r;
        g *= gamma;
    }
    total
}

impl EpisodeState {
    pub fn n_fields(&self) -> usize {
        self.instruction.fields.len()
    }

    pub fn n_correct(&self) -> usize {
        self.instruction.fields.iter().filter(|(k, v)| self.filled.get(k) == Some(v)).count()
    }

    /// Fraction of correctly filled fields; 1 when there are none.
    pub fn potential(&self) -> f64 {
        if self.n_fields() == 0 {
            return 1.0;
        }
        self.n_correct() as f64 / self.n_fields() as f64
    }

    pub fn page_elements(&self) -> &[crate::site::DomElement] {
        &self.website.pages[self.current_page]
    }

    pub fn observe(&self) -> Observation {
        let page = self.page_elements();
        let mut sibling_counts: BTreeMap<Option<usize>, usize> = BTreeMap::new();
        let elements = page
            .iter()
            .map(|e| {
                let slot = sibling_counts.entry(e.parent).or_insert(0);
                let sibling = *slot;
                *slot += 1;
                ObsElement {
                    elem_id: e.elem_id,
                    tag: e.tag,
                    text: tokenize(&e.text),
                    value: tokenize(&e.value),
                    focusable: e.focusable,
                    depth: usize::from(e.parent.is_some()),
                    sibling,
                }
            })
            .collect();
        let fields = self
            .instruction
            .fields
            .iter()
            .map(|(k, v)| ObsField { key: tokenize(k), value: tokenize(v) })
            .collect();
        Observation { page: self.current_page, elements, fields }
    }

    /// Checks an action against the current page without applying it.
    pub fn validate(&self, action: NavAction) -> Result<(), EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        let (page, idx) = self.website.locate(action.element).ok_or(EnvError::NoSuchElement(action.element))?;
        if page != self.current_page {
            return Err(EnvError::OffPage { elem: action.element, page, current: self.current_page });
        }
        if !self.website.pages[page][idx].focusable {
            return Err(EnvError::NotFocusable(action.element));
        }
        let len = self.n_fields().max(1);
        if action.field >= len {
            return Err(EnvError::BadField { index: action.field, len });
        }
        Ok(())
    }

    pub fn step(&mut self, action: NavAction) -> Result<StepOutcome, EnvError> {
        self.validate(action)?;
        let (page, idx) = self.website.locate(action.element).expect("validated");
        let before = self.potential();
        self.t += 1;
        let mut terminal = TerminalKind::None;
        let elem = self.website.pages[page][idx].clone();
        match elem.tag {
            Tag::TextInput => {
                let value = self.instruction.fields.get(action.field).map(|f| f.1.clone()).unwrap_or_default();
                self.website.pages[page][idx].value = value.clone();
                if let Some(key) = &elem.hidden_key {
                    self.filled.insert(key.clone(), value);
                }
            }
            Tag::Option => {
                let page_elems = &mut self.website.pages[page];
                for e in page_elems.iter_mut() {
                    if e.parent == elem.parent && e.tag == Tag::Option {
                        e.value.clear();
                    }
                }
                page_elems[idx].value = "selected".into();
                if let Some(parent) = elem.parent {
                    if let Some(g) = page_elems.iter_mut().find(|e| e.elem_id == parent) {
                        g.value = elem.text.clone();
                    }
                }
                if let Some(key) = &elem.hidden_key {
                    self.filled.insert(key.clone(), elem.text.clone());
                }
            }
            Tag::Checkbox => {
                let next = if elem.value == "on" { "off" } else { "on" };
                self.website.pages[page][idx].value = next.into();
                if let Some(key) = &elem.hidden_key {
                    self.filled.insert(key.clone(), next.into());
                }
            }
            Tag::Button | Tag::Link => match elem.nav_effect {
                NavEffect::Advance => {
                    if self.current_page + 1 < self.website.k() {
                        self.current_page += 1;
                    }
                }
                NavEffect::Terminate => {
                    terminal = if self.n_correct() == self.n_fields() { TerminalKind::Success } else { TerminalKind::FailSubmit };
                }
                NavEffect::None => {}
            },
            Tag::Text | Tag::Image | Tag::Group => unreachable!("not focusable"),
        }
        let after = self.potential();
        let shaping = self.gamma * after - before;
        let mut reward = shaping + self.step_penalty;
        match terminal {
            TerminalKind::Success => reward += 1.0,
            TerminalKind::FailSubmit => reward -= 1.0,
            _ => {
                if self.t >= self.horizon {
                    terminal = TerminalKind::Timeout;
                    reward -= 1.0;
                }
            }
        }
        self.done = terminal != TerminalKind::None;
        self.terminal_kind = terminal;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
            info: StepInfo {
                potential_before: before,
                potential_after: after,
                shaping,
                n_correct: self.n_correct(),
                terminal_kind: terminal,
            },
        })
    }

    /// Scripted solver with access to hidden keys: fill the first wrong field
    /// that has an element on this page, else advance, else submit.
    pub fn oracle_policy(&self) -> NavAction {
        let page = self.page_elements();
        for (i, (key, val)) in self.instruction.fields.iter().enumerate() {
            if self.filled.get(key) == Some(val) {
                continue;
            }
            let target = page.iter().find(|e| {
                e.hidden_key.as_deref() == Some(key.as_str()) && (e.tag != Tag::Option || &e.text == val)
            });
            if let Some(e) = target {
                return NavAction { element: e.elem_id, field: i };
            }
        }
        let last = self.current_page + 1 == self.website.k();
        let wanted = if last { NavEffect::Terminate } else { NavEffect::Advance };
        let e = page
            .iter()
            .find(|e| e.nav_effect == wanted)
            .expect("rendered sites carry advance and submit controls");
        NavAction { element: e.elem_id, field: 0 }
    }

    /// Every valid action on the current page.
    pub fn valid_actions(&self) -> Vec<NavAction> {
        let nf = self.n_fields().max(1);
        self.page_elements()
            .iter()
            .filter(|e| e.focusable)
            .flat_map(|e| (0..nf).map(move |field| NavAction { element: e.elem_id, field }))
            .collect()
    }
}

/// Runs the oracle from a fresh reset; returns per-step rewards and the final state.
pub fn oracle_rollout(website: &Website, seed: u64, cfg: &EnvConfig) -> (Vec<f64>, EpisodeState) {
    let (mut state, _) = reset(website, seed, cfg);
    let mut rewards = Vec::new();
    while !state.done {
        let a = state.oracle_policy();
        rewards.push(state.step(a).expect("oracle actions are valid").reward);
    }
    (rewards, state)
}
