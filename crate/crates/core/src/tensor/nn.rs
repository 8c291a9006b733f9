use rand::Rng;

use super::{Graph, ParamId, ParamStore, Result, Var};

/// Dense layer `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_random(format!("{name}.w"), &[input, output], rng);
        let bias = store.add_zeros(format!("{name}.b"), &[output]);
        Self { weight, bias, input, output }
    }

    /// All-zero layer; its output is the (zero) bias until trained.
    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        let weight = store.add_zeros(format!("{name}.w"), &[input, output]);
        let bias = store.add_zeros(format!("{name}.b"), &[output]);
        Self { weight, bias, input, output }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.affine(x, w, b)
    }
}

/// Standard four-gate LSTM cell; gate blocks are ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub gates: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let gates = Linear::new(store, name, input + hidden, 4 * hidden, rng);
        Self { gates, input, hidden }
    }

    /// One step: returns `(h', c')`.
    pub fn cell(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let xh = g.concat(&[x, h])?;
        let z = self.gates.forward(g, store, xh)?;
        let i = g.slice(z, 0, n)?;
        let f = g.slice(z, n, n)?;
        let cand = g.slice(z, 2 * n, n)?;
        let o = g.slice(z, 3 * n, n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c2 = g.add(keep, write)?;
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc)?;
        Ok((h2, c2))
    }

    pub fn zero_state(&self, g: &mut Graph) -> (Var, Var) {
        let h = g.vector(vec![0.0; self.hidden]);
        let c = g.vector(vec![0.0; self.hidden]);
        (h, c)
    }
}
