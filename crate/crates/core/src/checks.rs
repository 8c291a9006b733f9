//! Finite-difference gradient checks over every differentiable op and model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adversary::{Adversary, AdversaryConfig, LossCoefficients};
use crate::env::EnvConfig;
use crate::navigator::{collect, A2cConfig, Navigator, NavigatorConfig};
use crate::site::{render, DesignSpec, Provenance};
use crate::tensor::{grad_check, GradCheckReport, Graph, Lstm, ParamStore, Result, Tensor, Var};

#[derive(Debug, Clone, Serialize)]
pub struct ModelCheck {
    pub model: String,
    pub report: GradCheckReport,
}

/// Multiplies by a fixed pseudo-random tensor and sums, so every output
/// entry gets a distinct upstream gradient.
fn weighted(g: &mut Graph, v: Var) -> Result<Var> {
    let t = g.value(v).clone();
    let w: Vec<f64> = (0..t.len()).map(|i| ((i as f64 + 1.0) * 0.7311).sin()).collect();
    let c = g.constant(Tensor::new(t.shape().to_vec(), w)?);
    let m = g.mul(v, c)?;
    Ok(g.sum(m))
}

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>;

fn op_cases(seed: u64) -> Vec<(&'static str, ParamStore, Build)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut cases: Vec<(&'static str, ParamStore, Build)> = Vec::new();
    let mut store_with = |shapes: &[(&str, &[usize])], positive: bool| {
        let mut s = ParamStore::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| if positive { rng.gen_range(0.5..2.0) } else { rng.gen_range(-1.5..1.5) })
                .collect();
            s.add(*name, Tensor::new(shape.to_vec(), data).expect("shape matches"));
        }
        s
    };

    macro_rules! case {
        ($name:expr, $store:expr, |$g:ident, $p:ident| $body:expr) => {
            cases.push(($name, $store, Box::new(move |$g: &mut Graph, s: &ParamStore| {
                let $p = |g: &mut Graph, name: &str| g.param(s, s.id(name).expect("registered"));
                let out: Var = $body;
                weighted($g, out)
            })));
        };
    }

    case!("affine", store_with(&[("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2])], false), |g, p| {
        let (x, w, b) = (p(g, "x"), p(g, "w"), p(g, "b"));
        g.affine(x, w, b)?
    });
    case!("matmul", store_with(&[("a", &[2, 3]), ("b", &[3, 4]), ("v", &[3])], false), |g, p| {
        let (a, b, v) = (p(g, "a"), p(g, "b"), p(g, "v"));
        let m = g.matmul(a, b)?;
        let r = g.matmul(v, b)?;
        let c = g.matmul(a, v)?;
        let m = g.reshape(m, &[8])?;
        g.concat(&[m, r, c])?
    });
    case!("transpose", store_with(&[("a", &[2, 3])], false), |g, p| {
        let a = p(g, "a");
        g.transpose(a)?
    });
    case!("add-sub-mul", store_with(&[("a", &[5]), ("b", &[5])], false), |g, p| {
        let (a, b) = (p(g, "a"), p(g, "b"));
        let s = g.add(a, b)?;
        let d = g.sub(a, b)?;
        g.mul(s, d)?
    });
    case!("scale-add-scalar", store_with(&[("a", &[4])], false), |g, p| {
        let a = p(g, "a");
        let s = g.scale(a, -2.5);
        g.add_scalar(s, 0.3)
    });
    case!("tanh", store_with(&[("a", &[6])], false), |g, p| {
        let a = p(g, "a");
        g.tanh(a)
    });
    case!("sigmoid", store_with(&[("a", &[6])], false), |g, p| {
        let a = p(g, "a");
        g.sigmoid(a)
    });
    case!("relu", store_with(&[("a", &[6])], false), |g, p| {
        let a = p(g, "a");
        g.relu(a)
    });
    case!("exp", store_with(&[("a", &[4])], false), |g, p| {
        let a = p(g, "a");
        g.exp(a)
    });
    case!("log", store_with(&[("a", &[4])], true), |g, p| {
        let a = p(g, "a");
        g.log(a)
    });
    case!("sum-mean", store_with(&[("a", &[2, 3])], false), |g, p| {
        let a = p(g, "a");
        let s = g.sum(a);
        let m = g.mean(a);
        let sq = g.mul(s, m)?;
        g.reshape(sq, &[1])?
    });
    case!("concat-slice", store_with(&[("a", &[3]), ("b", &[4])], false), |g, p| {
        let (a, b) = (p(g, "a"), p(g, "b"));
        let c = g.concat(&[a, b, a])?;
        g.slice(c, 2, 4)?
    });
    case!("stack-row-embedding", store_with(&[("t", &[4, 3]), ("v", &[3])], false), |g, p| {
        let (t, v) = (p(g, "t"), p(g, "v"));
        let r0 = g.row(t, 1)?;
        let r1 = g.embedding(t, 1)?;
        let r2 = g.embedding(t, 3)?;
        g.stack(&[r0, r1, r2, v])?
    });
    case!("log-softmax-masked", store_with(&[("a", &[6])], false), |g, p| {
        let a = p(g, "a");
        g.log_softmax(a, Some(&[true, false, true, true, false, true]))?
    });
    case!("softmax-pick", store_with(&[("a", &[5])], false), |g, p| {
        let a = p(g, "a");
        let s = g.softmax(a, None)?;
        let x = g.pick(s, 2)?;
        let y = g.pick(s, 4)?;
        g.concat(&[s, x, y])?
    });
    cases
}

fn lstm_case(seed: u64) -> (ParamStore, Lstm) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(23));
    let mut store = ParamStore::new();
    let cell = Lstm::new(&mut store, "lstm", 4, 4, &mut rng);
    (store, cell)
}

/// Runs every registered check at `tolerance`. `seed` moves the random
/// parameter draws; 0 is the reference configuration.
pub fn gradcheck_suite(tolerance: f64, seed: u64) -> Vec<ModelCheck> {
    let mut out = Vec::new();
    for (name, mut store, build) in op_cases(seed) {
        let report = grad_check(&mut store, |g, s| build(g, s), tolerance, Some(0)).expect("op case builds");
        out.push(ModelCheck { model: format!("op/{name}"), report });
    }

    let (mut store, cell) = lstm_case(seed);
    let report = grad_check(
        &mut store,
        |g, s| {
            let x = g.vector(vec![0.3, -0.7, 1.1, 0.2]);
            let h = g.vector(vec![0.1, 0.4, -0.2, 0.5]);
            let c = g.vector(vec![-0.3, 0.2, 0.6, -0.1]);
            let (h1, c1) = cell.cell(g, s, x, h, c)?;
            let (h2, c2) = cell.cell(g, s, h1, h1, c1)?;
            let both = g.concat(&[h2, c2])?;
            weighted(g, both)
        },
        tolerance,
        Some(0),
    )
    .expect("lstm case builds");
    out.push(ModelCheck { model: "lstm-cell".into(), report });

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(29));
    let nav = Navigator::new(NavigatorConfig { embed: 8, hidden: 12 }, &mut rng);
    let spec = DesignSpec::from_names(1, &[Some(("username", 0)), Some(("cabin", 0)), Some(("navbar", 0)), Some(("submit", 0))], Provenance::Benchmark);
    let site = render(&spec).expect("fixed spec renders");
    let trajs = collect(&nav, &site, 2, &EnvConfig::default(), &mut rng, false).expect("rollouts").trajectories;
    let reports = nav.a2c_grad_check(&trajs, &A2cConfig::default(), tolerance, 0).expect("navigator loss builds");
    for (part, report) in ["policy", "value"].into_iter().zip(reports) {
        out.push(ModelCheck { model: format!("navigator/a2c-{part}"), report });
    }

    let adv = Adversary::new(AdversaryConfig { max_pages: 3, steps: 6, obs_dim: 4, hidden: 8, primitive_subset: None }, &mut rng);
    let sample = adv.sample_design(&mut rng).expect("sampling");
    let coeffs = LossCoefficients { regret: 0.6, baseline: 0.1, r_best: 0.8, lambda_budget: 1.0, entropy_coef: 0.01 };
    let report = adv.grad_check(&sample, &coeffs, tolerance, 0).expect("adversary loss builds");
    out.push(ModelCheck { model: "adversary/loss".into(), report });
    out
}
