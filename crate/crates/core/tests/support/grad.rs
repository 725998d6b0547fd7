//! Finite-difference gradient checks over composed layer pairs.

use std::collections::BTreeMap;

use sspb_core::models::{bind_params, LayerSpec};
use sspb_core::ops::Padding;
use sspb_core::rng::{rng_from, split};
use sspb_core::{Graph, LayerOpKind, ModelSpec, ParamSet, Tensor};

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;
pub const BATCH: usize = 2;
/// Pre-activations closer than this to a ReLU kink are resampled.
pub const KINK_MARGIN: f64 = 2e-2;

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    ConvSame,
    ConvStride2Valid,
    Dense,
    Relu,
    Sigmoid,
    Gap,
    Upsample,
    Dropout,
}

pub const KINDS: [Kind; 8] = [
    Kind::ConvSame,
    Kind::ConvStride2Valid,
    Kind::Dense,
    Kind::Relu,
    Kind::Sigmoid,
    Kind::Gap,
    Kind::Upsample,
    Kind::Dropout,
];

impl Kind {
    fn needs_spatial(self) -> bool {
        matches!(self, Kind::ConvSame | Kind::ConvStride2Valid | Kind::Gap | Kind::Upsample)
    }

    fn op(self, input: &[usize]) -> LayerOpKind {
        let last = *input.last().unwrap();
        match self {
            Kind::ConvSame => LayerOpKind::conv3x3(last, 3, 1),
            Kind::ConvStride2Valid => LayerOpKind::Conv2d {
                kernel_h: 2,
                kernel_w: 1,
                in_ch: last,
                out_ch: 2,
                stride: 2,
                padding: Padding::Valid,
            },
            Kind::Dense => LayerOpKind::Dense { in_dim: last, out_dim: 3 },
            Kind::Relu => LayerOpKind::Relu,
            Kind::Sigmoid => LayerOpKind::Sigmoid,
            Kind::Gap => LayerOpKind::GlobalAvgPool,
            Kind::Upsample => LayerOpKind::UpsampleNearest { factor: 2 },
            Kind::Dropout => LayerOpKind::Dropout { rate: 0.3 },
        }
    }
}

/// `a → b`, with a pooling step in between when `b` is dense and `a` leaves
/// a spatial map. `None` when `b` needs a spatial input that `a` cannot give.
pub fn pair_spec(a: Kind, b: Kind) -> Option<ModelSpec> {
    let flat_start = matches!(a, Kind::Dense);
    if flat_start && b.needs_spatial() {
        return None;
    }
    let input = if flat_start { vec![5] } else { vec![5, 4, 2] };
    let mut layers = vec![LayerSpec::new("t", "a", a.op(&input))];
    let mut shape = ModelSpec::new(input.clone(), layers.clone()).unwrap().output_shape().to_vec();
    if matches!(b, Kind::Dense) && shape.len() == 3 {
        layers.push(LayerSpec::new("t", "pool", LayerOpKind::GlobalAvgPool));
        shape = vec![shape[2]];
    }
    if b.needs_spatial() && shape.len() != 3 {
        return None;
    }
    layers.push(LayerSpec::new("t", "b", b.op(&shape)));
    Some(ModelSpec::new(input, layers).unwrap())
}

pub struct Problem {
    spec: ModelSpec,
    params: ParamSet<f64>,
    input: Tensor<f64>,
    target: Tensor<f64>,
    dropout_seed: u64,
}

pub fn loss_of(p: &Problem, params: &ParamSet<f64>, input: &Tensor<f64>) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars = bind_params(&mut g, params);
    let x = g.constant(input.clone());
    let y = p.spec.forward(&mut g, &vars, x, true, &mut rng_from(p.dropout_seed)).unwrap();
    let t = g.constant(p.target.clone());
    let l = g.mse(y, t).unwrap();
    g.value(l).item().unwrap()
}

pub fn analytic(p: &Problem) -> (BTreeMap<String, Tensor<f64>>, Tensor<f64>) {
    let mut g = Graph::<f64>::new();
    let vars = bind_params(&mut g, &p.params);
    let x = g.param(p.input.clone());
    let y = p.spec.forward(&mut g, &vars, x, true, &mut rng_from(p.dropout_seed)).unwrap();
    let t = g.constant(p.target.clone());
    let l = g.mse(y, t).unwrap();
    let grads = g.backward(l).unwrap();
    let by_name = vars.iter().map(|(k, v)| (k.clone(), grads.wrt(*v))).collect();
    (by_name, grads.wrt(x))
}

/// Max over entries of `|a − n| / max(|a|, |n|)`, with the scale floored at
/// 1e-3 of the tensor's largest gradient so that round-off on entries that
/// are essentially zero does not dominate.
pub fn rel_err(an: &Tensor<f64>, num: &[f64]) -> f64 {
    let scale = an.data().iter().chain(num).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    an.data()
        .iter()
        .zip(num)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Whether any ReLU input lies within `KINK_MARGIN` of zero without being
/// exactly zero (exact zeros come from dropout and are constant).
pub fn near_kink(p: &Problem) -> bool {
    let layers = p.spec.layers();
    for (i, l) in layers.iter().enumerate() {
        if l.kind != LayerOpKind::Relu {
            continue;
        }
        let z = if i == 0 {
            p.input.clone()
        } else {
            let prefix = ModelSpec::new(p.spec.input_shape().to_vec(), layers[..i].to_vec()).unwrap();
            let mut g = Graph::<f64>::new();
            let vars = bind_params(&mut g, &p.params);
            let x = g.constant(p.input.clone());
            let y = prefix.forward(&mut g, &vars, x, true, &mut rng_from(p.dropout_seed)).unwrap();
            g.value(y).clone()
        };
        if z.data().iter().any(|v| *v != 0.0 && v.abs() < KINK_MARGIN) {
            return true;
        }
    }
    false
}

pub fn problem(spec: &ModelSpec, seed: u64) -> Problem {
    for attempt in 0.. {
        let s = split(seed, attempt);
        let mut rng = rng_from(s);
        let mut params: ParamSet<f64> = spec.init_params(split(s, 1));
        // Non-zero biases exercise the bias path.
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += rand::Rng::gen_range(&mut rng, -0.3..0.3);
            }
        }
        let mut in_shape = vec![BATCH];
        in_shape.extend_from_slice(spec.input_shape());
        let mut out_shape = vec![BATCH];
        out_shape.extend_from_slice(spec.output_shape());
        let p = Problem {
            spec: spec.clone(),
            params,
            input: super::rand_tensor(&mut rng, &in_shape),
            target: super::rand_tensor(&mut rng, &out_shape),
            dropout_seed: split(s, 2),
        };
        if !near_kink(&p) {
            return p;
        }
    }
    unreachable!()
}

/// Worst relative error over every parameter and the input.
pub fn check(p: &Problem) -> f64 {
    let (grads, gx) = analytic(p);
    let mut worst = 0.0f64;
    for (name, g) in &grads {
        let base = p.params.get(name).unwrap();
        let num: Vec<f64> = (0..base.numel())
            .map(|i| {
                let mut plus = p.params.clone();
                plus.get_mut(name).unwrap().data_mut()[i] = base.data()[i] + H;
                let mut minus = p.params.clone();
                minus.get_mut(name).unwrap().data_mut()[i] = base.data()[i] - H;
                (loss_of(p, &plus, &p.input) - loss_of(p, &minus, &p.input)) / (2.0 * H)
            })
            .collect();
        worst = worst.max(rel_err(g, &num));
    }
    let num: Vec<f64> = (0..p.input.numel())
        .map(|i| {
            let mut plus = p.input.clone();
            plus.data_mut()[i] += H;
            let mut minus = p.input.clone();
            minus.data_mut()[i] -= H;
            (loss_of(p, &p.params, &plus) - loss_of(p, &p.params, &minus)) / (2.0 * H)
        })
        .collect();
    worst.max(rel_err(&gx, &num))
}

pub struct PairSuite {
    pub pairs: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

/// Every composable ordered pair of layer kinds, [`SEEDS`] problems each.
pub fn run_pair_suite() -> PairSuite {
    let mut suite = PairSuite {
        pairs: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    for (ai, &a) in KINDS.iter().enumerate() {
        for (bi, &b) in KINDS.iter().enumerate() {
            let Some(spec) = pair_spec(a, b) else { continue };
            suite.pairs += 1;
            for seed in 0..SEEDS {
                let p = problem(&spec, split((ai * 16 + bi) as u64, seed));
                let e = check(&p);
                suite.worst = suite.worst.max(e);
                if e > TOL {
                    suite.failures.push(format!("{a:?}→{b:?} seed {seed}: {e:.3e}"));
                }
            }
        }
    }
    suite
}
