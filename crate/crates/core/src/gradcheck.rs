//! Central finite-difference checks of every tape operation, layer and loss.
//!
//! [`check_gradients`] compares reverse-mode gradients of a scalar
//! projection of any tape computation against `(f(θ + h) − f(θ − h)) / 2h`
//! for each parameter entry. [`run_suite`] applies it to randomized
//! instances of every differentiable building block. Instances whose
//! piecewise-linear arguments (relu, abs, max, pinball residual) fall within
//! [`KINK_MARGIN`] of a breakpoint are redrawn.

use rand::{Rng, SeedableRng};

use crate::autodiff::{Axis, ParamStore, Tape, Tensor, Var};
use crate::encoder::{sinusoidal_transform, PositionalEncoder, SinusoidalConfig};
use crate::error::{Error, Result};
use crate::layers::{dropout, Activation, DenseLayer, GraphInputs, GraphLayer, GraphLayerKind};
use crate::spatial::{build_knn_graph, CoordinateSet};
use crate::training::{morans_i, mse_loss, pegnn_head_loss, pegnn_loss, pinball_loss};
use crate::SeededRng;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// A computation of the parameters in a store.
pub type Computation = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

/// Fixed projection weights so every output entry contributes to the scalar.
fn projection(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|k| 0.5 + ((k * 7 + 3) % 11) as f64 / 10.0)
        .collect();
    Tensor::new(rows, cols, data).expect("projection shape")
}

fn project(store: &ParamStore, f: &Computation) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(projection(r, c));
    let weighted = tape.mul(out, w)?;
    let s = tape.sum(weighted, Axis::All);
    Ok((tape, s))
}

/// Largest relative error between analytic and central-difference gradients
/// over every entry of every parameter in `store`.
pub fn check_gradients(store: &ParamStore, f: &Computation, h: f64) -> Result<f64> {
    let mut analytic = store.clone();
    analytic.zero_grad();
    let (mut tape, loss) = project(&analytic, f)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut analytic);

    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for id in store.ids() {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + h;
            let (t, up) = project(&probe, f)?;
            let up = t.value(up).item();
            probe.value_mut(id).data_mut()[k] = orig - h;
            let (t, down) = project(&probe, f)?;
            let down = t.value(down).item();
            probe.value_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.grad(id).data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if !err.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite gradient comparison for `{}`[{k}]",
                    store.get(id).name
                )));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// One randomized problem: parameters and the computation over them.
pub struct Instance {
    pub store: ParamStore,
    pub f: Computation,
}

/// Draws an instance, or `None` when it lands too close to a kink.
pub type Generator = fn(&mut SeededRng) -> Result<Option<Instance>>;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

fn uniform(rng: &mut SeededRng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Entries with magnitude in `[lo, hi]` and a random sign, so `0` is never near.
fn signed(rng: &mut SeededRng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..r * c)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(r, c, data).expect("shape")
}

fn clear_of_kinks(values: &Tensor, kink: f64) -> bool {
    values.data().iter().all(|v| (v - kink).abs() > KINK_MARGIN)
}

fn unary(x: Tensor, op: fn(&mut Tape, Var) -> Result<Var>) -> Result<Option<Instance>> {
    let mut store = ParamStore::new();
    let id = store.add("x", x);
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let x = t.param(s, id);
            op(t, x)
        }),
    }))
}

fn binary(a: Tensor, b: Tensor, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<Option<Instance>> {
    let mut store = ParamStore::new();
    let ia = store.add("a", a);
    let ib = store.add("b", b);
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let a = t.param(s, ia);
            let b = t.param(s, ib);
            op(t, a, b)
        }),
    }))
}

/// Right-operand shape for each broadcast mode of the elementwise ops.
fn broadcast_shape(rng: &mut SeededRng) -> (usize, usize) {
    match rng.random_range(0..3) {
        0 => (3, 4),
        1 => (1, 4),
        _ => (1, 1),
    }
}

fn random_graph(rng: &mut SeededRng, n: usize, k: usize) -> Result<crate::spatial::SpatialGraph> {
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(33.0..35.0), rng.random_range(-119.0..-117.0)))
        .collect();
    build_knn_graph(&CoordinateSet::from_pairs(&pairs)?, k)
}

/// Random nonzero biases so layers are not evaluated at a special point.
fn randomize(store: &mut ParamStore, rng: &mut SeededRng) {
    for id in store.ids().collect::<Vec<_>>() {
        let (r, c) = store.value(id).shape();
        *store.value_mut(id) = uniform(rng, r, c, -0.8, 0.8);
    }
}

/// Value of a computation, for kink screening.
fn evaluate(store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>) -> Result<Tensor> {
    let mut t = Tape::new();
    let v = f(&mut t, store)?;
    Ok(t.value(v).clone())
}

fn dense_case(rng: &mut SeededRng, activation: Activation) -> Result<Option<Instance>> {
    let mut store = ParamStore::new();
    let layer = DenseLayer::new(&mut store, "dense", 3, 4, activation, rng);
    randomize(&mut store, rng);
    let ix = store.add("x", uniform(rng, 5, 3, -1.5, 1.5));
    if activation == Activation::Relu {
        let linear = DenseLayer {
            activation: Activation::Identity,
            ..layer.clone()
        };
        let z = evaluate(&store, |t, s| {
            let x = t.param(s, ix);
            linear.forward(t, s, x)
        })?;
        if !clear_of_kinks(&z, 0.0) {
            return Ok(None);
        }
    }
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let x = t.param(s, ix);
            layer.forward(t, s, x)
        }),
    }))
}

fn graph_case(rng: &mut SeededRng, kind: GraphLayerKind, activation: Activation) -> Result<Option<Instance>> {
    let graph = random_graph(rng, 7, 3)?;
    let mut store = ParamStore::new();
    let layer = GraphLayer::new(&mut store, "graph", kind, 3, 4, activation, 0.0, rng)?;
    randomize(&mut store, rng);
    let ih = store.add("h", uniform(rng, 7, 3, -1.5, 1.5));
    if activation == Activation::Relu {
        let linear = GraphLayer {
            activation: Activation::Identity,
            ..layer.clone()
        };
        let g = graph.clone();
        let z = evaluate(&store, move |t, s| {
            let inputs = GraphInputs::record(t, &g);
            let h = t.param(s, ih);
            linear.forward(t, s, h, inputs, None)
        })?;
        if !clear_of_kinks(&z, 0.0) {
            return Ok(None);
        }
    }
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let inputs = GraphInputs::record(t, &graph);
            let h = t.param(s, ih);
            layer.forward(t, s, h, inputs, None)
        }),
    }))
}

fn dropout_case(rng: &mut SeededRng) -> Result<Option<Instance>> {
    let mut store = ParamStore::new();
    let ix = store.add("x", uniform(rng, 6, 4, -1.0, 1.0));
    let mask_seed: u64 = rng.random();
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            // the same mask on every evaluation
            let mut r = SeededRng::seed_from_u64(mask_seed);
            let x = t.param(s, ix);
            dropout(t, x, 0.4, Some(&mut r))
        }),
    }))
}

fn encoder_case(rng: &mut SeededRng) -> Result<Option<Instance>> {
    let cfg = SinusoidalConfig {
        sigma_min: 0.1,
        sigma_max: 2.0,
        num_scales: 3,
    };
    let mut store = ParamStore::new();
    let pe = PositionalEncoder::new(&mut store, cfg, 5, 3, rng)?;
    randomize(&mut store, rng);
    let coords = uniform(rng, 6, 2, -1.0, 1.0);
    let hidden = pe.network[0].clone();
    let pre = DenseLayer {
        activation: Activation::Identity,
        ..hidden
    };
    let feats = sinusoidal_transform(&coords, &cfg)?;
    let z = evaluate(&store, |t, s| {
        let x = t.constant(feats.clone());
        pre.forward(t, s, x)
    })?;
    if !clear_of_kinks(&z, 0.0) {
        return Ok(None);
    }
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| pe.encode(t, s, &coords)),
    }))
}

fn pinball_case(rng: &mut SeededRng) -> Result<Option<Instance>> {
    let y = uniform(rng, 8, 1, -1.0, 1.0);
    let q = uniform(rng, 8, 1, -1.0, 1.0);
    let resid = Tensor::new(8, 1, y.data().iter().zip(q.data()).map(|(a, b)| a - b).collect())?;
    if !clear_of_kinks(&resid, 0.0) {
        return Ok(None);
    }
    let tau = uniform(rng, 8, 1, 0.01, 0.99);
    let mut store = ParamStore::new();
    let iq = store.add("q", q);
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let y = t.constant(y.clone());
            let tau = t.constant(tau.clone());
            let q = t.param(s, iq);
            pinball_loss(t, y, q, tau)
        }),
    }))
}

fn mse_case(rng: &mut SeededRng) -> Result<Option<Instance>> {
    let y = uniform(rng, 6, 1, -1.0, 1.0);
    let mut store = ParamStore::new();
    let iyh = store.add("yhat", uniform(rng, 6, 1, -1.0, 1.0));
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let y = t.constant(y.clone());
            let yh = t.param(s, iyh);
            mse_loss(t, y, yh)
        }),
    }))
}

fn moran_case(rng: &mut SeededRng, which: u8) -> Result<Option<Instance>> {
    let graph = random_graph(rng, 8, 3)?;
    let w = graph.row_standardized();
    let y = uniform(rng, 8, 1, 0.0, 1.0);
    let mut store = ParamStore::new();
    let iyh = store.add("yhat", uniform(rng, 8, 1, 0.0, 1.0));
    let ih = store.add("moran_hat", uniform(rng, 8, 1, -1.0, 1.0));
    let lambda = rng.random_range(0.25..1.0);
    Ok(Some(Instance {
        store,
        f: Box::new(move |t, s| {
            let yhat = t.param(s, iyh);
            match which {
                0 => morans_i(t, yhat, &w),
                1 => {
                    let y = t.constant(y.clone());
                    pegnn_loss(t, y, yhat, &w, lambda)
                }
                _ => {
                    let y = t.constant(y.clone());
                    let mh = t.param(s, ih);
                    pegnn_head_loss(t, y, yhat, mh, &w, lambda)
                }
            }
        }),
    }))
}

/// Every checked building block with its instance generator.
pub fn cases() -> Vec<(&'static str, Generator)> {
    vec![
        ("matmul", |r| binary(uniform(r, 3, 4, -1.0, 1.0), uniform(r, 4, 2, -1.0, 1.0), |t, a, b| t.matmul(a, b))),
        ("add", |r| {
            let (br, bc) = broadcast_shape(r);
            binary(uniform(r, 3, 4, -1.0, 1.0), uniform(r, br, bc, -1.0, 1.0), |t, a, b| t.add(a, b))
        }),
        ("sub", |r| {
            let (br, bc) = broadcast_shape(r);
            binary(uniform(r, 3, 4, -1.0, 1.0), uniform(r, br, bc, -1.0, 1.0), |t, a, b| t.sub(a, b))
        }),
        ("mul", |r| {
            let (br, bc) = broadcast_shape(r);
            binary(uniform(r, 3, 4, -1.0, 1.0), uniform(r, br, bc, -1.0, 1.0), |t, a, b| t.mul(a, b))
        }),
        ("div", |r| {
            let (br, bc) = broadcast_shape(r);
            binary(uniform(r, 3, 4, -1.0, 1.0), signed(r, br, bc, 0.5, 2.0), |t, a, b| t.div(a, b))
        }),
        ("scale", |r| {
            let x = uniform(r, 3, 4, -1.0, 1.0);
            unary(x, |t, x| Ok(t.scale(x, -1.7)))
        }),
        ("add_scalar", |r| {
            let x = uniform(r, 3, 4, -1.0, 1.0);
            unary(x, |t, x| Ok(t.add_scalar(x, 0.4)))
        }),
        ("relu", |r| {
            let x = signed(r, 3, 4, 0.01, 2.0);
            unary(x, |t, x| Ok(t.relu(x)))
        }),
        ("max_scalar", |r| {
            let x = signed(r, 3, 4, 0.01, 2.0).map(|v| v + 0.3);
            unary(x, |t, x| Ok(t.max_scalar(x, 0.3)))
        }),
        ("abs", |r| {
            let x = signed(r, 3, 4, 0.01, 2.0);
            unary(x, |t, x| Ok(t.abs(x)))
        }),
        ("logit", |r| {
            let x = uniform(r, 3, 4, 0.05, 0.95);
            unary(x, |t, x| t.logit(x))
        }),
        ("sigmoid", |r| {
            let x = uniform(r, 3, 4, -3.0, 3.0);
            unary(x, |t, x| Ok(t.sigmoid(x)))
        }),
        ("exp", |r| {
            let x = uniform(r, 3, 4, -2.0, 2.0);
            unary(x, |t, x| Ok(t.exp(x)))
        }),
        ("square", |r| {
            let x = uniform(r, 3, 4, -2.0, 2.0);
            unary(x, |t, x| Ok(t.square(x)))
        }),
        ("sum", |r| {
            let x = uniform(r, 3, 4, -1.0, 1.0);
            unary(x, |t, x| {
                let a = t.sum(x, Axis::All);
                let b = t.sum(x, Axis::Rows);
                let c = t.sum(x, Axis::Cols);
                let b = t.sum(b, Axis::All);
                let c = t.square(c);
                let c = t.sum(c, Axis::All);
                let ab = t.mul(a, b)?;
                t.add(ab, c)
            })
        }),
        ("mean", |r| {
            let x = uniform(r, 3, 4, -1.0, 1.0);
            unary(x, |t, x| {
                let a = t.mean(x, Axis::All);
                let b = t.mean(x, Axis::Rows);
                let c = t.mean(x, Axis::Cols);
                let b = t.square(b);
                let b = t.mean(b, Axis::All);
                let c = t.square(c);
                let c = t.mean(c, Axis::All);
                let ab = t.mul(a, b)?;
                t.add(ab, c)
            })
        }),
        ("concat_cols", |r| {
            let mut store = ParamStore::new();
            let ids: Vec<_> = (1..=3)
                .map(|c| store.add(format!("p{c}"), uniform(r, 4, c, -1.0, 1.0)))
                .collect();
            Ok(Some(Instance {
                store,
                f: Box::new(move |t, s| {
                    let parts: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
                    let c = t.concat_cols(&parts)?;
                    Ok(t.square(c))
                }),
            }))
        }),
        ("dense_identity", |r| dense_case(r, Activation::Identity)),
        ("dense_relu", |r| dense_case(r, Activation::Relu)),
        ("dense_sigmoid", |r| dense_case(r, Activation::Sigmoid)),
        ("dense_exp", |r| dense_case(r, Activation::Exp)),
        ("gcn_identity", |r| graph_case(r, GraphLayerKind::Gcn, Activation::Identity)),
        ("gcn_relu", |r| graph_case(r, GraphLayerKind::Gcn, Activation::Relu)),
        ("gsage_identity", |r| graph_case(r, GraphLayerKind::Gsage, Activation::Identity)),
        ("gsage_relu", |r| graph_case(r, GraphLayerKind::Gsage, Activation::Relu)),
        ("dropout", dropout_case),
        ("positional_encoder", encoder_case),
        ("pinball_loss", pinball_case),
        ("mse_loss", mse_case),
        ("morans_i", |r| moran_case(r, 0)),
        ("pegnn_loss", |r| moran_case(r, 1)),
        ("pegnn_head_loss", |r| moran_case(r, 2)),
    ]
}

/// Checks `instances` accepted draws of every case.
pub fn run_suite(instances: usize, seed: u64, h: f64) -> Result<Vec<CaseReport>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, gen) in cases() {
        let mut worst: f64 = 0.0;
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < instances {
            attempts += 1;
            if attempts > 100 * instances {
                return Err(Error::Validation(format!(
                    "{name}: too many draws rejected near kinks"
                )));
            }
            let Some(inst) = gen(&mut rng)? else { continue };
            worst = worst.max(check_gradients(&inst.store, &inst.f, h)?);
            accepted += 1;
        }
        out.push(CaseReport {
            name,
            instances: accepted,
            max_rel_error: worst,
        });
    }
    Ok(out)
}
