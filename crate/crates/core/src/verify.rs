//! Finite-difference gradient suite over every graph op and every composed
//! objective, at desk sizes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::nn::{
    Bound, ClassifierHead, ClassifierSpec, DiscriminatorNet, DiscriminatorSpec, DomainVar, GeneratorNet, GeneratorSpec,
    Mode, ParamStore, DISC_FEATURES,
};
use crate::objectives::{
    cls_loss, compose_d_loss, compose_g_loss, gan_d_loss, gan_g_loss, reg_d, reg_g, DiscInputs, LossVariant,
    LossWeights,
};
use crate::tensor::{grad_check_params, GradCheckReport, Graph, Tensor, Var};

/// Deliberate defects for exercising the harness itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// `reg_g` keeps its value but back-propagates the negated gradient.
    RegGSignFlip,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tol: f64,
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            instances: 20,
            seed: 0,
            step: 1e-5,
            tol: 1e-3,
            fault: None,
        }
    }
}

/// Aggregate result for one op or objective.
#[derive(Clone, Debug, PartialEq)]
pub struct OpResult {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub max_error: f64,
    pub failures: usize,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub ops: Vec<OpResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpResult::passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &OpResult> {
        self.ops.iter().filter(|o| !o.passed())
    }

    /// Whitespace-aligned table, one row per op.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<22} {:>9} {:>8} {:>13} {:>8}  status\n",
            "op", "instances", "checked", "max_rel_err", "failures"
        );
        for o in &self.ops {
            let _ = writeln!(
                s,
                "{:<22} {:>9} {:>8} {:>13.3e} {:>8}  {}",
                o.name,
                o.instances,
                o.checked,
                o.max_error,
                o.failures,
                if o.passed() { "ok" } else { "FAIL" }
            );
        }
        s
    }
}

type Params = BTreeMap<String, Tensor>;
type Body = Box<dyn Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>>;

/// One random instance: inputs to perturb and the scalar function of them.
struct Instance {
    params: Params,
    f: Body,
}

type Builder = fn(&mut ChaCha8Rng, usize, Option<Fault>) -> Result<Instance>;

fn normal(rng: &mut ChaCha8Rng, dims: &[usize], std: f64) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let s: f64 = StandardNormal.sample(rng);
            std * s
        })
        .collect::<Vec<f64>>();
    Tensor::new(dims, data).expect("dims match")
}

fn params(entries: Vec<(&str, Tensor)>) -> Params {
    entries.into_iter().map(|(k, t)| (k.to_string(), t)).collect()
}

/// Reduces any tensor to a scalar through a fixed random projection and a
/// tanh, so every output element gets a distinct, non-constant weight.
fn project(g: &mut Graph, y: Var, probe: &Tensor) -> Result<Var> {
    let n = g.value(y).numel();
    let flat = g.reshape(y, &[n])?;
    let w: Vec<f64> = (0..n).map(|i| probe.data()[i % probe.numel()]).collect();
    let w = g.constant(Tensor::new(&[n], w)?);
    let p = g.mul(flat, w)?;
    let t = g.tanh(p);
    Ok(g.sum(t))
}

fn unary(rng: &mut ChaCha8Rng, op: fn(&mut Graph, Var) -> Result<Var>) -> Instance {
    let probe = normal(rng, &[16], 1.0);
    Instance {
        params: params(vec![("x", normal(rng, &[3, 5], 1.0))]),
        f: Box::new(move |g, v| {
            let y = op(g, v["x"])?;
            project(g, y, &probe)
        }),
    }
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&mut Graph, Var, Var) -> Result<Var>) -> Instance {
    let probe = normal(rng, &[16], 1.0);
    Instance {
        params: params(vec![("a", normal(rng, &[3, 5], 1.0)), ("b", normal(rng, &[3, 5], 1.0))]),
        f: Box::new(move |g, v| {
            let y = op(g, v["a"], v["b"])?;
            project(g, y, &probe)
        }),
    }
}

fn with_probe(
    rng: &mut ChaCha8Rng,
    p: Params,
    op: impl Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var> + 'static,
) -> Instance {
    let probe = normal(rng, &[23], 1.0);
    Instance {
        params: p,
        f: Box::new(move |g, v| {
            let y = op(g, v)?;
            project(g, y, &probe)
        }),
    }
}

fn scores(rng: &mut ChaCha8Rng, b: usize) -> Tensor {
    normal(rng, &[b, 1], 2.0)
}

fn flip_if(g: &mut Graph, r: Var, fault: Option<Fault>) -> Result<Var> {
    if fault != Some(Fault::RegGSignFlip) {
        return Ok(r);
    }
    // value 2r − r = r exactly, gradient −∇r
    let d = g.detach(r);
    let twice = g.scale(d, 2.0);
    g.sub(twice, r)
}

fn random_variant(rng: &mut ChaCha8Rng) -> LossVariant {
    if rng.random_bool(0.5) {
        LossVariant::Standard
    } else {
        LossVariant::LeastSquares
    }
}

fn random_weights(rng: &mut ChaCha8Rng) -> LossWeights {
    LossWeights {
        lambda: rng.random_range(0.5..2.0),
        beta: rng.random_range(0.5..2.0),
        gamma: rng.random_range(0.5..2.0),
    }
}

/// Small nets with parameters spread wide enough that every term matters.
/// Even instances use point nets, odd ones image nets.
struct Nets {
    gen: GeneratorNet,
    disc: DiscriminatorNet,
    cls: ClassifierHead,
    z: Tensor,
    reals: [Tensor; 2],
    labels: Vec<usize>,
}

fn reinit(store: &mut ParamStore, rng: &mut ChaCha8Rng, std: f64) {
    for (_, t) in store.iter_mut() {
        *t = normal(rng, t.dims(), std);
    }
}

fn nets(rng: &mut ChaCha8Rng, index: usize) -> Result<Nets> {
    let b = 3;
    let (gspec, dspec, sample, std) = if index.is_multiple_of(2) {
        (
            GeneratorSpec::points(3, 4, 2),
            DiscriminatorSpec::points(4, 2),
            vec![2],
            0.6,
        )
    } else {
        (
            GeneratorSpec::image(3, 1, 8)?,
            DiscriminatorSpec::image(1, 8)?,
            vec![1, 8, 8],
            0.3,
        )
    };
    let mut gen = GeneratorNet::new(gspec, 0)?;
    let mut disc = DiscriminatorNet::new(dspec, 0)?;
    let spec = ClassifierSpec {
        features: disc.feature_width()?,
        classes: 3,
    };
    let mut cls = ClassifierHead::new(spec, 0)?;
    reinit(&mut gen.params, rng, std);
    reinit(&mut disc.params, rng, std);
    reinit(&mut cls.params, rng, 0.6);
    let mut dims = vec![b];
    dims.extend(&sample);
    Ok(Nets {
        gen,
        disc,
        cls,
        z: normal(rng, &[b, 3], 1.0),
        reals: [normal(rng, &dims, 0.5), normal(rng, &dims, 0.5)],
        labels: (0..b).map(|_| rng.random_range(0..3)).collect(),
    })
}

/// Discriminator-side objective with the discriminator (and, in domain
/// adaptation mode, the classifier) as the perturbed inputs.
fn d_objective(rng: &mut ChaCha8Rng, index: usize, weights: LossWeights, uda: bool) -> Result<Instance> {
    let n = nets(rng, index)?;
    let variant = random_variant(rng);
    let mut p: Params = n.disc.params.as_map().clone();
    if uda {
        p.extend(n.cls.params.as_map().clone());
    }
    Ok(Instance {
        params: p,
        f: Box::new(move |g, v| {
            let gb = n.gen.params.bind(g, false);
            let db = Bound::from(v.clone());
            let z = g.constant(n.z.clone());
            let pair = n.gen.forward_pair(g, &gb, z, Mode::Train)?;
            let (mut real, mut fake, mut taps) = ([z; 2], [z; 2], Vec::new());
            let mut src = None;
            for d in DomainVar::BOTH {
                let x = g.detach(pair.images[d.id()]);
                let f = n.disc.forward(g, &db, x, d)?;
                fake[d.id()] = f.score;
                taps.push(f.taps);
                let xr = g.constant(n.reals[d.id()].clone());
                let r = n.disc.forward(g, &db, xr, d)?;
                real[d.id()] = r.score;
                if d == DomainVar::SOURCE {
                    src = Some(r.taps.require(DISC_FEATURES)?);
                }
            }
            let labeled = match (uda, src) {
                (true, Some(f)) => Some((n.cls.classify(g, &db, f)?, n.labels.as_slice())),
                _ => None,
            };
            let inputs = DiscInputs {
                real,
                fake,
                fake_taps: Some([&taps[0], &taps[1]]),
                labeled,
            };
            Ok(compose_d_loss(g, variant, &weights, &inputs)?.total)
        }),
    })
}

fn g_objective(rng: &mut ChaCha8Rng, index: usize, regularized: bool) -> Result<Instance> {
    let n = nets(rng, index)?;
    let variant = random_variant(rng);
    let mut weights = random_weights(rng);
    if !regularized {
        weights = weights.unregularized();
    }
    Ok(Instance {
        params: n.gen.params.as_map().clone(),
        f: Box::new(move |g, v| {
            let gb = Bound::from(v.clone());
            let db = n.disc.params.bind(g, false);
            let z = g.constant(n.z.clone());
            let pair = n.gen.forward_pair(g, &gb, z, Mode::Train)?;
            let mut s = [z; 2];
            for d in DomainVar::BOTH {
                s[d.id()] = n.disc.forward(g, &db, pair.images[d.id()], d)?.score;
            }
            Ok(compose_g_loss(g, variant, &weights, s, [&pair.taps[0], &pair.taps[1]])?.total)
        }),
    })
}

fn conv_instance(rng: &mut ChaCha8Rng, transpose: bool) -> Instance {
    let (stride, pad, k) = (
        rng.random_range(1..=2),
        rng.random_range(0..=1),
        rng.random_range(2..=3),
    );
    let (cin, cout, o) = (2, 3, rng.random_range(2..=4));
    // input extent whose forward output is exactly `o`
    let h = (o - 1) * stride + k - 2 * pad;
    let (x, w, bias) = if transpose {
        (
            normal(rng, &[2, cout, o, o], 1.0),
            normal(rng, &[cout, cin, k, k], 0.5),
            normal(rng, &[cin], 0.5),
        )
    } else {
        (
            normal(rng, &[2, cin, h, h], 1.0),
            normal(rng, &[cout, cin, k, k], 0.5),
            normal(rng, &[cout], 0.5),
        )
    };
    with_probe(rng, params(vec![("x", x), ("w", w), ("bias", bias)]), move |g, v| {
        if transpose {
            g.conv2d_transpose(v["x"], v["w"], Some(v["bias"]), stride, pad)
        } else {
            g.conv2d(v["x"], v["w"], Some(v["bias"]), stride, pad)
        }
    })
}

fn builders() -> Vec<(&'static str, Builder)> {
    vec![
        ("add", |r, _, _| Ok(binary(r, |g, a, b| g.add(a, b)))),
        ("sub", |r, _, _| Ok(binary(r, |g, a, b| g.sub(a, b)))),
        ("mul", |r, _, _| Ok(binary(r, |g, a, b| g.mul(a, b)))),
        ("scale", |r, _, _| Ok(unary(r, |g, x| Ok(g.scale(x, -1.7))))),
        ("neg", |r, _, _| Ok(unary(r, |g, x| Ok(g.neg(x))))),
        ("relu", |r, _, _| Ok(unary(r, |g, x| Ok(g.relu(x))))),
        ("leaky_relu", |r, _, _| Ok(unary(r, |g, x| Ok(g.leaky_relu(x, 0.2))))),
        ("sigmoid", |r, _, _| Ok(unary(r, |g, x| Ok(g.sigmoid(x))))),
        ("tanh", |r, _, _| Ok(unary(r, |g, x| Ok(g.tanh(x))))),
        ("softplus", |r, _, _| Ok(unary(r, |g, x| Ok(g.softplus(x))))),
        ("sum", |r, _, _| Ok(unary(r, |g, x| Ok(g.sum(x))))),
        ("mean", |r, _, _| Ok(unary(r, |g, x| Ok(g.mean(x))))),
        ("reshape", |r, _, _| Ok(unary(r, |g, x| g.reshape(x, &[5, 3])))),
        ("slice_batch", |r, _, _| Ok(unary(r, |g, x| g.slice_batch(x, 1, 3)))),
        ("concat", |r, _, _| {
            let probe = normal(r, &[16], 1.0);
            let p = params(vec![("a", normal(r, &[3, 5], 1.0)), ("b", normal(r, &[3, 5], 1.0))]);
            Ok(Instance {
                params: p,
                f: Box::new(move |g, v| {
                    let rows = g.concat(&[v["a"], v["b"], v["a"]], 0)?;
                    let cols = g.concat(&[v["b"], v["a"]], 1)?;
                    let (x, y) = (project(g, rows, &probe)?, project(g, cols, &probe)?);
                    g.add(x, y)
                }),
            })
        }),
        ("matmul", |r, _, _| {
            let p = params(vec![("a", normal(r, &[3, 4], 1.0)), ("b", normal(r, &[4, 5], 1.0))]);
            Ok(with_probe(r, p, |g, v| g.matmul(v["a"], v["b"])))
        }),
        ("add_bias", |r, _, _| {
            let p = params(vec![
                ("x", normal(r, &[3, 2, 2, 2], 1.0)),
                ("bias", normal(r, &[2], 1.0)),
            ]);
            Ok(with_probe(r, p, |g, v| g.add_bias(v["x"], v["bias"])))
        }),
        ("conv2d", |r, _, _| Ok(conv_instance(r, false))),
        ("conv2d_transpose", |r, _, _| Ok(conv_instance(r, true))),
        ("batch_norm", |r, i, _| {
            let dims: &[usize] = if i % 2 == 0 { &[4, 3] } else { &[3, 2, 2, 2] };
            let c = dims[1];
            let p = params(vec![
                ("x", normal(r, dims, 1.0)),
                ("scale", normal(r, &[c], 1.0)),
                ("shift", normal(r, &[c], 1.0)),
            ]);
            Ok(with_probe(r, p, |g, v| {
                Ok(g.batch_norm(v["x"], v["scale"], v["shift"], None)?.0)
            }))
        }),
        ("squared_l2", |r, _, _| Ok(binary(r, |g, a, b| g.squared_l2(a, b)))),
        ("softmax_cross_entropy", |r, _, _| {
            let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
            Ok(Instance {
                params: params(vec![("x", normal(r, &[4, 3], 2.0))]),
                f: Box::new(move |g, v| g.softmax_cross_entropy(v["x"], &labels)),
            })
        }),
        ("gan_d_loss", |r, _, _| {
            let variant = random_variant(r);
            let p = params(vec![("real", scores(r, 5)), ("fake", scores(r, 5))]);
            Ok(Instance {
                params: p,
                f: Box::new(move |g, v| gan_d_loss(g, variant, v["real"], v["fake"])),
            })
        }),
        ("gan_g_loss", |r, _, _| {
            let variant = random_variant(r);
            Ok(Instance {
                params: params(vec![("fake", scores(r, 5))]),
                f: Box::new(move |g, v| gan_g_loss(g, variant, v["fake"])),
            })
        }),
        ("reg_g", |r, _, fault| {
            let p = params(vec![
                ("h0", normal(r, &[3, 4, 2, 2], 1.0)),
                ("h1", normal(r, &[3, 4, 2, 2], 1.0)),
            ]);
            Ok(Instance {
                params: p,
                f: Box::new(move |g, v| {
                    let x = reg_g(g, v["h0"], v["h1"])?;
                    flip_if(g, x, fault)
                }),
            })
        }),
        ("reg_d", |r, _, _| {
            let p = params(vec![("h0", normal(r, &[3, 6], 1.0)), ("h1", normal(r, &[3, 6], 1.0))]);
            Ok(Instance {
                params: p,
                f: Box::new(|g, v| reg_d(g, v["h0"], v["h1"])),
            })
        }),
        ("cls_loss", |r, _, _| {
            let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
            Ok(Instance {
                params: params(vec![("logits", normal(r, &[5, 4], 2.0))]),
                f: Box::new(move |g, v| cls_loss(g, v["logits"], &labels)),
            })
        }),
        ("cgan_d_objective", |r, i, _| {
            d_objective(r, i, LossWeights::default().unregularized(), false)
        }),
        ("regcgan_d_objective", |r, i, _| {
            let w = random_weights(r);
            d_objective(r, i, w, false)
        }),
        ("cgan_g_objective", |r, i, _| g_objective(r, i, false)),
        ("regcgan_g_objective", |r, i, _| g_objective(r, i, true)),
        ("uda_d_objective", |r, i, _| {
            let w = random_weights(r);
            d_objective(r, i, w, true)
        }),
    ]
}

/// Names of every entry, in report order.
pub fn suite_ops() -> Vec<&'static str> {
    builders().into_iter().map(|(n, _)| n).collect()
}

/// Runs every entry on `opts.instances` random instances.
pub fn gradient_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for (k, (name, build)) in builders().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(k as u64);
        let mut acc = GradCheckReport::default();
        for i in 0..opts.instances {
            let inst = build(&mut rng, i, opts.fault)?;
            acc.merge(grad_check_params(&inst.f, &inst.params, opts.step, opts.tol)?);
        }
        report.ops.push(OpResult {
            name,
            instances: opts.instances,
            checked: acc.checked,
            max_error: acc.max_error,
            failures: acc.failures.len(),
        });
    }
    Ok(report)
}
