//! Per-block gradient checks: [`Graph::backward`] against central
//! differences on randomly drawn blocks, parameters and inputs.
//!
//! The fusion blocks and the head are checked on every parameter and input
//! coordinate of small random instances. The composed model is checked on a
//! 32×32 pair with a random mask, sampling a few coordinates from each
//! parameter group.

use std::collections::BTreeMap;
use std::fmt;

use crate::config::Config;
use crate::error::Result;
use crate::fusion::{Agf, Fem, FemMode, Tem};
use crate::graph::{Graph, OpKind, Var};
use crate::params::ParamStore;
use crate::pipeline::{Model, SegHead};
use crate::rng::{streams, RngState};
use crate::tensor::Tensor;

use super::{relative_error, DEFAULT_EPS};

pub const BLOCK_TOLERANCE: f64 = 1e-4;
pub const COMPOSED_TOLERANCE: f64 = 1e-3;
pub const COMPOSED_SIZE: usize = 32;
/// Coordinates sampled per parameter group in the composed check.
pub const SAMPLES_PER_GROUP: usize = 5;
const BIAS_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Fem,
    Tem,
    Agf,
    SegHead,
    EndToEnd,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::Fem, Block::Tem, Block::Agf, Block::SegHead, Block::EndToEnd];

    pub fn name(self) -> &'static str {
        match self {
            Block::Fem => "fem",
            Block::Tem => "tem",
            Block::Agf => "agf",
            Block::SegHead => "seg_head",
            Block::EndToEnd => "end_to_end",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Block::EndToEnd => COMPOSED_TOLERANCE,
            _ => BLOCK_TOLERANCE,
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub block: Block,
    pub trials: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// The coordinate with the largest error, e.g. ``param `agf.xy.q.weight`[3]``.
    pub worst: String,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.block.tolerance()
    }
}

#[derive(Clone, Debug)]
enum Coord {
    Param(String, usize),
    Input(usize, usize),
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Param(name, i) => write!(f, "param `{name}`[{i}]"),
            Coord::Input(k, i) => write!(f, "input {k}[{i}]"),
        }
    }
}

type Build<'a> = dyn Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var> + 'a;

/// A scalar function of named parameters and positional inputs.
struct Problem<'a> {
    store: ParamStore,
    inputs: Vec<Tensor>,
    build: Box<Build<'a>>,
    fault: Option<OpKind>,
}

impl Problem<'_> {
    fn eval(&self) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = (self.build)(&mut g, &self.store, &vars)?;
        Ok(g.value(loss).data()[0])
    }

    fn analytic(&self) -> Result<(BTreeMap<String, Tensor>, Vec<Tensor>)> {
        let mut g = Graph::new();
        if let Some(kind) = self.fault {
            g.inject_fault(kind);
        }
        let vars: Vec<Var> = self.inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = (self.build)(&mut g, &self.store, &vars)?;
        let grads = g.backward(loss)?;
        let inputs = vars.iter().map(|&v| grads.wrt(v).cloned().expect("inputs are tracked")).collect();
        Ok((grads.into_named(), inputs))
    }

    fn slot(&mut self, c: &Coord) -> &mut f64 {
        match c {
            Coord::Param(name, i) => &mut self.store.get_mut(name).expect("known parameter").data_mut()[*i],
            Coord::Input(k, i) => &mut self.inputs[*k].data_mut()[*i],
        }
    }

    fn numeric(&mut self, c: &Coord) -> Result<f64> {
        let orig = *self.slot(c);
        *self.slot(c) = orig + DEFAULT_EPS;
        let up = self.eval();
        *self.slot(c) = orig - DEFAULT_EPS;
        let down = self.eval();
        *self.slot(c) = orig;
        Ok((up? - down?) / (2.0 * DEFAULT_EPS))
    }

    fn all_coords(&self) -> Vec<Coord> {
        let params = self.store.iter().flat_map(|(n, t)| (0..t.len()).map(move |i| Coord::Param(n.to_owned(), i)));
        let inputs = self.inputs.iter().enumerate().flat_map(|(k, t)| (0..t.len()).map(move |i| Coord::Input(k, i)));
        params.chain(inputs).collect()
    }

    /// Largest relative error over `coords` and the coordinate where it occurs.
    fn check(&mut self, coords: &[Coord]) -> Result<(f64, String)> {
        let (params, inputs) = self.analytic()?;
        let mut worst = (0.0, String::new());
        for c in coords {
            let a = match c {
                Coord::Param(name, i) => params.get(name).map_or(0.0, |t| t.data()[*i]),
                Coord::Input(k, i) => inputs[*k].data()[*i],
            };
            let n = self.numeric(c)?;
            let e = relative_error(a, n);
            if e > worst.0 || worst.1.is_empty() {
                worst = (e, c.to_string());
            }
        }
        Ok(worst)
    }
}

fn rand_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn projected(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn fem_problem(rng: &mut RngState, trial: usize) -> Problem<'static> {
    let modes = [FemMode::Parallel, FemMode::Serial, FemMode::ChannelOnly, FemMode::SpatialOnly];
    let c = 2 + rng.below(3);
    let (h, w) = (2 + rng.below(3), 2 + rng.below(3));
    let fem = Fem::new("fem", c, modes[trial % modes.len()]);
    let mut store = ParamStore::new();
    fem.init(&mut store, rng);
    store.randomize_biases(BIAS_SCALE, rng);
    let inputs = vec![rand_tensor(&[c, h, w], rng), rand_tensor(&[c, h, w], rng)];
    let (rx, ry) = (rand_tensor(&[c, h, w], rng), rand_tensor(&[c, h, w], rng));
    Problem {
        store,
        inputs,
        build: Box::new(move |g, store, v| {
            let (ox, oy) = fem.forward(g, store, v[0], v[1])?;
            let lx = projected(g, ox, &rx)?;
            let ly = projected(g, oy, &ry)?;
            g.add(lx, ly)
        }),
        fault: None,
    }
}

fn tem_problem(rng: &mut RngState, trial: usize) -> Problem<'static> {
    let n = 2 + rng.below(3);
    let c = 2 + rng.below(3);
    let tem = Tem::new("tem", c, trial % 3);
    let mut store = ParamStore::new();
    tem.init(&mut store, rng);
    store.randomize_biases(BIAS_SCALE, rng);
    for (name, t) in store.iter_mut() {
        if name.ends_with(".gamma") {
            *t = Tensor::uniform(t.shape(), 0.5, 1.5, rng);
        }
    }
    let inputs = vec![rand_tensor(&[n, c], rng), rand_tensor(&[n, c], rng)];
    let (rx, ry) = (rand_tensor(&[n, c], rng), rand_tensor(&[n, c], rng));
    Problem {
        store,
        inputs,
        build: Box::new(move |g, store, v| {
            let out = tem.forward(g, store, v[0], v[1])?;
            let lx = projected(g, out.x, &rx)?;
            let ly = projected(g, out.y, &ry)?;
            g.add(lx, ly)
        }),
        fault: None,
    }
}

fn agf_problem(rng: &mut RngState, _trial: usize) -> Problem<'static> {
    let c = [2, 3, 4][rng.below(3)];
    let divisors: Vec<usize> = (1..=c).filter(|d| c % d == 0).collect();
    let heads = divisors[rng.below(divisors.len())];
    let (h, w) = (1 + rng.below(3), 1 + rng.below(3));
    let agf = Agf::new("agf", c, heads).expect("heads divide channels");
    let mut store = ParamStore::new();
    agf.init(&mut store, rng);
    store.randomize_biases(BIAS_SCALE, rng);
    let inputs = vec![rand_tensor(&[c, h, w], rng), rand_tensor(&[c, h, w], rng)];
    let r = rand_tensor(&[c, h, w], rng);
    Problem {
        store,
        inputs,
        build: Box::new(move |g, store, v| {
            let out = agf.forward(g, store, v[0], v[1])?;
            projected(g, out.fused, &r)
        }),
        fault: None,
    }
}

fn head_problem(rng: &mut RngState, _trial: usize) -> Problem<'static> {
    let in_channels = [2 + rng.below(2), 2 + rng.below(2), 2 + rng.below(2), 2 + rng.below(2)];
    let head = SegHead::new(in_channels, 3, 3);
    let mut store = ParamStore::new();
    head.init(&mut store, rng);
    store.randomize_biases(BIAS_SCALE, rng);
    let base = 8;
    let inputs: Vec<Tensor> = (0..4).map(|i| rand_tensor(&[in_channels[i], base >> i, base >> i], rng)).collect();
    let side = base * crate::pipeline::head::SCALE1_STRIDE;
    let r = rand_tensor(&[3, side, side], rng);
    Problem {
        store,
        inputs,
        build: Box::new(move |g, store, v| {
            let logits = head.forward_maps(g, store, [v[0], v[1], v[2], v[3]])?;
            projected(g, logits, &r)
        }),
        fault: None,
    }
}

fn group_of(name: &str) -> &str {
    let first = name.split('.').next().unwrap_or(name);
    match first {
        "ir" | "vis" => "backbone",
        other => other.trim_end_matches(|c: char| c.is_ascii_digit()),
    }
}

/// Composed model on a 32×32 pair: checks `SAMPLES_PER_GROUP` random
/// coordinates in each of backbone, fem, tem, agf and head.
fn composed_problem(rng: &mut RngState, _trial: usize) -> Result<(Problem<'static>, Vec<Coord>)> {
    let cfg = Config::default();
    let model = Model::new(&cfg)?;
    let mut store = model.init_params(rng.next_u64());
    store.randomize_biases(0.1, rng);
    let s = COMPOSED_SIZE;
    let inputs = vec![Tensor::uniform(&[3, s, s], 0.0, 1.0, rng), Tensor::uniform(&[3, s, s], 0.0, 1.0, rng)];
    let labels: Vec<u8> = (0..s * s).map(|_| rng.below(model.classes()) as u8).collect();

    let mut groups: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for (name, t) in store.iter() {
        groups.entry(group_of(name)).or_default().push((name, t.len()));
    }
    let mut coords = Vec::new();
    for members in groups.values() {
        for _ in 0..SAMPLES_PER_GROUP {
            let (name, len) = members[rng.below(members.len())];
            coords.push(Coord::Param(name.to_owned(), rng.below(len)));
        }
    }
    let problem = Problem {
        store,
        inputs,
        build: Box::new(move |g, store, v| {
            let features = model.backbone.forward(g, store, v[0], v[1])?;
            let logits = model.head.forward(g, store, &features)?;
            g.cross_entropy(logits, &labels)
        }),
        fault: None,
    };
    Ok((problem, coords))
}

/// Runs `trials` random instances of `block`. `fault` negates one kernel's
/// backward, to demonstrate that the check detects it.
pub fn check_block(block: Block, seed: u64, trials: usize, fault: Option<OpKind>) -> Result<BlockReport> {
    let root = RngState::at(seed, streams::CHECK, 0).fork(block as u64);
    let mut report = BlockReport { block, trials, coordinates: 0, max_rel_err: 0.0, worst: String::new() };
    for trial in 0..trials {
        let mut rng = root.fork(trial as u64);
        let (mut problem, coords) = match block {
            Block::Fem => (fem_problem(&mut rng, trial), None),
            Block::Tem => (tem_problem(&mut rng, trial), None),
            Block::Agf => (agf_problem(&mut rng, trial), None),
            Block::SegHead => (head_problem(&mut rng, trial), None),
            Block::EndToEnd => {
                let (p, c) = composed_problem(&mut rng, trial)?;
                (p, Some(c))
            }
        };
        problem.fault = fault;
        let coords = coords.unwrap_or_else(|| problem.all_coords());
        let (err, at) = problem.check(&coords)?;
        report.coordinates += coords.len();
        if err > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = err;
            report.worst = format!("trial {trial}: {at}");
        }
    }
    Ok(report)
}

pub fn run_suite(seed: u64, trials: usize, fault: Option<OpKind>) -> Result<Vec<BlockReport>> {
    Block::ALL.into_iter().map(|b| check_block(b, seed, trials, fault)).collect()
}
