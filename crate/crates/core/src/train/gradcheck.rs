//! Central-difference gradient checks in 64-bit arithmetic for every
//! primitive, the conv, residual and SE blocks, the losses and a full model.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::metrics::{segmentation_loss, DEFAULT_DICE_EPSILON};
use crate::model::{UNet, UNetConfig};
use crate::nn::{
    BatchNorm2d, Conv2d, ConvBlock, Dense, Initializer, Layer, Module, SeBlock, TensorRole, UpConv2x2,
};
use crate::tensor::{
    add, channelwise_scale, channelwise_scale_backward, concat_channels, global_avg_pool,
    global_avg_pool_backward, maxpool2x2, maxpool2x2_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, split_channels, Mode, Tensor,
};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;
/// Elements checked per group; larger groups use a seeded subset.
pub const MAX_ELEMENTS_PER_GROUP: usize = 64;
/// Denominator floor of the relative error, multiplied by `max(1, |L|)` for
/// objective `L` since finite-difference roundoff grows with `|L|`.
pub const REL_ERR_FLOOR: f64 = 1e-6;
/// At most `1 / MAX_KINK_FRACTION_DEN` of a group's elements may be excluded as kinks.
pub const MAX_KINK_FRACTION_DEN: usize = 4;
/// Evaluation points tried per case.
pub const MAX_ATTEMPTS: usize = 3;
/// Model configuration of the full-network case.
pub const GRADCHECK_MODEL: &str = "Unet16X16X2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Layer,
    Block,
    Model,
}

impl Scope {
    pub fn all() -> Vec<Scope> {
        vec![Scope::Layer, Scope::Block, Scope::Model]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scope::Layer => "layer",
            Scope::Block => "block",
            Scope::Model => "model",
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(Scope::Layer),
            "block" => Ok(Scope::Block),
            "model" => Ok(Scope::Model),
            _ => Err(crate::Error::Config(format!("unknown gradcheck scope `{s}` (layer, block or model)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub scopes: Vec<Scope>,
    pub seed: u64,
    /// Case whose analytic gradients are deliberately scaled, to show the
    /// harness detects a broken backward pass.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            scopes: Scope::all(),
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub checked: usize,
    /// Elements whose stencil crossed a ReLU or max-pool switch, excluded
    /// from `max_rel_err`.
    pub kinks: usize,
    pub max_rel_err: f64,
}

impl GroupResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance && self.kinks * MAX_KINK_FRACTION_DEN <= self.checked
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub case: String,
    pub scope: Scope,
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
    /// Evaluation points drawn; a point is redrawn when it sits so close to
    /// a switch that too many elements straddle it.
    pub attempts: usize,
}

impl CaseReport {
    /// Every failing group fails only on its kink count.
    fn too_close_to_switch(&self) -> bool {
        !self.passed() && self.groups.iter().all(|g| g.max_rel_err <= self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed(self.tolerance))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseReport::passed)
    }

    /// `case,scope,group,checked,kinks,max_rel_err,tolerance,status` with one row per group.
    pub fn to_table(&self) -> String {
        let mut s = String::from("case,scope,group,checked,kinks,max_rel_err,tolerance,status\n");
        for c in &self.cases {
            for g in &c.groups {
                let status = if g.passed(c.tolerance) { "pass" } else { "FAIL" };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.3e},{:.0e},{}",
                    c.case,
                    c.scope.name(),
                    g.group,
                    g.checked,
                    g.kinks,
                    g.max_rel_err,
                    c.tolerance,
                    status
                );
            }
        }
        s
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Objective `sum(layer(x) * r)` in train mode.
fn objective<L: Layer<f64>>(layer: &mut L, x: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    layer.forward(x, Mode::Train)?.dot(r)
}

fn pick(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= MAX_ELEMENTS_PER_GROUP {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, MAX_ELEMENTS_PER_GROUP).into_vec();
        v.sort_unstable();
        v
    }
}

fn perturbed<L: Layer<f64> + Clone>(layer: &L, group: &str, i: usize, delta: f64) -> L {
    let mut l = layer.clone();
    l.visit_mut("", &mut |name, t, _| {
        if name == group {
            t.data_mut()[i] += delta;
        }
    });
    l
}

/// Error bookkeeping for one group. An element whose central difference
/// disagrees with the analytic value is attributed to a kink when the two
/// one-sided differences differ by at least as much as the disagreement; on
/// a smooth stretch that asymmetry is `O(h)` and a wrong gradient cannot hide.
struct GroupTally {
    floor: f64,
    tolerance: f64,
    checked: usize,
    kinks: usize,
    worst: f64,
}

impl GroupTally {
    fn add(&mut self, analytic: f64, f_minus: f64, f0: f64, f_plus: f64) {
        self.checked += 1;
        let central = (f_plus - f_minus) / (2.0 * FD_STEP);
        let err = rel_err(analytic, central, self.floor);
        if err > self.tolerance {
            let asymmetry = ((f_plus - f0) - (f0 - f_minus)).abs() / FD_STEP;
            if asymmetry >= (analytic - central).abs() {
                self.kinks += 1;
                return;
            }
        }
        self.worst = self.worst.max(err);
    }

    fn finish(self, group: String) -> GroupResult {
        GroupResult {
            group,
            checked: self.checked,
            kinks: self.kinks,
            max_rel_err: self.worst,
        }
    }
}

/// Compare analytic gradients of `sum(layer(x) * r)` with central
/// differences for the input and every parameter tensor.
fn check_layer<L: Layer<f64> + Clone>(
    case: &str,
    scope: Scope,
    tolerance: f64,
    layer: L,
    x: Tensor<f64>,
    rng: &mut ChaCha8Rng,
    corrupt: bool,
) -> Result<CaseReport> {
    let mut probe = layer.clone();
    let y = probe.forward(&x, Mode::Train)?;
    let r = Tensor::<f64>::randn(y.dims().to_vec(), 1.0, rng)?;
    let f0 = y.dot(&r)?;
    let tally = || GroupTally {
        floor: REL_ERR_FLOOR * f0.abs().max(1.0),
        tolerance,
        checked: 0,
        kinks: 0,
        worst: 0.0,
    };
    let dx = probe.backward(&r)?;
    let damp = if corrupt { 1.05 } else { 1.0 };

    let mut groups = Vec::new();
    let mut t = tally();
    for i in pick(x.numel(), rng) {
        let (mut up, mut down) = (x.clone(), x.clone());
        up.data_mut()[i] += FD_STEP;
        down.data_mut()[i] -= FD_STEP;
        let fu = objective(&mut layer.clone(), &up, &r)?;
        let fd = objective(&mut layer.clone(), &down, &r)?;
        t.add(damp * dx.data()[i], fd, f0, fu);
    }
    groups.push(t.finish("input".into()));

    let mut params = Vec::new();
    probe.visit("", &mut |name, t, role| {
        if role == TensorRole::Param {
            let g = t.grad().map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
            params.push((name.to_string(), g));
        }
    });
    for (name, analytic) in params {
        let mut t = tally();
        for i in pick(analytic.len(), rng) {
            let fu = objective(&mut perturbed(&layer, &name, i, FD_STEP), &x, &r)?;
            let fd = objective(&mut perturbed(&layer, &name, i, -FD_STEP), &x, &r)?;
            t.add(damp * analytic[i], fd, f0, fu);
        }
        groups.push(t.finish(name));
    }
    Ok(CaseReport {
        case: case.to_string(),
        scope,
        tolerance,
        groups,
        attempts: 1,
    })
}

/// Stateless single-input primitives as layers.
#[derive(Clone)]
enum Unary {
    Relu(Option<Tensor<f64>>),
    Sigmoid(Option<Tensor<f64>>),
    MaxPool(Option<crate::tensor::PoolIndices>),
    GlobalAvgPool(Option<Vec<usize>>),
}

impl Module<f64> for Unary {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<f64>, TensorRole)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<f64>, TensorRole)) {}
}

impl Layer<f64> for Unary {
    fn forward(&mut self, x: &Tensor<f64>, _: Mode) -> Result<Tensor<f64>> {
        Ok(match self {
            Unary::Relu(c) => {
                *c = Some(x.clone());
                relu(x)
            }
            Unary::Sigmoid(c) => {
                let y = sigmoid(x);
                *c = Some(y.clone());
                y
            }
            Unary::MaxPool(c) => {
                let (y, idx) = maxpool2x2(x)?;
                *c = Some(idx);
                y
            }
            Unary::GlobalAvgPool(c) => {
                *c = Some(x.dims().to_vec());
                global_avg_pool(x)?
            }
        })
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.clone().forward(x, Mode::Eval)
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        let missing = crate::Error::MissingContext("gradcheck");
        match self {
            Unary::Relu(c) => relu_backward(g, c.as_ref().ok_or(missing)?),
            Unary::Sigmoid(c) => sigmoid_backward(g, c.as_ref().ok_or(missing)?),
            Unary::MaxPool(c) => maxpool2x2_backward(g, c.as_ref().ok_or(missing)?),
            Unary::GlobalAvgPool(c) => global_avg_pool_backward(g, c.as_ref().ok_or(missing)?),
        }
    }
}

/// Two-operand primitives; the second operand is checked as a parameter.
#[derive(Clone)]
enum Binary {
    /// `a + x`
    Add(Tensor<f64>),
    /// `concat(skip, x)`
    Concat(Tensor<f64>),
    /// `x * s` per channel, keeping `x` for the backward pass.
    Scale(Tensor<f64>, Option<Tensor<f64>>),
}

impl Binary {
    fn operand(&self) -> (&'static str, &Tensor<f64>) {
        match self {
            Binary::Add(a) => ("addend", a),
            Binary::Concat(s) => ("skip", s),
            Binary::Scale(s, _) => ("scale", s),
        }
    }
}

impl Module<f64> for Binary {
    fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Tensor<f64>, TensorRole)) {
        let (name, t) = self.operand();
        f(name, t, TensorRole::Param);
    }

    fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Tensor<f64>, TensorRole)) {
        let name = self.operand().0;
        match self {
            Binary::Add(t) | Binary::Concat(t) | Binary::Scale(t, _) => f(name, t, TensorRole::Param),
        }
    }
}

impl Layer<f64> for Binary {
    fn forward(&mut self, x: &Tensor<f64>, _: Mode) -> Result<Tensor<f64>> {
        match self {
            Binary::Add(a) => add(a, x),
            Binary::Concat(s) => concat_channels(s, x),
            Binary::Scale(s, saved) => {
                *saved = Some(x.clone());
                channelwise_scale(x, s)
            }
        }
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.clone().forward(x, Mode::Eval)
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            Binary::Add(a) => {
                a.accumulate_grad(g.data())?;
                Ok(g.clone())
            }
            Binary::Concat(s) => {
                let (gs, gx) = split_channels(g, s.dims()[1])?;
                s.accumulate_grad(gs.data())?;
                Ok(gx)
            }
            Binary::Scale(s, saved) => {
                let x = saved.take().ok_or(crate::Error::MissingContext("gradcheck"))?;
                let (dx, ds) = channelwise_scale_backward(g, &x, s)?;
                s.accumulate_grad(ds.data())?;
                Ok(dx)
            }
        }
    }
}

/// `inner` followed by the training loss against a fixed target; output `[1]`.
#[derive(Clone)]
struct WithLoss<L> {
    inner: L,
    target: Tensor<f64>,
    mix: f64,
    grad: Option<Tensor<f64>>,
}

impl<L: Module<f64>> Module<f64> for WithLoss<L> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<f64>, TensorRole)) {
        self.inner.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f64>, TensorRole)) {
        self.inner.visit_mut(prefix, f);
    }
}

impl<L: Layer<f64> + Clone> Layer<f64> for WithLoss<L> {
    fn forward(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        let p = self.inner.forward(x, mode)?;
        let loss = segmentation_loss(&p, &self.target, DEFAULT_DICE_EPSILON, self.mix)?;
        self.grad = Some(loss.grad);
        Tensor::new(vec![1], vec![loss.total])
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.clone().forward(x, Mode::Eval)
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        let dl = self.grad.take().ok_or(crate::Error::MissingContext("loss"))?;
        let scaled = dl.map(|v| v * g.data()[0]);
        self.inner.backward(&scaled)
    }
}

/// Identity layer so the losses can be checked on their own.
#[derive(Clone)]
struct Identity;

impl Module<f64> for Identity {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<f64>, TensorRole)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<f64>, TensorRole)) {}
}

impl Layer<f64> for Identity {
    fn forward(&mut self, x: &Tensor<f64>, _: Mode) -> Result<Tensor<f64>> {
        Ok(x.clone())
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(x.clone())
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(g.clone())
    }
}

/// Standard normal values pushed at least 0.05 away from zero, so ReLU kinks
/// stay out of the finite-difference stencil.
fn away_from_zero(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let t = Tensor::<f64>::randn(dims, 1.0, rng)?;
    Ok(t.map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 }))
}

fn binary_target(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Tensor::from_fn(dims, |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
}

/// Names of all cases in `scope`, in run order.
pub fn case_names(scope: Scope) -> &'static [&'static str] {
    match scope {
        Scope::Layer => &[
            "conv2d_3x3",
            "conv2d_3x3_stride2",
            "conv2d_1x1",
            "upconv2x2",
            "dense",
            "batchnorm2d",
            "relu",
            "sigmoid",
            "maxpool2x2",
            "global_avg_pool",
            "add",
            "concat_channels",
            "channelwise_scale",
            "dice_loss",
            "mixed_loss",
        ],
        Scope::Block => &["conv_block", "residual_block", "residual_block_projection", "se_block"],
        Scope::Model => &["unet16x16x2", "unet16x16x2_se"],
    }
}

fn run_case(name: &str, scope: Scope, rng: &mut ChaCha8Rng, corrupt: bool) -> Result<CaseReport> {
    let mut init = Initializer::new(rng.gen());
    let tol = PRIMITIVE_TOLERANCE;
    let x4 = |c: usize, s: usize, rng: &mut ChaCha8Rng| away_from_zero(vec![2, c, s, s], rng);
    let run = |l, x, rng: &mut ChaCha8Rng| check_layer(name, scope, tol, l, x, rng, corrupt);
    match name {
        "conv2d_3x3" => {
            let x = x4(3, 5, rng)?;
            check_layer(name, scope, tol, Conv2d::same(3, 4, 3, &mut init)?, x, rng, corrupt)
        }
        "conv2d_3x3_stride2" => {
            let x = x4(2, 7, rng)?;
            check_layer(name, scope, tol, Conv2d::new(2, 3, 3, 2, 1, &mut init)?, x, rng, corrupt)
        }
        "conv2d_1x1" => {
            let x = x4(4, 4, rng)?;
            check_layer(name, scope, tol, Conv2d::same(4, 2, 1, &mut init)?, x, rng, corrupt)
        }
        "upconv2x2" => {
            let x = x4(4, 3, rng)?;
            check_layer(name, scope, tol, UpConv2x2::new(4, 2, &mut init)?, x, rng, corrupt)
        }
        "dense" => {
            let x = away_from_zero(vec![3, 5], rng)?;
            check_layer(name, scope, tol, Dense::new(5, 4, &mut init)?, x, rng, corrupt)
        }
        "batchnorm2d" => {
            let mut bn = BatchNorm2d::new(3)?;
            bn.visit_mut("", &mut |_, t, role| {
                if role == TensorRole::Param {
                    *t = t.map(|v| v + 0.3);
                }
            });
            let x = x4(3, 3, rng)?;
            check_layer(name, scope, tol, bn, x, rng, corrupt)
        }
        "relu" => {
            let x = x4(2, 4, rng)?;
            run(Unary::Relu(None), x, rng)
        }
        "sigmoid" => {
            let x = x4(2, 4, rng)?;
            run(Unary::Sigmoid(None), x, rng)
        }
        "maxpool2x2" => {
            let x = x4(2, 4, rng)?;
            run(Unary::MaxPool(None), x, rng)
        }
        "global_avg_pool" => {
            let x = x4(3, 4, rng)?;
            run(Unary::GlobalAvgPool(None), x, rng)
        }
        "add" => {
            let (a, x) = (x4(2, 3, rng)?, x4(2, 3, rng)?);
            check_layer(name, scope, tol, Binary::Add(a), x, rng, corrupt)
        }
        "concat_channels" => {
            let (s, x) = (x4(3, 3, rng)?, x4(2, 3, rng)?);
            check_layer(name, scope, tol, Binary::Concat(s), x, rng, corrupt)
        }
        "channelwise_scale" => {
            let s = away_from_zero(vec![2, 3], rng)?;
            let x = x4(3, 3, rng)?;
            check_layer(name, scope, tol, Binary::Scale(s, None), x, rng, corrupt)
        }
        "dice_loss" | "mixed_loss" => {
            let dims = vec![2, 1, 4, 4];
            let x = Tensor::from_fn(dims.clone(), |_| rng.gen_range(0.05..0.95))?;
            let target = binary_target(dims, rng)?;
            let mix = if name == "mixed_loss" { 0.5 } else { 0.0 };
            let l = WithLoss {
                inner: Identity,
                target,
                mix,
                grad: None,
            };
            check_layer(name, scope, tol, l, x, rng, corrupt)
        }
        "conv_block" => {
            let x = x4(3, 4, rng)?;
            check_layer(name, scope, tol, ConvBlock::plain(3, 4, true, &mut init)?, x, rng, corrupt)
        }
        "residual_block" => {
            let x = x4(3, 4, rng)?;
            check_layer(name, scope, tol, ConvBlock::residual(3, 3, true, &mut init)?, x, rng, corrupt)
        }
        "residual_block_projection" => {
            let x = x4(3, 4, rng)?;
            check_layer(name, scope, tol, ConvBlock::residual(3, 5, true, &mut init)?, x, rng, corrupt)
        }
        "se_block" => {
            let x = x4(8, 3, rng)?;
            check_layer(name, scope, tol, SeBlock::new(8, 4, &mut init)?, x, rng, corrupt)
        }
        "unet16x16x2" | "unet16x16x2_se" => {
            let mut cfg = UNetConfig::parse(GRADCHECK_MODEL)?;
            cfg.use_se = name.ends_with("_se");
            let net = UNet::<f64>::build(&cfg, rng.gen())?;
            let x = Tensor::<f64>::randn(vec![2, 3, 16, 16], 1.0, rng)?;
            let target = binary_target(vec![2, 1, 16, 16], rng)?;
            let l = WithLoss {
                inner: net,
                target,
                mix: 0.0,
                grad: None,
            };
            check_layer(name, scope, MODEL_TOLERANCE, l, x, rng, corrupt)
        }
        other => Err(crate::Error::Config(format!("unknown gradcheck case `{other}`"))),
    }
}

/// Run every case in the requested scopes.
pub fn gradient_check(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if let Some(c) = &opts.corrupt {
        if !Scope::all().iter().any(|s| case_names(*s).contains(&c.as_str())) {
            return Err(crate::Error::Config(format!("unknown gradcheck case `{c}`")));
        }
    }
    let mut scopes = opts.scopes.clone();
    scopes.sort();
    scopes.dedup();
    let mut report = GradcheckReport::default();
    for scope in scopes {
        for (i, &name) in case_names(scope).iter().enumerate() {
            let corrupt = opts.corrupt.as_deref() == Some(name);
            let mut attempt = 0;
            let case = loop {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(((scope as u64) << 40) | ((attempt as u64) << 32) | i as u64);
                let mut c = run_case(name, scope, &mut rng, corrupt)?;
                attempt += 1;
                c.attempts = attempt;
                if !c.too_close_to_switch() || attempt == MAX_ATTEMPTS {
                    break c;
                }
            };
            report.cases.push(case);
        }
    }
    Ok(report)
}
