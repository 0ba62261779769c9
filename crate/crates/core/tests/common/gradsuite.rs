//! Finite-difference checks for every op and block, 10 random trials each.

use addlab::incorporation::{FeatureSelector, FusionHead, FusionHeadConfig, GateMode, ViewAligner};
use addlab::nn::{
    BasicBlock, ChannelAttention, MultiHeadSelfAttention, ResidualCnn, ResidualCnnConfig, SelectionHead,
    SelectionHeadConfig, TransformerEncoderLayer,
};
use addlab::params::{Bound, ParamStore};
use addlab::tensor::{sample_gumbel, PoolKind};
use addlab::{Graph, Real, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grad::{grad_check, grad_check_against, normal_tensor, off_zero_tensor, positive_tensor, randomize, GradReport, Probe};

pub const TRIALS: u64 = 10;

pub struct Case {
    pub name: &'static str,
    pub report: GradReport,
}

fn op_case<P: Probe>(name: &'static str, probe: P, inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>) -> Result<Case> {
    let store = ParamStore::new();
    let mut reports = Vec::new();
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let xs = inputs(&mut rng);
        reports.push(grad_check(&probe, &store, &xs, trial)?);
    }
    Ok(Case { name, report: GradReport::worst(&reports) })
}

/// Builds a block with fresh random parameters per trial.
fn block_case<P: Probe>(
    name: &'static str,
    build: impl Fn(&mut ParamStore<f64>, &mut ChaCha8Rng) -> Result<(P, Vec<Tensor<f64>>)>,
) -> Result<Case> {
    let mut reports = Vec::new();
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let mut store = ParamStore::new();
        let (probe, xs) = build(&mut store, &mut rng)?;
        randomize(&mut store, 0.4, &mut rng);
        reports.push(grad_check(&probe, &store, &xs, trial)?);
    }
    Ok(Case { name, report: GradReport::worst(&reports) })
}

crate::probe!(Add, |p, xs| xs[0].add(xs[1]));
crate::probe!(Sub, |p, xs| xs[0].sub(xs[1]));
crate::probe!(Mul, |p, xs| xs[0].mul(xs[1]));
crate::probe!(Relu, |p, xs| Ok(xs[0].relu()));
crate::probe!(Sigmoid, |p, xs| Ok(xs[0].sigmoid()));
crate::probe!(Exp, |p, xs| Ok(xs[0].exp()));
crate::probe!(Log, |p, xs| Ok(xs[0].log()));
crate::probe!(Scale, |p, xs| Ok(xs[0].scale(T::of(-1.7))));
crate::probe!(AddScalar, |p, xs| Ok(xs[0].add_scalar(T::of(0.3)).mul(xs[0])?));
crate::probe!(Sum, |p, xs| Ok(xs[0].mul(xs[0])?.sum()));
crate::probe!(Mean, |p, xs| Ok(xs[0].mul(xs[0])?.mean()));
crate::probe!(MeanAxis, |p, xs| xs[0].mul(xs[0])?.mean_axis(1));
crate::probe!(Reshape, |p, xs| xs[0].reshape(&[4, 6])?.mul(xs[1]));
crate::probe!(Permute, |p, xs| xs[0].permute(&[2, 0, 1])?.mul(xs[1]));
crate::probe!(Narrow, |p, xs| xs[0].narrow(1, 1, 2)?.mul(xs[1]));
crate::probe!(Concat, |p, xs| Var::concat(&[xs[0], xs[1]], 1)?.mul(xs[2]));
crate::probe!(Stack, |p, xs| Var::stack(&[xs[0], xs[1]], 1)?.mul(xs[2]));
crate::probe!(Matmul, |p, xs| xs[0].matmul(xs[1]));
crate::probe!(Bmm, |p, xs| xs[0].bmm(xs[1]));
crate::probe!(LinearBias, |p, xs| xs[0].linear(xs[1], Some(xs[2])));
crate::probe!(LinearNoBias, |p, xs| xs[0].linear(xs[1], None));
crate::probe!(Conv, |p, xs| xs[0].conv2d(xs[1], Some(xs[2]), 1, 1));
crate::probe!(ConvStrided, |p, xs| xs[0].conv2d(xs[1], None, 2, 0));
crate::probe!(AvgPool, |p, xs| xs[0].pool2d(PoolKind::Avg, 2, 2));
crate::probe!(MaxPool, |p, xs| xs[0].pool2d(PoolKind::Max, 2, 2));
crate::probe!(GlobalAvgPool, |p, xs| xs[0].pool2d(PoolKind::GlobalAvg, 1, 1));
crate::probe!(Softmax, |p, xs| xs[0].softmax(1));
crate::probe!(LayerNormLast, |p, xs| xs[0].layer_norm(xs[1], xs[2], 2));
crate::probe!(LayerNormMid, |p, xs| xs[0].layer_norm(xs[1], xs[2], 1));
crate::probe!(CrossEntropy, |p, xs| xs[0].cross_entropy(&[0, 1, 1, 0]));
crate::probe!(InterpUp, |p, xs| xs[0].interp_time(8));
crate::probe!(InterpDown, |p, xs| xs[0].interp_time(3));

/// Gumbel straight-through: analytic side uses the hard op.
struct GumbelSt(Tensor<f64>, f64);

impl Probe for GumbelSt {
    fn forward<'g, T: Real>(&self, _p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        xs[0].gumbel_softmax_st(&self.0.cast(), T::of(self.1))
    }
}

/// Finite-difference side of the straight-through check: the hard one-hot
/// frozen at the base point plus the tempered softmax minus its base value.
struct GumbelStRef {
    noise: Tensor<f64>,
    tau: f64,
    hard: Tensor<f64>,
    soft0: Tensor<f64>,
}

impl Probe for GumbelStRef {
    fn forward<'g, T: Real>(&self, _p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let g = xs[0].graph();
        let soft = xs[0].add(g.constant(self.noise.cast()))?.scale(T::of(1.0 / self.tau)).softmax(1)?;
        soft.sub(g.constant(self.soft0.cast()))?.add(g.constant(self.hard.cast()))
    }
}

fn gumbel_case() -> Result<Case> {
    let mut reports = Vec::new();
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let logits = normal_tensor(&[4, 3], 1.0, &mut rng);
        let noise = sample_gumbel::<f64, _>(&[4, 3], &mut rng);
        let tau = [0.5, 1.0, 2.0][trial as usize % 3];
        let graph = Graph::new();
        let l = graph.constant(logits.clone());
        let hard = l.gumbel_softmax_st(&noise, tau)?.value();
        let soft0 = l.add(graph.constant(noise.clone()))?.scale(1.0 / tau).softmax(1)?.value();
        let reference = GumbelStRef { noise: noise.clone(), tau, hard, soft0 };
        let store = ParamStore::new();
        reports.push(grad_check_against(&GumbelSt(noise, tau), &reference, &store, &[logits], trial)?);
    }
    Ok(Case { name: "gumbel_softmax_st", report: GradReport::worst(&reports) })
}

struct Residual(BasicBlock);
impl Probe for Residual {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        self.0.forward(p, xs[0])
    }
}

struct Cnn(ResidualCnn);
impl Probe for Cnn {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        self.0.forward(p, xs[0])
    }
}

struct Mhsa(MultiHeadSelfAttention);
impl Probe for Mhsa {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        self.0.forward(p, xs[0])
    }
}

struct Encoder(TransformerEncoderLayer);
impl Probe for Encoder {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        self.0.forward(p, xs[0])
    }
}

struct Channel(ChannelAttention);
impl Probe for Channel {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let (w, y) = self.0.forward(p, xs[0])?;
        // both outputs enter the checked scalar
        let s = w.shape();
        y.add(w.reshape(&[s[0], s[1], 1, 1])?)
    }
}

struct Gate(SelectionHead);
impl Probe for Gate {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        self.0.forward(p, xs[0])
    }
}

struct Fusion(ViewAligner, FusionHead);
impl Probe for Fusion {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let aligned = self.0.align(p, xs)?;
        self.1.fuse(p, &aligned, None)
    }
}

/// Selection head in forced-gate mode: gradient flows through the aligned views only.
struct SelectForced(ViewAligner, FeatureSelector, Vec<bool>);
impl Probe for SelectForced {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let aligned = self.0.align(p, xs)?;
        let (f, m) = self.1.select::<T, ChaCha8Rng>(p, &aligned, GateMode::Force(self.2.clone()))?;
        let s = m.shape();
        f.add(m.reshape(&[s[0], s[1], 1, 1])?)
    }
}

/// Selection head with sampled gates; noise is replayed from a fixed seed.
struct SelectSampled(ViewAligner, FeatureSelector, u64);
impl Probe for SelectSampled {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let aligned = self.0.align(p, xs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.2);
        Ok(self.1.select(p, &aligned, GateMode::Sample { tau: 1.0, rng: &mut rng })?.0)
    }
}

/// Straight-through reference for [`SelectSampled`]: per view the gate is
/// `hard₀ + soft(θ) − soft₀` with `hard₀`, `soft₀` frozen at the base point.
struct SelectSampledRef {
    aligner: ViewAligner,
    selector: FeatureSelector,
    seed: u64,
    base: Vec<(Tensor<f64>, Tensor<f64>)>,
}

impl SelectSampledRef {
    fn soft_gates<'g, T: Real>(
        aligner: &ViewAligner,
        selector: &FeatureSelector,
        seed: u64,
        p: &Bound<'g, T>,
        xs: &[Var<'g, T>],
    ) -> Result<(Vec<Var<'g, T>>, Vec<Var<'g, T>>, Vec<Tensor<T>>)> {
        let aligned = aligner.align(p, xs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut softs = Vec::new();
        let mut noises = Vec::new();
        for (i, &f) in aligned.iter().enumerate() {
            let logits = selector.heads[i.min(selector.heads.len() - 1)].forward(p, f)?;
            let b = logits.shape()[0];
            let noise = sample_gumbel::<T, _>(&[b, 2], &mut rng);
            let soft = logits.add(f.graph().constant(noise.clone()))?.softmax(1)?.narrow(1, 0, 1)?;
            softs.push(soft);
            noises.push(noise);
        }
        Ok((aligned, softs, noises))
    }
}

impl Probe for SelectSampledRef {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let (aligned, softs, _) = Self::soft_gates(&self.aligner, &self.selector, self.seed, p, xs)?;
        let mut gated = Vec::new();
        for ((f, soft), (hard, soft0)) in aligned.iter().zip(softs).zip(&self.base) {
            let g = f.graph();
            let m = soft.sub(g.constant(soft0.cast()))?.add(g.constant(hard.cast()))?;
            let b = m.shape()[0];
            gated.push(f.mul(m.reshape(&[b, 1, 1])?)?);
        }
        Var::stack(&gated, 1)
    }
}

fn select_sampled_case() -> Result<Case> {
    let mut reports = Vec::new();
    let cfg = SelectionHeadConfig { attn_dim: 8, n_layers: 1, n_heads: 2, keep_bias_init: 0.0, share_across_views: false };
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + trial);
        let mut store = ParamStore::new();
        let aligner = ViewAligner::new(&mut store, &[5, 3], 6, &mut rng)?;
        let selector = FeatureSelector::new(&mut store, 2, 6, &cfg, &mut rng)?;
        randomize(&mut store, 0.4, &mut rng);
        let xs = vec![normal_tensor(&[3, 4, 5], 1.0, &mut rng), normal_tensor(&[3, 6, 3], 1.0, &mut rng)];
        let seed = 77 + trial;
        let base = {
            let graph = Graph::new();
            let p = store.bind(&graph);
            let vs: Vec<_> = xs.iter().map(|t| graph.constant(t.clone())).collect();
            let (aligned, softs, noises) = SelectSampledRef::soft_gates(&aligner, &selector, seed, &p, &vs)?;
            let mut base = Vec::new();
            for ((soft, noise), (i, &f)) in softs.iter().zip(&noises).zip(aligned.iter().enumerate()) {
                let logits = selector.heads[i].forward(&p, f)?;
                let hard = logits.gumbel_softmax_st(noise, 1.0)?.narrow(1, 0, 1)?.value();
                base.push((hard, soft.value()));
            }
            base
        };
        let probe = SelectSampled(aligner.clone(), selector.clone(), seed);
        let reference = SelectSampledRef { aligner, selector, seed, base };
        reports.push(grad_check_against(&probe, &reference, &store, &xs, trial)?);
    }
    Ok(Case { name: "selection head (sampled gates, straight-through)", report: GradReport::worst(&reports) })
}

pub fn run() -> Result<Vec<Case>> {
    let mut cases = vec![
        op_case("add", Add, |r| vec![normal_tensor(&[2, 3, 4], 1.0, r), normal_tensor(&[2, 3, 4], 1.0, r)])?,
        op_case("add (broadcast)", Add, |r| vec![normal_tensor(&[2, 3, 4], 1.0, r), normal_tensor(&[4], 1.0, r)])?,
        op_case("sub (broadcast)", Sub, |r| vec![normal_tensor(&[2, 3], 1.0, r), normal_tensor(&[2, 1], 1.0, r)])?,
        op_case("mul", Mul, |r| vec![normal_tensor(&[3, 4], 1.0, r), normal_tensor(&[3, 4], 1.0, r)])?,
        op_case("mul (broadcast)", Mul, |r| vec![normal_tensor(&[2, 1, 4], 1.0, r), normal_tensor(&[3, 1], 1.0, r)])?,
        op_case("relu", Relu, |r| vec![off_zero_tensor(&[3, 5], 0.05, r)])?,
        op_case("sigmoid", Sigmoid, |r| vec![normal_tensor(&[3, 5], 2.0, r)])?,
        op_case("exp", Exp, |r| vec![normal_tensor(&[3, 5], 1.0, r)])?,
        op_case("log", Log, |r| vec![positive_tensor(&[3, 5], r)])?,
        op_case("scale", Scale, |r| vec![normal_tensor(&[3, 5], 1.0, r)])?,
        op_case("add_scalar", AddScalar, |r| vec![normal_tensor(&[3, 5], 1.0, r)])?,
        op_case("sum", Sum, |r| vec![normal_tensor(&[3, 5], 1.0, r)])?,
        op_case("mean", Mean, |r| vec![normal_tensor(&[3, 5], 1.0, r)])?,
        op_case("mean_axis", MeanAxis, |r| vec![normal_tensor(&[2, 3, 4], 1.0, r)])?,
        op_case("reshape", Reshape, |r| vec![normal_tensor(&[2, 3, 4], 1.0, r), normal_tensor(&[4, 6], 1.0, r)])?,
        op_case("permute", Permute, |r| vec![normal_tensor(&[2, 3, 4], 1.0, r), normal_tensor(&[4, 2, 3], 1.0, r)])?,
        op_case("narrow", Narrow, |r| vec![normal_tensor(&[2, 4, 3], 1.0, r), normal_tensor(&[2, 2, 3], 1.0, r)])?,
        op_case("concat", Concat, |r| {
            vec![normal_tensor(&[2, 3, 2], 1.0, r), normal_tensor(&[2, 1, 2], 1.0, r), normal_tensor(&[2, 4, 2], 1.0, r)]
        })?,
        op_case("stack", Stack, |r| {
            vec![normal_tensor(&[2, 3], 1.0, r), normal_tensor(&[2, 3], 1.0, r), normal_tensor(&[2, 2, 3], 1.0, r)]
        })?,
        op_case("matmul", Matmul, |r| vec![normal_tensor(&[3, 4], 1.0, r), normal_tensor(&[4, 5], 1.0, r)])?,
        op_case("bmm", Bmm, |r| vec![normal_tensor(&[2, 3, 4], 1.0, r), normal_tensor(&[2, 4, 2], 1.0, r)])?,
        op_case("linear", LinearBias, |r| {
            vec![normal_tensor(&[2, 3, 4], 1.0, r), normal_tensor(&[4, 5], 1.0, r), normal_tensor(&[5], 1.0, r)]
        })?,
        op_case("linear (no bias)", LinearNoBias, |r| vec![normal_tensor(&[3, 4], 1.0, r), normal_tensor(&[4, 2], 1.0, r)])?,
        op_case("conv2d", Conv, |r| {
            vec![normal_tensor(&[2, 2, 5, 5], 1.0, r), normal_tensor(&[3, 2, 3, 3], 0.5, r), normal_tensor(&[3], 1.0, r)]
        })?,
        op_case("conv2d (stride 2)", ConvStrided, |r| {
            vec![normal_tensor(&[2, 2, 6, 5], 1.0, r), normal_tensor(&[2, 2, 3, 3], 0.5, r)]
        })?,
        op_case("avg pool", AvgPool, |r| vec![normal_tensor(&[2, 2, 4, 5], 1.0, r)])?,
        op_case("max pool", MaxPool, |r| vec![normal_tensor(&[2, 2, 4, 4], 1.0, r)])?,
        op_case("global avg pool", GlobalAvgPool, |r| vec![normal_tensor(&[2, 3, 3, 4], 1.0, r)])?,
        op_case("softmax", Softmax, |r| vec![normal_tensor(&[2, 4, 3], 1.5, r)])?,
        op_case("layer_norm (last axis)", LayerNormLast, |r| {
            vec![normal_tensor(&[2, 3, 5], 1.0, r), normal_tensor(&[5], 1.0, r), normal_tensor(&[5], 1.0, r)]
        })?,
        op_case("layer_norm (inner axis)", LayerNormMid, |r| {
            vec![normal_tensor(&[2, 4, 3], 1.0, r), normal_tensor(&[4], 1.0, r), normal_tensor(&[4], 1.0, r)]
        })?,
        op_case("cross_entropy", CrossEntropy, |r| vec![normal_tensor(&[4, 2], 2.0, r)])?,
        gumbel_case()?,
        op_case("interp_time (up)", InterpUp, |r| vec![normal_tensor(&[2, 5, 3], 1.0, r)])?,
        op_case("interp_time (down)", InterpDown, |r| vec![normal_tensor(&[2, 7, 3], 1.0, r)])?,
    ];

    cases.push(block_case("residual block (identity skip)", |s, r| {
        Ok((Residual(BasicBlock::new(s, "b", 2, 2, 1, r)), vec![normal_tensor(&[2, 2, 5, 5], 1.0, r)]))
    })?);
    cases.push(block_case("residual block (projected skip)", |s, r| {
        Ok((Residual(BasicBlock::new(s, "b", 2, 3, 2, r)), vec![normal_tensor(&[2, 2, 6, 6], 1.0, r)]))
    })?);
    cases.push(block_case("residual cnn", |s, r| {
        let cfg = ResidualCnnConfig { stage_blocks: vec![1, 1], base_channels: 3, num_classes: 2, in_channels: 2 };
        Ok((Cnn(ResidualCnn::new(s, "cls", &cfg, r)?), vec![normal_tensor(&[1, 2, 16, 15], 1.0, r)]))
    })?);
    cases.push(block_case("multi-head self-attention", |s, r| {
        Ok((Mhsa(MultiHeadSelfAttention::new(s, "a", 8, 2, r)?), vec![normal_tensor(&[2, 4, 8], 1.0, r)]))
    })?);
    cases.push(block_case("transformer encoder layer", |s, r| {
        Ok((Encoder(TransformerEncoderLayer::new(s, "te", 8, 2, 12, r)?), vec![normal_tensor(&[2, 5, 8], 1.0, r)]))
    })?);
    cases.push(block_case("channel attention", |s, r| {
        Ok((Channel(ChannelAttention::new(s, "ca", 4, 2, r)?), vec![normal_tensor(&[2, 4, 3, 5], 1.0, r)]))
    })?);
    cases.push(block_case("selection head", |s, r| {
        let cfg = SelectionHeadConfig { attn_dim: 8, ..SelectionHeadConfig::default() };
        Ok((Gate(SelectionHead::new(s, "sel", 5, &cfg, r)?), vec![normal_tensor(&[3, 4, 5], 1.0, r)]))
    })?);
    cases.push(block_case("selection incorporation (forced gates)", |s, r| {
        let cfg = SelectionHeadConfig { attn_dim: 8, ..SelectionHeadConfig::default() };
        let aligner = ViewAligner::new(s, &[5, 3, 4], 6, r)?;
        let selector = FeatureSelector::new(s, 3, 6, &cfg, r)?;
        let xs = vec![normal_tensor(&[2, 4, 5], 1.0, r), normal_tensor(&[2, 6, 3], 1.0, r), normal_tensor(&[2, 5, 4], 1.0, r)];
        Ok((SelectForced(aligner, selector, vec![true, false, true]), xs))
    })?);
    cases.push(select_sampled_case()?);
    cases.push(block_case("fusion incorporation", |s, r| {
        let cfg = FusionHeadConfig { proj_dim: 6, se_reduction: 4, te_layers: 1, te_heads: 2, te_ff_dim: 10 };
        let aligner = ViewAligner::new(s, &[5, 3, 4], 6, r)?;
        let head = FusionHead::new(s, 3, &cfg, r)?;
        let xs = vec![normal_tensor(&[2, 4, 5], 1.0, r), normal_tensor(&[2, 6, 3], 1.0, r), normal_tensor(&[2, 5, 4], 1.0, r)];
        Ok((Fusion(aligner, head), xs))
    })?);
    Ok(cases)
}
