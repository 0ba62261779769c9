use addlab::dsp::{Extractor, FeatureKind, FeatureParams, Fft, FrameConfig};
use addlab::incorporation::{FusionHeadConfig, GateMode};
use addlab::nn::{ResidualCnnConfig, SelectionHeadConfig};
use addlab::{compute_eer, Detector, Graph, Mode, ModelConfig, ParamStore, Tensor, ViewSpec};
use addlab_bench::{clip_4s, scores};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft");
    for n in [512usize, 4096] {
        let plan = Fft::new(n).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut re = x.clone();
                let mut im = vec![0.0; n];
                plan.forward(&mut re, &mut im);
                black_box(re[1])
            })
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let clip = clip_4s();
    let frame = FrameConfig::from_ms(16000, 25.0, 10.0, 512).unwrap();
    let params = FeatureParams::default();
    let mut g = c.benchmark_group("features_4s");
    g.sample_size(20);
    for kind in FeatureKind::ALL {
        let ex = Extractor::new(kind, 16000, &frame, &params).unwrap();
        g.bench_function(kind.name(), |b| b.iter(|| black_box(ex.extract(&clip).unwrap())));
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(&[8, 16, 32, 32], |_| rng.gen_range(-1.0f32..1.0));
    let w = Tensor::from_fn(&[32, 16, 3, 3], |_| rng.gen_range(-0.1f32..0.1));
    let mut g = c.benchmark_group("conv2d_8x16x32x32_k3");
    g.bench_function("forward", |b| {
        b.iter(|| {
            let graph = Graph::new();
            let y = graph.constant(x.clone()).conv2d(graph.constant(w.clone()), None, 1, 1).unwrap();
            black_box(y.value().data()[0])
        })
    });
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            let graph = Graph::new();
            let xv = graph.leaf(x.clone(), true);
            let wv = graph.leaf(w.clone(), true);
            let loss = xv.conv2d(wv, None, 1, 1).unwrap().sum();
            black_box(graph.backward(loss).unwrap().visited())
        })
    });
    g.finish();
}

fn eer(c: &mut Criterion) {
    let mut g = c.benchmark_group("eer");
    for n in [1_000usize, 100_000] {
        let set = scores(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| black_box(compute_eer(&set).unwrap().eer)));
    }
    g.finish();
}

fn detector(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let views = vec![ViewSpec { name: "mel".into(), dim: 80 }, ViewSpec { name: "lfcc".into(), dim: 20 }];
    let inputs: Vec<Tensor<f32>> =
        [(100, 80), (100, 20)].iter().map(|&(t, d)| Tensor::from_fn(&[4, t, d], |_| rng.gen_range(-1.0f32..1.0))).collect();
    let mut g = c.benchmark_group("detector_toy_b4");
    g.sample_size(20);
    for mode in [Mode::Concat, Mode::Select, Mode::Fuse] {
        let cfg = ModelConfig {
            mode,
            views: views.clone(),
            classifier: ResidualCnnConfig::toy(2),
            selection: SelectionHeadConfig { attn_dim: 32, ..SelectionHeadConfig::default() },
            fusion: FusionHeadConfig { proj_dim: 32, ..FusionHeadConfig::default() },
        };
        let mut store = ParamStore::<f32>::new();
        let det = Detector::new(&cfg, &mut store, &mut rng).unwrap();
        g.bench_function(mode.to_string(), |b| {
            b.iter(|| {
                let graph = Graph::new();
                let p = store.bind(&graph);
                let xs: Vec<_> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
                let out = det.forward::<f32, ChaCha8Rng>(&p, &xs, GateMode::Argmax).unwrap();
                black_box(out.logits.value().data()[0])
            })
        });
    }
    g.finish();
}

criterion_group!(benches, fft, features, conv, eer, detector);
criterion_main!(benches);
