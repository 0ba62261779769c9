//! Runs the synthetic multi-view study and prints per-arm EERs.
//!
//! `cargo run --release -p addlab-core --example synth_study -- [epochs] [seeds]`

use addlab::incorporation::FusionHeadConfig;
use addlab::nn::{ResidualCnnConfig, SelectionHeadConfig};
use addlab::synth::{bayes_eer, mean_eer_by_arm, run_study, StudyArm, StudyConfig, SynthSpec};
use addlab::{Mode, TrainConfig};

fn main() -> addlab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let env = |k: &str, d: f64| std::env::var(k).ok().and_then(|s| s.parse().ok()).unwrap_or(d);
    let only = std::env::var("ARMS").ok();
    let spec = SynthSpec::default();
    let arm = |label: &str, mode, views: &[&str]| StudyArm {
        label: label.into(),
        mode,
        views: views.iter().map(|v| v.to_string()).collect(),
    };
    let cfg = StudyConfig {
        spec: spec.clone(),
        seeds: (0..seeds).collect(),
        train: TrainConfig {
            lr: env("LR", 1e-3),
            weight_decay: env("WD", 1e-2),
            tau: env("TAU", 1.0),
            epochs,
            ..TrainConfig::default()
        },
        classifier: ResidualCnnConfig::toy(1),
        selection: SelectionHeadConfig {
            attn_dim: 16,
            keep_bias_init: env("KEEP_BIAS", 0.0),
            ..SelectionHeadConfig::default()
        },
        fusion: FusionHeadConfig { proj_dim: 16, te_layers: 1, te_heads: 2, te_ff_dim: 32, ..FusionHeadConfig::default() },
        arms: vec![
            arm("single:v0", Mode::Single, &["v0"]),
            arm("single:v1", Mode::Single, &["v1"]),
            arm("single:v2", Mode::Single, &["v2"]),
            arm("concat", Mode::Concat, &["v0", "v1", "v2"]),
            arm("fuse", Mode::Fuse, &["v0", "v1", "v2"]),
            arm("select", Mode::Select, &["v0", "v1", "v2"]),
        ]
        .into_iter()
        .filter(|a| only.as_deref().map_or(true, |o| o.split(',').any(|x| x == a.label)))
        .collect(),
    };
    let amps = spec.amplitudes();
    println!("bayes eer: single {:.4}, all views {:.4}", bayes_eer(&amps[..1], spec.noise), bayes_eer(&amps, spec.noise));
    let rows = run_study(&cfg)?;
    for r in &rows {
        println!("{:>10} seed {} eer {:.4} best epoch {:>3} keep {:?} {:.1}s", r.arm, r.seed, r.eer, r.best_epoch, r.keep_rate, r.seconds);
    }
    for (arm, eer) in mean_eer_by_arm(&rows) {
        println!("mean {arm:>10}: {eer:.4}");
    }
    Ok(())
}
