use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use addlab::audio::encode_wav_pcm16;
use addlab::featureio::{load_manifest, read_feature_file};

const TOY_CONFIG: &str = r#"
[model]
mode = "concat"

[model.classifier]
stage_blocks = [1]
base_channels = 4

[model.fusion]
proj_dim = 16

[train]
lr = 0.001
epochs = 6
batch_size = 8
seed = 5
"#;

// one strongly informative view, one pure noise view
const SYNTH_SPEC: &str = r#"
n_train = 40
n_dev = 8
n_eval = 24
signal_scale = 6.0
seed = 9

[[views]]
name = "a"
dim = 6
frames = 18
informativeness = 1.0

[[views]]
name = "b"
dim = 4
frames = 16
informativeness = 0.0
"#;

fn addlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_addlab")).args(args).env("ADDLAB_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth_dir(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, SYNTH_SPEC).unwrap();
    let data = dir.join("data");
    ok(&addlab(&["synth", "--spec", s(&spec), "--out-dir", s(&data)]));
    data.join("manifest.txt")
}

fn train(dir: &Path, manifest: &Path, name: &str) -> PathBuf {
    let cfg = dir.join("toy.toml");
    std::fs::write(&cfg, TOY_CONFIG).unwrap();
    let ckpt = dir.join(name);
    let out = ok(&addlab(&["train", "--manifest", s(manifest), "--views", "a,b", "--out", s(&ckpt), "--config", s(&cfg)]));
    assert!(out.starts_with("saved "), "{out}");
    ckpt
}

#[test]
fn extract_writes_features_and_updates_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let wav_dir = dir.path().join("wav");
    std::fs::create_dir(&wav_dir).unwrap();
    let mut lines = String::new();
    for (i, (rate, secs, ch)) in [(16000u32, 1.0, 1u16), (8000, 0.3, 1), (44100, 0.6, 2)].iter().enumerate() {
        let n = (*rate as f64 * secs) as usize * *ch as usize;
        let x: Vec<f32> = (0..n).map(|k| (k as f32 * 0.05 * (i + 1) as f32).sin() * 0.5).collect();
        std::fs::write(wav_dir.join(format!("u{i}.wav")), encode_wav_pcm16(&x, *rate, *ch)).unwrap();
        let label = if i == 1 { "spoof" } else { "genuine" };
        lines.push_str(&format!("id=u{i} label={label} split=train audio=wav/u{i}.wav\n"));
    }
    let manifest = dir.path().join("manifest.txt");
    std::fs::write(&manifest, lines).unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, "[audio]\nduration_s = 0.5\n").unwrap();
    let out_dir = dir.path().join("feat");
    ok(&addlab(&["extract", "--manifest", s(&manifest), "--feature", "lfcc", "--out-dir", s(&out_dir), "--config", s(&cfg), "--jobs", "2"]));

    let m = load_manifest(&manifest).unwrap();
    for r in &m.records {
        let t = read_feature_file(&m.resolve(&r.features["lfcc"])).unwrap();
        assert_eq!(t.name, "lfcc");
        // 0.5 s at 16 kHz, 25 ms window, 10 ms hop
        assert_eq!(t.shape, vec![20, 1 + (8000 - 400) / 160]);
        assert_eq!(t.frame_rate, 100.0);
    }
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.lines().all(|l| l.contains("view.lfcc=feat/")), "{text}");
}

#[test]
fn train_inspect_eval_on_separable_data() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dir(dir.path());
    let ckpt = train(dir.path(), &manifest, "m.ckpt");
    assert!(dir.path().join("m.ckpt.log.jsonl").exists());

    let info = ok(&addlab(&["inspect", "--ckpt", s(&ckpt)]));
    assert!(info.contains("mode: concat"), "{info}");
    assert!(info.contains("views: a(D=6), b(D=4)"), "{info}");
    assert!(info.lines().any(|l| l.starts_with("epoch: ")), "{info}");

    let scores = dir.path().join("scores.tsv");
    let report = dir.path().join("report.txt");
    let out = ok(&addlab(&[
        "eval", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--views", "a,b",
        "--scores", s(&scores), "--report", s(&report),
    ]));
    assert!(out.starts_with("eer=0 "), "{out}");
    let tsv = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), 24);
    assert!(std::fs::read_to_string(&report).unwrap().contains("eer"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dir(dir.path());
    let a = train(dir.path(), &manifest, "a.ckpt");
    let b = train(dir.path(), &manifest, "b.ckpt");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let mut outputs = Vec::new();
    for ck in [&a, &b] {
        let scores = ck.with_extension("tsv");
        let report = ck.with_extension("txt");
        ok(&addlab(&[
            "eval", "--ckpt", s(ck), "--manifest", s(&manifest), "--views", "a,b",
            "--scores", s(&scores), "--report", s(&report), "--split", "dev",
        ]));
        outputs.push((std::fs::read(&scores).unwrap(), std::fs::read(&report).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(addlab(&["--help"]).status.code(), Some(0));
    assert_eq!(addlab(&[]).status.code(), Some(1));
    assert_eq!(addlab(&["frobnicate"]).status.code(), Some(1));

    let manifest = synth_dir(dir.path());
    let ckpt = dir.path().join("x.ckpt");
    let bad_mode = addlab(&["train", "--manifest", s(&manifest), "--views", "a,b", "--out", s(&ckpt), "--mode", "stack"]);
    assert_eq!(bad_mode.status.code(), Some(1));
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[train]\nepochs = 0\n").unwrap();
    let out = addlab(&["train", "--manifest", s(&manifest), "--views", "a", "--out", s(&ckpt), "--config", s(&bad_cfg)]);
    assert_eq!(out.status.code(), Some(1));

    // a corrupted feature file is a data error
    let m = load_manifest(&manifest).unwrap();
    let victim = m.resolve(&m.records[0].features["a"]);
    let mut bytes = std::fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&victim, bytes).unwrap();
    let out = addlab(&["train", "--manifest", s(&manifest), "--views", "a", "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    // unreadable input is a runtime failure
    let out = addlab(&["inspect", "--ckpt", s(&dir.path().join("missing.ckpt"))]);
    assert_eq!(out.status.code(), Some(3));
}
