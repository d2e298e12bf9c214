//! End-to-end CLI pipeline on a tiny configuration, plus exit-code
//! contract checks.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use searecon_core::codec;
use searecon_core::synth::NormState;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_searecon")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn exit_code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap_or(-1)
}

fn p(path: &Path) -> String {
    path.to_string_lossy().to_string()
}

struct Pipeline {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    data_dir: PathBuf,
    ckpt: PathBuf,
    truth: PathBuf,
    obs: PathBuf,
    mask: PathBuf,
}

fn spec_text() -> &'static str {
    "synth.layers = 2\nsynth.height = 16\nsynth.width = 16\nsynth.family = a\n"
}

fn train_text(data_dir: &Path) -> String {
    format!(
        "data.dir = {}\n\
         diffusion.steps = 40\n\
         model.base_channels = 6\n\
         model.channel_mult = 1,2\n\
         model.res_blocks = 1\n\
         model.time_embed_dim = 8\n\
         train.learning_rate = 1e-3\n\
         train.batch_size = 2\n\
         train.total_steps = 30\n",
        data_dir.display()
    )
}

fn build_pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let spec = dir.path().join("spec.cfg");
    std::fs::write(&spec, spec_text()).unwrap();

    run_ok(&[
        "generate-data",
        "--spec",
        &p(&spec),
        "--months",
        "6",
        "--out-dir",
        &p(&data_dir),
        "--obs-rate",
        "0.2",
        "--seed",
        "3",
    ]);
    assert!(data_dir.join("field_0001.sfgf").exists());
    assert!(data_dir.join("obs_0001.sfgf").exists());
    assert!(data_dir.join("mask_0001.sfgf").exists());
    assert!(data_dir.join("stats.csv").exists());

    let train_cfg = dir.path().join("train.cfg");
    std::fs::write(&train_cfg, train_text(&data_dir)).unwrap();
    let ckpt = dir.path().join("model.sfdt");
    run_ok(&["train", "--config", &p(&train_cfg), "--out", &p(&ckpt), "--seed", "1"]);
    for suffix in [".cfg", ".stats.csv", ".loss.csv", ".land.sfgf"] {
        let side = dir.path().join(format!("model.sfdt{suffix}"));
        assert!(side.exists(), "missing sidecar {side:?}");
    }

    Pipeline {
        truth: data_dir.join("field_0001.sfgf"),
        obs: data_dir.join("obs_0001.sfgf"),
        mask: data_dir.join("mask_0001.sfgf"),
        data_dir,
        ckpt,
        dir,
    }
}

#[test]
fn pipeline_end_to_end() {
    let pl = build_pipeline();
    let dir = pl.dir.path();

    // loss log is a CSV with the configured number of steps
    let loss = std::fs::read_to_string(dir.join("model.sfdt.loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next().unwrap(), "step,loss,wall_ms");
    assert_eq!(lines.count(), 30);

    // unconditional sample: physical field with the corpus land mask
    let sample_path = dir.join("sample.sfgf");
    run_ok(&["sample", "--checkpoint", &p(&pl.ckpt), "--out", &p(&sample_path), "--seed", "9"]);
    let sample = codec::decode_field(&std::fs::read(&sample_path).unwrap()).unwrap();
    let truth = codec::decode_field(&std::fs::read(&pl.truth).unwrap()).unwrap();
    assert_eq!(sample.norm_state, NormState::Physical);
    assert_eq!(sample.land_mask, truth.land_mask);

    // guided reconstruction, deterministic under sigma-mode zero
    let recon_a = dir.join("recon_a.sfgf");
    let recon_b = dir.join("recon_b.sfgf");
    for out in [&recon_a, &recon_b] {
        run_ok(&[
            "reconstruct",
            "--checkpoint",
            &p(&pl.ckpt),
            "--obs",
            &p(&pl.obs),
            "--mask",
            &p(&pl.mask),
            "--s",
            "4",
            "--sigma-mode",
            "zero",
            "--kernel",
            "3",
            "--out",
            &p(out),
            "--seed",
            "5",
        ]);
    }
    let bytes_a = std::fs::read(&recon_a).unwrap();
    let bytes_b = std::fs::read(&recon_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "sigma-mode zero reconstructions must be byte-identical");

    // evaluate reconstruction with CSV and heatmaps
    let report_csv = dir.join("report.csv");
    let heat = dir.join("hm");
    run_ok(&[
        "evaluate",
        "--recon",
        &p(&recon_a),
        "--truth",
        &p(&pl.truth),
        "--mask",
        &p(&pl.mask),
        "--csv",
        &p(&report_csv),
        "--heatmap",
        &p(&heat),
    ]);
    let csv = std::fs::read_to_string(&report_csv).unwrap();
    assert!(csv.starts_with("s,sigma,guided_rate,soft_ext,trials,mse_g,mse_r,mse_total\n"));
    let pgm = std::fs::read(dir.join("hm.diff.pgm")).unwrap();
    assert_eq!(&pgm[..3], b"P5\n");

    // evaluating truth against itself reports zero everywhere
    let stdout = run_ok(&[
        "evaluate",
        "--recon",
        &p(&pl.truth),
        "--truth",
        &p(&pl.truth),
        "--mask",
        &p(&pl.mask),
    ]);
    assert!(stdout.contains("mse_total = 0.000000"), "got: {stdout}");

    // ablation sweep: 2 kernel sizes x 1 everything else
    let ab_cfg = dir.join("ablate.cfg");
    std::fs::write(
        &ab_cfg,
        "ablate.s_values = 2\nablate.kernel_sizes = 0,3\nablate.sigma_modes = zero\nablate.guided_rates = 0.2\nablate.trials = 1\nablate.upper_levels = 2\n",
    )
    .unwrap();
    let ab_out = dir.join("ablation.csv");
    run_ok(&[
        "ablate",
        "--checkpoint",
        &p(&pl.ckpt),
        "--truth",
        &p(&pl.truth),
        "--config",
        &p(&ab_cfg),
        "--out",
        &p(&ab_out),
        "--seed",
        "11",
    ]);
    let ab = std::fs::read_to_string(&ab_out).unwrap();
    assert_eq!(ab.lines().count(), 3, "header + 2 cells:\n{ab}");

    // baseline training and reconstruction through the same surface
    let base_ckpt = dir.join("baseline.sfdt");
    let train_cfg = dir.join("train_base.cfg");
    std::fs::write(
        &train_cfg,
        format!("{}train.pretrain_guided_rate = 0.5\n", train_text(&pl.data_dir)),
    )
    .unwrap();
    run_ok(&["train-baseline", "--config", &p(&train_cfg), "--out", &p(&base_ckpt), "--seed", "2"]);
    let base_recon = dir.join("base_recon.sfgf");
    run_ok(&[
        "reconstruct",
        "--checkpoint",
        &p(&base_ckpt),
        "--obs",
        &p(&pl.obs),
        "--mask",
        &p(&pl.mask),
        "--out",
        &p(&base_recon),
    ]);
    let br = codec::decode_field(&std::fs::read(&base_recon).unwrap()).unwrap();
    assert_eq!(br.layers, 2);
    assert_eq!(br.norm_state, NormState::Physical);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // usage error (clap): 2
    assert_eq!(exit_code(&["definitely-not-a-subcommand"]), 2);

    // missing config: 2
    assert_eq!(exit_code(&["train", "--out", &p(&dir.path().join("x.sfdt"))]), 2);

    // malformed config text: 2
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "this line has no equals sign\n").unwrap();
    assert_eq!(
        exit_code(&["generate-data", "--spec", &p(&bad_cfg), "--months", "2", "--out-dir", &p(&dir.path().join("d"))]),
        2
    );

    // corrupt field file: 2
    let junk = dir.path().join("junk.sfgf");
    std::fs::write(&junk, b"not a field file at all").unwrap();
    assert_eq!(
        exit_code(&["evaluate", "--recon", &p(&junk), "--truth", &p(&junk), "--mask", &p(&junk)]),
        2
    );

    // missing file: 1 (IO)
    assert_eq!(
        exit_code(&["sample", "--checkpoint", &p(&dir.path().join("nope.sfdt")), "--out", &p(&dir.path().join("o.sfgf"))]),
        1
    );
}

#[test]
fn truncated_field_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.cfg");
    std::fs::write(&spec, spec_text()).unwrap();
    let data_dir = dir.path().join("data");
    run_ok(&["generate-data", "--spec", &p(&spec), "--months", "1", "--out-dir", &p(&data_dir)]);
    let field_path = data_dir.join("field_0001.sfgf");
    let bytes = std::fs::read(&field_path).unwrap();
    std::fs::write(&field_path, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["evaluate", "--recon", &p(&field_path), "--truth", &p(&field_path), "--mask", &p(&field_path)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("truncated"), "stderr: {stderr}");
}
