use std::time::Instant;
use searecon_core::denoiser::DenoiserConfig;
use searecon_core::metrics::{self};
use searecon_core::sampler::{GuidanceConfig, SigmaMode};
use searecon_core::schedule::build_linear_schedule;
use searecon_core::synth::{self, SyntheticFieldSpec};
use searecon_core::trainer::{self, NullObserver, TrainConfig};

fn main() {
    let spec = SyntheticFieldSpec::family_a(8, 32, 64);
    let corpus = synth::build_corpus(&spec, 512).unwrap();
    let stats = synth::compute_stats(&corpus).unwrap();
    let data: Vec<_> = corpus.iter().map(|f| synth::normalize(f, &stats).unwrap()).collect();
    let mut heldout_spec = spec.clone();
    heldout_spec.field_seed = 999_999;
    let heldout_raw = synth::build_corpus(&heldout_spec, 48).unwrap();
    let heldout: Vec<_> = heldout_raw.iter().map(|f| synth::normalize(f, &stats).unwrap()).collect();

    let sched = build_linear_schedule(1000, 1e-4, 0.02).unwrap();
    let dcfg = DenoiserConfig::desk_default(8);
    let cfg = TrainConfig { learning_rate: 1e-4, batch_size: 4, total_steps: 5000, checkpoint_every: 5000, seed: 17 };
    let t0 = Instant::now();
    let (params, log) = trainer::train_ddpm(&data, &cfg, &sched, &dcfg, &mut NullObserver).unwrap();
    println!("train: {:.1} min; loss first20={:.4} last20={:.4}",
        t0.elapsed().as_secs_f64() / 60.0, log.mean_loss(0..20), log.mean_loss(4980..5000));

    let mse = trainer::epsilon_mse(&params, &sched, &heldout, 96, 4242).unwrap();
    println!("heldout eps MSE: {:.4} (target < 0.7)", mse);

    // guidance fidelity at 7.5%, s=4, kernel 5, sigma zero, 2 trials for speed
    let truth = heldout_raw[0].clone();
    let gcfg = GuidanceConfig::new(4.0, SigmaMode::Zero, 5).unwrap();
    let t1 = Instant::now();
    let rep = metrics::run_trials(&params, &sched, &truth, &stats, &gcfg, 0.075, 2, 10, 991).unwrap();
    println!("7.5% s4 k5 zero: mse_g={:.4} mse_r={:.4} total={:.4} ratio={:.3} ({:.1}s/trial)",
        rep.mse_g, rep.mse_r, rep.mse_total, rep.mse_g / rep.mse_r, t1.elapsed().as_secs_f64() / 2.0);

    // no extension
    let g0 = GuidanceConfig::new(4.0, SigmaMode::Zero, 0).unwrap();
    let rep0 = metrics::run_trials(&params, &sched, &truth, &stats, &g0, 0.075, 2, 10, 991).unwrap();
    println!("7.5% s4 k0 zero: total={:.4} (kernel5 total={:.4}, need >=10% better)", rep0.mse_total, rep.mse_total);

    // rate trend quick check at 2 trials
    for rate in [0.1, 0.2, 0.4] {
        let r = metrics::run_trials(&params, &sched, &truth, &stats, &gcfg, rate, 2, 10, 991).unwrap();
        println!("rate {:>4}: total={:.4} g={:.4} r={:.4}", rate, r.mse_total, r.mse_g, r.mse_r);
    }

    // unconditional sample statistics
    let space = searecon_core::sampler::SampleSpace { layers: 8, height: 32, width: 64, land_mask: &corpus[0].land_mask, stats: &stats };
    let field = searecon_core::sampler::sample_unconditional(&params, &space, &sched, 7).unwrap();
    println!("uncond layer means: {:?}", field.layer_means().iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());
    let train_means: Vec<f64> = (0..8).map(|l| stats.per_layer[l].mean).collect();
    println!("train  layer means: {:?}", train_means.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());

    // save checkpoint for reuse
    let entries: Vec<(&str, &[usize], &[f32])> = params.tensors().map(|(n, t)| (n, t.shape(), t.data())).collect();
    std::fs::write("/tmp/rehearsal_ckpt.sfdt", searecon_core::codec::encode_params(&entries)).unwrap();
    std::fs::write("/tmp/rehearsal_stats.csv", searecon_core::codec::render_stats_csv(&stats)).unwrap();
    println!("done in {:.1} min total", t0.elapsed().as_secs_f64() / 60.0);
}
