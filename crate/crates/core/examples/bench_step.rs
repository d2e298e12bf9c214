use std::time::Instant;

use searecon_core::denoiser::DenoiserConfig;
use searecon_core::schedule::build_linear_schedule;
use searecon_core::synth::{self, SyntheticFieldSpec};
use searecon_core::trainer::{train_ddpm, NullObserver, TrainConfig};

fn main() {
    let spec = SyntheticFieldSpec::family_a(8, 32, 64);
    let corpus = synth::build_corpus(&spec, 16).unwrap();
    let stats = synth::compute_stats(&corpus).unwrap();
    let data: Vec<_> = corpus.iter().map(|f| synth::normalize(f, &stats).unwrap()).collect();
    let sched = build_linear_schedule(1000, 1e-4, 0.02).unwrap();
    let dcfg = DenoiserConfig::desk_default(8);
    let steps = 30;
    let cfg = TrainConfig { learning_rate: 1e-4, batch_size: 4, total_steps: steps, checkpoint_every: steps, seed: 1 };
    let t0 = Instant::now();
    let (params, log) = train_ddpm(&data, &cfg, &sched, &dcfg, &mut NullObserver).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("params: {}", params.param_count());
    println!("{} steps in {:.2}s -> {:.3} s/step, 5000 steps ~ {:.1} min", steps, dt, dt / steps as f64, dt / steps as f64 * 5000.0 / 60.0);
    println!("first loss {:.4}, last loss {:.4}", log.entries[0].loss, log.entries.last().unwrap().loss);

    // inference step cost (reconstruction is 1000 of these)
    let space = searecon_core::sampler::SampleSpace { layers: 8, height: 32, width: 64, land_mask: &corpus[0].land_mask, stats: &stats };
    let obs = searecon_core::sampler::ObservationSet::empty(8, 32, 64);
    let gcfg = searecon_core::sampler::GuidanceConfig::new(0.0, searecon_core::sampler::SigmaMode::Zero, 0).unwrap();
    let sched_small = build_linear_schedule(50, 1e-4, 0.02).unwrap();
    let t1 = Instant::now();
    let _ = searecon_core::sampler::reconstruct(&params, &space, &obs, &gcfg, &sched_small, 3).unwrap();
    let dt1 = t1.elapsed().as_secs_f64();
    println!("50 reverse steps in {:.2}s -> one 1000-step trial ~ {:.1}s", dt1, dt1 * 20.0);
}
