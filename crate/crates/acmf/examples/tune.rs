use acmf::attention::gradcam_map;
use acmf::model::ModelConfig;
use acmf::pipeline::synth::{synth_dataset, SynthConfig};
use acmf::pipeline::train::{train_mfr, TrainConfig};

fn main() {
    let stem: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    for seed in 1..=5u64 {
        let ds = synth_dataset(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let mc = ModelConfig { stem_channels: stem, ..ModelConfig::default() };
        let tc = TrainConfig { mask_ratio: 0.5, epochs, seed, ..TrainConfig::default() };
        let out = train_mfr(&ds.train, &mc, &tc, Default::default()).unwrap();
        let model = out.checkpoint.model();
        let mut dead_videos = 0;
        for v in &ds.test {
            let all_dead = v.frames.iter().all(|f| gradcam_map(&model, f, 1).unwrap().max() == 0.0);
            dead_videos += usize::from(all_dead);
        }
        println!("stem {stem} R{epochs} seed {seed}: dead videos {dead_videos}/{}", ds.test.len());
    }
}
