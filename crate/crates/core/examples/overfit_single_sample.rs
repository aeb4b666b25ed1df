//! Overfits the model to one synthetic 64×64 sample and reports the
//! unknown-region L1 of the evaluation-mode prediction.

use gca_matting::data::{unknown_mask, AugmentConfig, SampleSource};
use gca_matting::model::ModelConfig;
use gca_matting::train::{unknown_l1, FixedSample, TrainConfig, Trainer};

fn main() -> gca_matting::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let sample = SampleSource::synthetic(AugmentConfig::default(), 7).sample(0)?;
    let cfg = TrainConfig { total_steps: steps, batch: 1, ..TrainConfig::desk() };
    let mut trainer = Trainer::new(ModelConfig::desk(), cfg)?;
    let start = std::time::Instant::now();
    let logs = trainer.run(&FixedSample(sample.clone()), None, |l| {
        if l.step % 50 == 0 {
            println!("step {:4}  lr {:.2e}  loss {:.5}  unknown L1 {:.5}", l.step, l.lr, l.loss, l.unknown_l1);
        }
    })?;
    let pred = trainer.model.predict(&sample.image, &sample.trimap)?.alpha;
    let l1 = unknown_l1(&pred, &sample.alpha, &unknown_mask(&sample.trimap));
    println!("{} steps in {:.1?}; final train-mode L1 {:.5}; eval-mode L1 {l1:.5}", logs.len(), start.elapsed(), logs.last().map_or(0.0, |l| l.unknown_l1));
    Ok(())
}
