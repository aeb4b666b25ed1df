//! Trains a few steps, saves, resumes from the midpoint and confirms that
//! both paths end in byte-identical checkpoints.

use gca_matting::data::{AugmentConfig, SampleSource};
use gca_matting::model::ModelConfig;
use gca_matting::train::{TrainConfig, Trainer};

fn main() -> gca_matting::Result<()> {
    let dir = std::env::temp_dir().join(format!("gcam-resume-{}", std::process::id()));
    let cfg = TrainConfig { total_steps: 8, batch: 2, checkpoint_every: 4, ..TrainConfig::desk() };
    let src = SampleSource::synthetic(AugmentConfig::default(), 5);

    let mut straight = Trainer::new(ModelConfig::desk(), cfg)?;
    straight.run(&src, Some(&dir), |l| println!("step {} loss {:.5}", l.step, l.loss))?;

    let mut resumed = Trainer::resume(&dir.join("ckpt_000004.gcam"))?;
    println!("resumed at step {}", resumed.step);
    resumed.run(&src, None, |_| {})?;

    let same = resumed.checkpoint()?.to_bytes() == straight.checkpoint()?.to_bytes();
    println!("byte-identical after resume: {same}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
