//! Runs the `viz-attention` command on a synthetic fixture: writes the
//! alpha estimate and the encoder and decoder attention maps.
//!
//! `cargo run --example visualize_attention -- [out_dir] [checkpoint]`

use std::path::PathBuf;

use gca_matting::checkpoint::model_checkpoint;
use gca_matting::cli::{self, VIZ_FILES};
use gca_matting::data::{write_rgb, write_trimap, AugmentConfig, BitDepth, SampleSource};
use gca_matting::model::{MattingModel, ModelConfig};

fn main() -> gca_matting::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "viz_out".into()));
    std::fs::create_dir_all(&out)?;
    let ck = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            let p = out.join("init.gcam");
            model_checkpoint(&MattingModel::<f32>::new(ModelConfig::desk(), 0)?)?.save(&p)?;
            p
        }
    };
    let aug = AugmentConfig { crop: 128, source_size: 160, ..AugmentConfig::default() };
    let s = SampleSource::synthetic(aug, 8).sample(0)?;
    write_rgb(out.join("image.png"), &s.image, BitDepth::Eight)?;
    write_trimap(out.join("trimap.png"), &s.trimap)?;
    let arg = |p: PathBuf| p.to_string_lossy().into_owned();
    let code = cli::run([
        "gca-matting".to_string(),
        "viz-attention".into(),
        "--checkpoint".into(),
        arg(ck),
        "--image".into(),
        arg(out.join("image.png")),
        "--trimap".into(),
        arg(out.join("trimap.png")),
        "--out".into(),
        arg(out.clone()),
    ]);
    if code == 0 {
        for f in VIZ_FILES {
            println!("wrote {}", out.join(f).display());
        }
    }
    std::process::exit(code);
}
