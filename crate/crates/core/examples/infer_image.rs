//! Whole-image inference at an arbitrary size. Writes a synthetic 500×600
//! image and trimap, predicts with a freshly initialized (or given) model
//! and saves the alpha matte.
//!
//! `cargo run --example infer_image -- [out_dir] [checkpoint]`

use std::path::PathBuf;

use gca_matting::checkpoint::load_model;
use gca_matting::data::{generate_trimap, synthesize_background, synthesize_foreground, composite, write_gray, write_rgb, write_trimap, BitDepth};
use gca_matting::model::{MattingModel, ModelConfig};

fn main() -> gca_matting::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "infer_out".into()));
    std::fs::create_dir_all(&out)?;
    let mut model = match args.next() {
        Some(ck) => load_model(ck.as_ref())?,
        None => MattingModel::new(ModelConfig::desk(), 0)?,
    };
    let (fg, alpha) = synthesize_foreground(11, 500, 600);
    let bg = synthesize_background(12, 500, 600);
    let image = composite(&fg, &bg, &alpha)?;
    let trimap = generate_trimap(&alpha, 10, 10)?;
    write_rgb(out.join("image.png"), &image, BitDepth::Eight)?;
    write_trimap(out.join("trimap.png"), &trimap)?;
    let start = std::time::Instant::now();
    let pred = model.infer_full(&image, &trimap)?;
    println!("{} prediction in {:.1?}", pred.alpha.shape(), start.elapsed());
    write_gray(out.join("alpha.png"), &pred.alpha, BitDepth::Sixteen)?;
    println!("wrote {}", out.join("alpha.png").display());
    Ok(())
}
