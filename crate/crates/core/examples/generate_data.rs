//! Draws a few augmented synthetic samples and prints what the pipeline did.
//!
//! `cargo run --example generate_data -- [out_dir] [count]`

use std::path::PathBuf;

use gca_matting::data::{unknown_mask, write_gray, write_rgb, write_trimap, AugmentConfig, BitDepth, SampleSource};

fn main() -> gca_matting::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let count: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    std::fs::create_dir_all(&out)?;
    let src = SampleSource::synthetic(AugmentConfig::default(), 42);
    for i in 0..count {
        let (s, t) = src.sample_traced(i)?;
        let unknown = unknown_mask(&s.trimap).iter().filter(|&&u| u).count();
        println!(
            "sample {i}: merged {} resized {} dilate {} erode {} crop at {:?} unknown {:.1}%",
            t.merged,
            t.resized,
            t.dilate_r,
            t.erode_r,
            t.window,
            100.0 * unknown as f64 / (s.alpha.numel() as f64)
        );
        write_rgb(out.join(format!("{i:03}_image.png")), &s.image, BitDepth::Eight)?;
        write_trimap(out.join(format!("{i:03}_trimap.png")), &s.trimap)?;
        write_gray(out.join(format!("{i:03}_alpha.png")), &s.alpha, BitDepth::Eight)?;
    }
    Ok(())
}
