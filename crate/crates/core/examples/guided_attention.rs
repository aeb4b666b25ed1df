//! Guided contextual attention on a toy grid: two color clusters in the
//! guidance features, and the propagated alpha features in the unknown band.

use gca_matting::gca::{extract_attention_map, guided_attention, guided_similarity, propagate, GcaConfig, RegionMask};
use gca_matting::tensor::{Shape, Tensor};

fn main() -> gca_matting::Result<()> {
    let (h, w) = (6, 10);
    // Left half reddish, right half bluish.
    let guide = Tensor::<f64>::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
        let left = x < w / 2;
        let v = if (c == 0 && left) || (c == 2 && !left) { 1.0 } else { 0.1 };
        v + 0.02 * ((x + 2 * y) % 3) as f64
    });
    // Alpha features: 1 on the left, 0 on the right.
    let alpha = Tensor::<f64>::from_fn(Shape::new(1, 1, h, w), |[_, _, _, x]| if x < w / 2 { 1.0 } else { 0.0 });
    let mask = RegionMask::new(h, w, (0..h * w).map(|i| (3..7).contains(&(i % w))).collect())?;
    let cfg = GcaConfig::default();
    let attn = guided_attention(&guided_similarity(&guide, &mask, &cfg)?, &mask, &cfg)?;
    println!("region weights {:?}", attn.map.weights);
    let out = propagate(&alpha, &attn, &mask, &cfg)?;
    println!("propagated alpha features (known cells are 0):");
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| format!("{:5.2}", out.get(0, 0, y, x))).collect();
        println!("  {}", row.join(" "));
    }
    let img = extract_attention_map(&attn.map);
    println!("attention map {}×{}, {}", img.width, img.height, img.caption());
    Ok(())
}
