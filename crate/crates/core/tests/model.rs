use gca_matting::data::{unknown_mask, AugmentConfig, SampleSource};
use gca_matting::model::{MattingModel, ModelConfig, SIZE_MULTIPLE};
use gca_matting::tensor::{Shape, Tensor};

fn banded_inputs(h: usize, w: usize) -> (Tensor<f32>, Tensor<f32>) {
    let img = Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| ((x * 5 + y * 3 + c * 7) % 13) as f32 / 12.0);
    let tri = Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, _, x]| {
        let label = if x < w / 3 { 0 } else if x < 2 * w / 3 { 1 } else { 2 };
        f32::from(u8::from(label == c))
    });
    (img, tri)
}

#[test]
fn full_inference_on_an_odd_size() {
    let (h, w) = (500, 600);
    let (img, tri) = banded_inputs(h, w);
    let mut model = MattingModel::<f32>::new(ModelConfig::desk(), 3).unwrap();
    let p = model.infer_full(&img, &tri).unwrap();
    assert_eq!(p.alpha.shape(), Shape::new(1, 1, h, w));
    assert!(p.alpha.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(p.encoder_attention.len(), 1);
    assert_eq!(p.decoder_attention.len(), 1);
    let map = &p.encoder_attention[0];
    let ds = ModelConfig::desk().gca_stage_downsample;
    assert_eq!((map.h, map.w), (h.next_multiple_of(SIZE_MULTIPLE) / ds, w.next_multiple_of(SIZE_MULTIPLE) / ds));
}

#[test]
fn rejects_too_small_or_mismatched_inputs() {
    let mut model = MattingModel::<f32>::new(ModelConfig::desk(), 3).unwrap();
    let (img, tri) = banded_inputs(16, 64);
    assert!(model.infer_full(&img, &tri).is_err());
    let (img, _) = banded_inputs(64, 64);
    let (_, tri) = banded_inputs(64, 96);
    assert!(model.infer_full(&img, &tri).is_err());
}

#[test]
fn same_seed_same_weights() {
    let a = MattingModel::<f32>::new(ModelConfig::desk(), 9).unwrap();
    let b = MattingModel::<f32>::new(ModelConfig::desk(), 9).unwrap();
    let c = MattingModel::<f32>::new(ModelConfig::desk(), 10).unwrap();
    let same = a.store.iter().zip(b.store.iter()).all(|((_, x), (_, y))| x.value.bitwise_eq(&y.value));
    let differ = a.store.iter().zip(c.store.iter()).any(|((_, x), (_, y))| !x.value.bitwise_eq(&y.value));
    assert!(same && differ);
}

#[test]
fn baseline_has_no_attention_and_is_a_subset() {
    let gca = MattingModel::<f32>::new(ModelConfig::desk(), 1).unwrap();
    let mut base = MattingModel::<f32>::new(ModelConfig::desk().baseline(), 1).unwrap();
    assert!(base.store.len() < gca.store.len());
    assert_eq!(base.store.copy_matching_from(&gca.store).unwrap(), base.store.len());
    let s = SampleSource::synthetic(AugmentConfig::default(), 4).sample(0).unwrap();
    let p = base.predict(&s.image, &s.trimap).unwrap();
    assert!(p.encoder_attention.is_empty() && p.decoder_attention.is_empty());
    assert!(unknown_mask(&s.trimap).iter().any(|&u| u));
}
