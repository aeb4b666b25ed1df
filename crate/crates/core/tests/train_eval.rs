use gca_matting::autograd::Graph;
use gca_matting::checkpoint::{load_model, model_checkpoint, Checkpoint};
use gca_matting::data::{AugmentConfig, SampleSource};
use gca_matting::model::ModelConfig;
use gca_matting::nn::{Ctx, Mode, ParamKind, ParamStore};
use gca_matting::tensor::{Shape, Tensor};
use gca_matting::train::{frozen_eval_set, evaluate, Adam, AdamConfig, Schedule, TrainConfig, Trainer, LOSS_CSV_HEADER};
use gca_matting::Error;

fn tiny() -> ModelConfig {
    ModelConfig { base_channels: 4, encoder_blocks: vec![1, 1, 1], guide_channels: 4, gca_stage_downsample: 4, ..ModelConfig::desk() }
}

fn short(steps: u64) -> TrainConfig {
    TrainConfig { total_steps: steps, batch: 2, checkpoint_every: 3, seed: 5, ..TrainConfig::desk() }
}

#[test]
fn schedule_warms_up_then_decays() {
    let s = Schedule { lr: 1.0, warmup_steps: 10, total_steps: 110 };
    assert_eq!(s.lr(0), 0.0);
    assert_eq!(s.lr(5), 0.5);
    assert_eq!(s.lr(10), 1.0);
    approx::assert_abs_diff_eq!(s.lr(60), 0.5, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(s.lr(110), 0.0, epsilon = 1e-12);
    let desk = TrainConfig::desk();
    assert_eq!(desk.warmup_steps(), 100);
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut store = ParamStore::<f64>::new(0);
    let id = store.add("x", Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, -2.0]).unwrap(), ParamKind::Trainable).unwrap();
    let target = [1.0, 0.5];
    let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..AdamConfig::default() });
    for _ in 0..2000 {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
        let x = ctx.param(id);
        let t = ctx.constant(Tensor::from_vec(Shape::new(1, 1, 1, 2), target.to_vec()).unwrap());
        let d = ctx.graph.sub(x, t).unwrap();
        let sq = ctx.graph.mul(d, d).unwrap();
        let loss = ctx.graph.sum(sq);
        ctx.graph.backward(loss).unwrap();
        let grads = ctx.param_grads();
        assert!(adam.step(&mut store, &grads, 0.01));
    }
    for (v, t) in store.get(id).data().iter().zip(target) {
        approx::assert_abs_diff_eq!(*v, t, epsilon = 1e-3);
    }
}

#[test]
fn adam_skips_non_finite_gradients() {
    let mut store = ParamStore::<f32>::new(0);
    let id = store.add("x", Tensor::ones(Shape::new(1, 1, 1, 2)), ParamKind::Trainable).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let bad = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![f32::NAN, 1.0]).unwrap();
    assert!(!adam.step(&mut store, &[(id, bad)], 0.1));
    assert_eq!(adam.t, 0);
    assert!(store.get(id).data().iter().all(|&v| v == 1.0));
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let src = SampleSource::synthetic(AugmentConfig::default(), 1);
    let run = || {
        let mut t = Trainer::new(tiny(), short(4)).unwrap();
        let logs = t.run(&src, None, |_| {}).unwrap();
        (model_checkpoint(&t.model).unwrap().to_bytes(), logs)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let src = SampleSource::synthetic(AugmentConfig::default(), 2);
    let mut full = Trainer::new(tiny(), short(6)).unwrap();
    let full_logs = full.run(&src, Some(dir.path()), |_| {}).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(LOSS_CSV_HEADER));
    assert_eq!(csv.lines().count(), 7);

    let mut resumed = Trainer::resume(&dir.path().join("ckpt_000003.gcam")).unwrap();
    assert_eq!(resumed.step, 3);
    let rest = resumed.run(&src, None, |_| {}).unwrap();
    assert_eq!(rest, full_logs[3..].to_vec());
    assert_eq!(resumed.checkpoint().unwrap().to_bytes(), full.checkpoint().unwrap().to_bytes());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::new(tiny(), short(1)).unwrap();
    let path = dir.path().join("m.gcam");
    t.save(&path).unwrap();
    let model = load_model(&path).unwrap();
    assert_eq!(model.cfg(), &tiny());
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE....").is_err());
}

#[test]
fn evaluation_covers_every_item() {
    let items = frozen_eval_set(&AugmentConfig::default(), 3, 77).unwrap();
    let model = Trainer::new(tiny(), short(1)).unwrap().model;
    let report = evaluate(&model, &items).unwrap();
    assert_eq!(report.rows.len(), 3);
    let m = report.mean();
    assert!([m.mse, m.sad, m.grad, m.conn].iter().all(|v| v.is_finite() && *v >= 0.0));
}
