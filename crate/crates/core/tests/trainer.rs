mod common;

use std::fs;

use remic::losses::LossWeights;
use remic::model::is_disc_group;
use remic::params::{Graph, ParamStore};
use remic::trainer::checkpoint::{self, load_model};
use remic::trainer::log::{format_record, header};
use remic::trainer::{
    generator_objective, load_checkpoint, save_checkpoint, Adam, AdamState, Checkpoint, LossLog, LossRecord, Optimizer,
};
use remic::{ModelConfig, Remic, RemicError, SegMode, StyleCode, TrainConfig, Trainer, VisibilityMask};
use remic_nn::Tensor;
use sha2::{Digest, Sha256};

fn group_hashes(store: &ParamStore<f32>) -> Vec<(String, Vec<u8>)> {
    store
        .groups()
        .into_iter()
        .map(|g| {
            let mut h = Sha256::new();
            for id in store.group_ids(&g) {
                for v in store.get(id).data() {
                    h.update(v.to_le_bytes());
                }
            }
            (g, h.finalize().to_vec())
        })
        .collect()
}

fn two_domain_config() -> ModelConfig {
    ModelConfig { num_domains: 2, content_channels: 16, ..common::tiny_config(SegMode::Off) }
}

fn two_domain_data() -> remic::data::Dataset {
    remic::data::Dataset::synthetic(&remic::data::SynthConfig::new(2, 16, 16, 4, 2, 3)).unwrap()
}

/// Scalar Adam written out directly.
fn adam_oracle(w0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut trace = Vec::new();
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        w -= lr * mh / (vh.sqrt() + 1e-8);
        trace.push(w);
    }
    trace
}

#[test]
fn adam_matches_scalar_trace() {
    let adam = Adam { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
    for grads in [vec![1.0, 1.0], vec![0.3, -0.2, 0.7, 0.0, 5.0]] {
        let mut p = Tensor::<f64>::scalar(0.25);
        let mut state = AdamState::new([[1, 1, 1, 1]]);
        let oracle = adam_oracle(0.25, &grads, 1e-4, 0.5, 0.999);
        for (g, want) in grads.iter().zip(&oracle) {
            let g = Tensor::scalar(*g);
            adam.step(&mut [&mut p], &[Some(&g)], &mut state).unwrap();
            assert!((p.item() - want).abs() < 1e-15, "{} vs {want}", p.item());
        }
    }
    // First step from w = 0 with g = 1 moves by exactly lr (up to eps).
    let mut p = Tensor::<f64>::scalar(0.0);
    let mut state = AdamState::new([[1, 1, 1, 1]]);
    adam.step(&mut [&mut p], &[Some(&Tensor::scalar(1.0))], &mut state).unwrap();
    assert!((p.item() + 1e-4).abs() < 1e-11);
}

#[test]
fn optimizer_keeps_groups_separate() {
    let model = Remic::<f32>::new(two_domain_config()).unwrap();
    let mut store = model.params().clone();
    let mut opt = Optimizer::new(TrainConfig::default().adam(), &store);
    let id = store.group_ids("disc0")[0];
    let g = Tensor::full(store.get(id).shape(), 1.0f32);
    let touched = opt.apply(&mut store, &[(id, g)]).unwrap();
    assert_eq!(touched, vec!["disc0".to_string()]);
    assert_eq!(opt.group("disc0").unwrap().state.step, 1);
    assert_eq!(opt.group("content").unwrap().state.step, 0);
    assert_eq!(opt.group("disc1").unwrap().state.step, 0);
}

#[test]
fn non_finite_gradient_is_rejected_before_any_update() {
    let model = Remic::<f32>::new(two_domain_config()).unwrap();
    let mut store = model.params().clone();
    let before = store.clone();
    let mut opt = Optimizer::new(TrainConfig::default().adam(), &store);
    let a = store.group_ids("content")[0];
    let b = store.group_ids("gen1")[0];
    let mut bad = Tensor::zeros(store.get(b).shape());
    bad.data_mut()[0] = f32::NAN;
    let good = Tensor::full(store.get(a).shape(), 1.0);
    let err = opt.apply(&mut store, &[(a, good), (b, bad)]).unwrap_err();
    match err {
        RemicError::NonFiniteGradient { group, param } => {
            assert_eq!(group, "gen1");
            assert_eq!(param, store.name(b));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(store, before);
}

#[test]
fn steps_update_only_their_own_parameters() {
    let ds = two_domain_data();
    let mut t = Trainer::new(Remic::new(two_domain_config()).unwrap(), TrainConfig::default()).unwrap();
    let inputs = t.draw_inputs(vec![ds.train[0].clone()]).unwrap();

    let before = group_hashes(t.model.params());
    t.discriminator_step(&inputs).unwrap().unwrap();
    let after_d = group_hashes(t.model.params());
    for ((g, a), (_, b)) in before.iter().zip(&after_d) {
        assert_eq!(is_disc_group(g), a != b, "group {g} after D step");
    }

    t.generator_step(&inputs).unwrap();
    let after_g = group_hashes(t.model.params());
    for ((g, a), (_, b)) in after_d.iter().zip(&after_g) {
        if is_disc_group(g) {
            assert_eq!(a, b, "discriminator group {g} changed in the G step");
        }
    }
    assert_ne!(after_d, after_g);
}

#[test]
fn zero_adversarial_weight_skips_the_discriminator() {
    let ds = two_domain_data();
    let tc = TrainConfig { weights: LossWeights { adv: 0.0, ..LossWeights::default() }, ..TrainConfig::default() };
    let mut t = Trainer::new(Remic::new(two_domain_config()).unwrap(), tc).unwrap();
    let before = group_hashes(t.model.params());
    let r = t.step(&ds.train).unwrap();
    assert_eq!(r.d_loss, None);
    let after = group_hashes(t.model.params());
    for ((g, a), (_, b)) in before.iter().zip(&after) {
        if is_disc_group(g) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn record_structure_follows_visibility() {
    let ds = common::tiny_dataset(4, 1, 2);
    let cfg = common::tiny_config(SegMode::Joint);
    let mut t = Trainer::new(Remic::new(cfg).unwrap(), TrainConfig::default()).unwrap();
    for it in 1..=5 {
        let mut inputs = t.draw_inputs(vec![ds.train[it % 4].clone()]).unwrap();
        inputs.visibility[0] = VisibilityMask::new(vec![true, it % 2 == 0, false]).unwrap();
        let d = t.discriminator_step(&inputs).unwrap();
        let r = t.generator_step(&inputs).unwrap();
        assert!(d.is_some());
        assert_eq!(r.domains.len(), 3);
        assert!(r.domains[0].x_cyc.is_some());
        assert_eq!(r.domains[1].x_cyc.is_some(), it % 2 == 0);
        assert!(r.domains[2].x_cyc.is_none());
        assert_eq!(r.domains.iter().map(|d| d.visible).collect::<Vec<_>>(), vec![1, usize::from(it % 2 == 0), 0]);
        assert!(r.seg.is_some());
        assert!(r.cross.is_none());
        assert!(r.is_finite());
    }
    let r = t.step(&ds.train).unwrap();
    assert_eq!(r.iteration, 1);
}

#[test]
fn reported_total_matches_weighted_components() {
    let ds = common::tiny_dataset(4, 1, 2);
    let cfg = common::tiny_config(SegMode::Joint);
    let model = common::jittered(&Remic::<f32>::new(cfg.clone()).unwrap(), 1);
    let inputs = common::random_inputs(&cfg, &ds, 3, 2);
    let w = LossWeights::default();
    let mut g = Graph::frozen(model.params());
    let (_, r) = generator_objective(&model, &mut g, &inputs, &w, false).unwrap();
    // Record values are batch means, except image consistency which averages over visible samples.
    let b = inputs.samples.len() as f64;
    let mut expect = w.c_cyc * r.c_cyc + w.seg * r.seg.unwrap();
    for d in &r.domains {
        expect += w.adv * d.adv + w.s_cyc * d.s_cyc + w.rec * d.rec + w.x_cyc * d.x_cyc.unwrap_or(0.0) * d.visible as f64 / b;
    }
    assert!((expect - r.total).abs() < 1e-9 * r.total.abs(), "{expect} vs {}", r.total);
}

#[test]
fn self_swap_equals_image_consistency() {
    let ds = common::tiny_dataset(4, 1, 6);
    let cfg = common::tiny_config(SegMode::Off);
    let model = common::jittered(&Remic::<f32>::new(cfg.clone()).unwrap(), 2);
    let mut inputs = common::random_inputs(&cfg, &ds, 4, 2);
    inputs.samples[1] = inputs.samples[0].clone();
    inputs.visibility[1] = inputs.visibility[0].clone();
    inputs.prior[1] = inputs.prior[0].clone();
    let mut g = Graph::frozen(model.params());
    let (_, r) = generator_objective(&model, &mut g, &inputs, &LossWeights::default(), true).unwrap();
    let cross = r.cross.as_ref().unwrap();
    for (i, d) in r.domains.iter().enumerate() {
        match d.x_cyc {
            Some(x) => {
                assert!((cross[i][0].unwrap() - x).abs() < 1e-12);
                assert!((cross[i][1].unwrap() - x).abs() < 1e-12);
            }
            None => assert_eq!(cross[i], [None, None]),
        }
    }
    let mut g = Graph::frozen(model.params());
    assert!(generator_objective(&model, &mut g, &inputs, &LossWeights::default(), false).unwrap().1.cross.is_none());
}

#[test]
fn multi_sample_requires_the_flag() {
    let ds = two_domain_data();
    let mut t = Trainer::new(Remic::new(two_domain_config()).unwrap(), TrainConfig::default()).unwrap();
    assert!(t.multi_sample_iteration(&ds.train[0], &ds.train[1]).is_err());
}

#[test]
fn multi_sample_training_stays_finite() {
    let ds = two_domain_data();
    let tc = TrainConfig { multi_sample: true, iterations: 500, seed: 8, ..TrainConfig::default() };
    let mut t = Trainer::new(Remic::new(two_domain_config()).unwrap(), tc).unwrap();
    let mut records = Vec::new();
    t.run(&ds.train, None, None, |r| records.push(r.clone())).unwrap();
    assert_eq!(records.len(), 500);
    assert!(records.iter().all(LossRecord::is_finite));
    assert!(records.iter().any(|r| r.cross.as_ref().unwrap().iter().any(|c| c[0].is_some())));
}

#[test]
fn reconstruction_loss_drops_on_toy_data() {
    let ds = two_domain_data();
    let tc = TrainConfig { iterations: 200, seed: 1, ..TrainConfig::default() };
    let mut t = Trainer::new(Remic::new(two_domain_config()).unwrap(), tc).unwrap();
    let mut recs = Vec::new();
    t.run(&ds.train, None, None, |r| recs.push(r.mean_rec())).unwrap();
    let first = recs[..20].iter().sum::<f64>() / 20.0;
    let last = recs[180..].iter().sum::<f64>() / 20.0;
    assert!(last < 0.5 * first, "first {first}, last {last}");

    // Distinct styles now produce distinct images from one content code.
    let content = t.model.encode_content(&ds.test[0]).unwrap();
    let a = t.model.generate(&content, &StyleCode::constant(4, -1.0), 0).unwrap();
    let b = t.model.generate(&content, &StyleCode::constant(4, 1.0), 0).unwrap();
    let gap: f32 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).sum();
    assert!(gap > 0.0);
}

#[test]
fn non_finite_loss_names_the_iteration() {
    let ds = two_domain_data();
    let mut model = Remic::<f32>::new(two_domain_config()).unwrap();
    let id = model.params().group_ids("content")[0];
    model.params_mut().get_mut(id).data_mut().fill(f32::NAN);
    let tc = TrainConfig { weights: LossWeights { adv: 0.0, ..LossWeights::default() }, ..TrainConfig::default() };
    let mut t = Trainer::new(model, tc).unwrap();
    match t.step(&ds.train).unwrap_err() {
        RemicError::NonFiniteLoss { iteration, breakdown } => {
            assert_eq!(iteration, 0);
            assert!(breakdown.contains("rec0="), "{breakdown}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let ds = two_domain_data();
    let cfg = two_domain_config();
    let tc = TrainConfig { iterations: 20, checkpoint_every: 10, seed: 4, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();

    let mut full = Trainer::new(Remic::new(cfg.clone()).unwrap(), tc.clone()).unwrap();
    full.run(&ds.train, None, Some(dir.path()), |_| {}).unwrap();
    let mid = dir.path().join("ckpt_000010.bin");
    let end = dir.path().join("ckpt_000020.bin");
    assert_eq!(fs::read(&end).unwrap(), fs::read(dir.path().join("final.bin")).unwrap());

    let ck = Checkpoint::read(&mid).unwrap();
    assert_eq!(ck.iteration, 10);
    assert_eq!(checkpoint::decode(&checkpoint::encode(&ck), &mid).unwrap(), ck);

    let mut resumed = load_checkpoint(&mid, &cfg, tc.clone()).unwrap();
    assert_eq!(resumed.iteration, 10);
    resumed.run(&ds.train, None, None, |_| {}).unwrap();
    assert_eq!(resumed.model.params(), full.model.params());
    assert_eq!(resumed.optimizer, full.optimizer);

    let copy = dir.path().join("copy.bin");
    save_checkpoint(&copy, &resumed).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), fs::read(&end).unwrap());
    assert_eq!(load_model(&end).unwrap().params(), full.model.params());
}

#[test]
fn checkpoint_rejects_other_configs_and_damage() {
    let ds = two_domain_data();
    let cfg = two_domain_config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let mut t = Trainer::new(Remic::new(cfg.clone()).unwrap(), TrainConfig::default()).unwrap();
    t.step(&ds.train).unwrap();
    save_checkpoint(&path, &t).unwrap();

    let other = ModelConfig { style_dim: 6, ..cfg };
    assert!(matches!(load_checkpoint(&path, &other, TrainConfig::default()), Err(RemicError::ConfigMismatch(_))));

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::read(&path), Err(RemicError::Corrupt { .. })));

    fs::write(&path, b"REMICKPT").unwrap();
    assert!(matches!(Checkpoint::read(&path), Err(RemicError::Corrupt { .. })));
}

#[test]
fn loss_log_columns_line_up() {
    let ds = common::tiny_dataset(4, 1, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.tsv");
    let tc = TrainConfig { iterations: 4, log_every: 2, ..TrainConfig::default() };
    let mut t = Trainer::new(Remic::new(common::tiny_config(SegMode::Off)).unwrap(), tc).unwrap();
    let mut log = LossLog::create(&path, 3).unwrap();
    t.run(&ds.train, Some(&mut log), None, |_| {}).unwrap();
    drop(log);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], header(3));
    assert_eq!(lines.len(), 3);
    let width = lines[0].split('\t').count();
    assert!(lines.iter().all(|l| l.split('\t').count() == width));
    assert!(lines[1].starts_with("2\t"));
    let seg_col = lines[0].split('\t').position(|c| c == "seg").unwrap();
    assert_eq!(lines[1].split('\t').nth(seg_col), Some("-"));
    let r = LossRecord {
        iteration: 7,
        total: 1.0,
        d_loss: None,
        domains: vec![],
        c_cyc: 0.5,
        seg: None,
        cross: None,
    };
    assert_eq!(format_record(&r, 0.0), "7\t1.000000\t-\t0.500000\t-\t0.000");
}
