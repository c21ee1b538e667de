#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remic::data::synth::SynthConfig;
use remic::data::Dataset;
use remic::params::{Binder, Graph, ParamStore};
use remic::trainer::objective::IterationInputs;
use remic::{ModelConfig, Remic, SegMode};
use remic_nn::{Tensor, Var};

/// 16×16, three domains, C_c = 8: small enough for finite differences.
pub fn tiny_config(seg_mode: SegMode) -> ModelConfig {
    ModelConfig {
        num_domains: 3,
        height: 16,
        width: 16,
        content_channels: 8,
        res_blocks: 1,
        style_dim: 4,
        mlp_hidden: 16,
        disc_scales: 1,
        num_classes: 2,
        seg_mode,
        init_seed: 5,
        ..ModelConfig::desk()
    }
}

pub fn tiny_dataset(num_train: usize, num_test: usize, seed: u64) -> Dataset {
    Dataset::synthetic(&SynthConfig::new(3, 16, num_train, num_test, 2, seed)).unwrap()
}

pub fn random_inputs(cfg: &ModelConfig, ds: &Dataset, seed: u64, count: usize) -> IterationInputs<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<_> = ds.train[..count].to_vec();
    let visibility = (0..count)
        .map(|_| remic::data::sample_visibility(cfg.num_domains, remic::data::MaskMode::UniformK, &mut rng).unwrap())
        .collect();
    let prior = (0..count)
        .map(|_| {
            (0..cfg.num_domains)
                .map(|_| Tensor::vector((0..cfg.style_dim).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap())
                .collect()
        })
        .collect();
    IterationInputs { samples, visibility, prior }
}

/// Adds small uniform noise to every parameter.
///
/// Fresh models have zero biases, so flat image regions put ReLU inputs exactly on the kink;
/// finite differences are only meaningful away from it.
pub fn jittered(model: &Remic<f32>, seed: u64) -> Remic<f64> {
    let mut m = model.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for v in m.params_mut().get_mut(id).data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    m
}

/// Finite-difference spot check of parameter gradients.
///
/// Perturbs `per_group` random entries of every parameter group that `trainable` accepts and
/// returns `(group, relative error)` with the error taken over the picked entries as a vector.
pub fn param_spot_check(
    model: &Remic<f64>,
    trainable: impl Fn(&str) -> bool + Copy,
    per_group: usize,
    h: f64,
    seed: u64,
    objective: impl Fn(&Remic<f64>, &mut Graph<f64>) -> Var,
) -> Vec<(String, f64)> {
    let analytic = {
        let mut g = Graph::new(Binder::new(model.params(), trainable));
        let out = objective(model, &mut g);
        let mut grads = g.tape.backward(out).unwrap();
        g.binder
            .bound_trainable()
            .into_iter()
            .map(|(id, v)| (id, grads.take(v).unwrap()))
            .collect::<Vec<_>>()
    };
    let value = |store: &ParamStore<f64>| {
        let m = Remic::with_params(model.config().clone(), store.clone()).unwrap();
        let mut g = Graph::frozen(m.params());
        let out = objective(&m, &mut g);
        g.value(out).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = model.params().clone();
    let mut out = Vec::new();
    for group in model.params().groups().into_iter().filter(|g| trainable(g)) {
        let ids: Vec<_> = analytic.iter().filter(|(id, _)| model.params().group(*id) == group).collect();
        assert!(!ids.is_empty(), "group {group} received no gradient");
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for _ in 0..per_group {
            let (id, grad) = ids[rng.random_range(0..ids.len())];
            let j = rng.random_range(0..grad.len());
            let orig = store.get(*id).data()[j];
            store.get_mut(*id).data_mut()[j] = orig + h;
            let plus = value(&store);
            store.get_mut(*id).data_mut()[j] = orig - h;
            let minus = value(&store);
            store.get_mut(*id).data_mut()[j] = orig;
            num.push((plus - minus) / (2.0 * h));
            ana.push(grad.data()[j]);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = num.iter().zip(&ana).map(|(a, b)| a - b).collect();
        let err = norm(&diff) / norm(&num).max(norm(&ana)).max(1e-6);
        out.push((group, err));
    }
    out
}
