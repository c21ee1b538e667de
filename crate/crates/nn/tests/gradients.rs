//! Finite-difference checks for every differentiable kernel (f64, h = 1e-4).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remic_nn::gradcheck::check_gradients;
use remic_nn::{residual_block, ConvSpec, ConvVars, ResidualNorm, Result, Tape, Tensor, Var};

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn assert_grad<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = check_gradients(inputs, H, f).unwrap();
    let err = report.max_rel_error();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

/// Random linear functional so gradients are not trivially uniform.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape();
    let p = tape.constant(random(shape, &mut rng));
    let diff = tape.sub(y, p)?;
    let sq = tape.sq_err_mean(diff, 0.0)?;
    Ok(sq)
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [
        ConvSpec::same(2, 3, 3),
        ConvSpec::down(2, 3),
        ConvSpec::same(1, 2, 5),
        ConvSpec::same(3, 1, 7),
    ] {
        let x = random([2, spec.in_channels, 8, 8], &mut rng);
        let w = random(spec.weight_shape(), &mut rng);
        let b = random(spec.bias_shape(), &mut rng);
        assert_grad("conv2d", &[x, w, b], |t, v| {
            let y = t.conv2d(v[0], &spec, v[1], Some(v[2]))?;
            project(t, y, 9)
        });
    }
}

#[test]
fn conv2d_gradient_through_frozen_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = ConvSpec::down(2, 3);
    let w = random(spec.weight_shape(), &mut rng);
    let b = random(spec.bias_shape(), &mut rng);
    let x = random([2, 2, 8, 8], &mut rng);
    assert_grad("conv2d frozen", &[x], |t, v| {
        let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
        let y = t.conv2d(v[0], &spec, w, Some(b))?;
        project(t, y, 4)
    });
}

#[test]
fn conv2d_sum_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = ConvSpec::same(1, 1, 3).without_bias();
    let x = random([1, 1, 6, 6], &mut rng);
    let k = random(spec.weight_shape(), &mut rng);
    assert_grad("sum(conv2d)", &[x, k], |t, v| {
        t.conv2d(v[0], &spec, v[1], None)
    });
}

#[test]
fn normalization_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random([2, 3, 4, 4], &mut rng);
    assert_grad("instance_norm", std::slice::from_ref(&x), |t, v| {
        let y = t.instance_norm(v[0], 1e-5)?;
        project(t, y, 4)
    });
    let g = random([2, 3, 1, 1], &mut rng);
    let b = random([2, 3, 1, 1], &mut rng);
    assert_grad("adain", &[x.clone(), g, b], |t, v| {
        let y = t.adain(v[0], v[1], v[2], 1e-5)?;
        project(t, y, 5)
    });
    let g1 = random([1, 3, 1, 1], &mut rng);
    let b1 = random([1, 3, 1, 1], &mut rng);
    assert_grad("channel_affine broadcast", &[x, g1, b1], |t, v| {
        let y = t.channel_affine(v[0], v[1], v[2])?;
        project(t, y, 6)
    });
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random([1, 2, 5, 5], &mut rng);
    assert_grad("relu", std::slice::from_ref(&x), |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, 1)
    });
    assert_grad("leaky_relu", std::slice::from_ref(&x), |t, v| {
        let y = t.leaky_relu(v[0], 0.2)?;
        project(t, y, 2)
    });
    assert_grad("tanh", std::slice::from_ref(&x), |t, v| {
        let y = t.tanh(v[0])?;
        project(t, y, 3)
    });
    assert_grad("sigmoid", std::slice::from_ref(&x), |t, v| {
        let y = t.sigmoid(v[0])?;
        project(t, y, 4)
    });
    assert_grad("softmax", &[x], |t, v| {
        let y = t.softmax_channels(v[0])?;
        project(t, y, 5)
    });
}

#[test]
fn resampling_and_pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random([1, 2, 4, 6], &mut rng);
    assert_grad("upsample", std::slice::from_ref(&x), |t, v| {
        let y = t.upsample2x(v[0])?;
        project(t, y, 1)
    });
    assert_grad("downsample", std::slice::from_ref(&x), |t, v| {
        let y = t.downsample2x(v[0])?;
        project(t, y, 2)
    });
    assert_grad("global_avg_pool", &[x], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        project(t, y, 3)
    });
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random([2, 2, 3, 3], &mut rng);
    let b = random([2, 3, 3, 3], &mut rng);
    assert_grad("concat/slice", &[a, b], |t, v| {
        let c = t.concat_channels(&[v[0], v[1]])?;
        let s = t.slice_channels(c, 1, 3)?;
        let s = t.scale(s, 1.7)?;
        let s = t.add_scalar(s, 0.3)?;
        project(t, s, 7)
    });
    let x = random([2, 5, 1, 1], &mut rng);
    let w = random([3, 5, 1, 1], &mut rng);
    let bias = random([1, 3, 1, 1], &mut rng);
    assert_grad("linear", &[x, w, bias], |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2]))?;
        project(t, y, 8)
    });
}

#[test]
fn residual_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ConvSpec::same(3, 3, 3);
    let mut inputs = vec![random([1, 3, 6, 6], &mut rng)];
    for _ in 0..2 {
        inputs.push(random(spec.weight_shape(), &mut rng));
        inputs.push(random(spec.bias_shape(), &mut rng));
    }
    assert_grad("residual_block IN", &inputs, |t, v| {
        let c1 = ConvVars {
            spec,
            weight: v[1],
            bias: Some(v[2]),
        };
        let c2 = ConvVars {
            spec,
            weight: v[3],
            bias: Some(v[4]),
        };
        residual_block(t, v[0], &c1, &c2, &ResidualNorm::Instance)
    });
    for _ in 0..4 {
        inputs.push(random([1, 3, 1, 1], &mut rng));
    }
    assert_grad("residual_block AdaIN", &inputs, |t, v| {
        let c1 = ConvVars {
            spec,
            weight: v[1],
            bias: Some(v[2]),
        };
        let c2 = ConvVars {
            spec,
            weight: v[3],
            bias: Some(v[4]),
        };
        let norm = ResidualNorm::Adaptive {
            gamma1: v[5],
            beta1: v[6],
            gamma2: v[7],
            beta2: v[8],
        };
        let y = residual_block(t, v[0], &c1, &c2, &norm)?;
        project(t, y, 3)
    });
}

#[test]
fn reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random([1, 2, 4, 4], &mut rng);
    let b = random([1, 2, 4, 4], &mut rng);
    assert_grad("l1_mean", &[a.clone(), b], |t, v| t.l1_mean(v[0], v[1]));
    assert_grad("sq_err_mean", &[a], |t, v| t.sq_err_mean(v[0], 1.0));
    let p = Tensor::from_fn([1, 3, 4, 4], |_| rng.random_range(0.05..0.95));
    let y = Tensor::from_fn(
        [1, 3, 4, 4],
        |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 },
    );
    assert_grad("dice", &[p, y], |t, v| t.dice_loss(v[0], v[1], 1e-6));
}
