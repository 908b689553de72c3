use pastiche_core::{Shape, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Denominator floor. The beta of each residual block's second site has an
/// identically zero gradient (a per-channel constant is removed by the next
/// instance norm), so its numeric estimate is pure round-off.
const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn normal(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng)).unwrap()
}

/// `sum(y * r)` for a fixed random `r`, so every output element gets a
/// distinct upstream gradient.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let r = tape.constant(normal(tape.shape(y), seed));
    let m = tape.mul(y, r).unwrap();
    tape.sum(m)
}

fn evaluate(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    tape.value(loss).item().unwrap()
}

/// Analytic gradients of `f` at `inputs`.
pub fn analytic(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> Vec<Tensor<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    vars.iter().map(|&v| grads.get(v)).collect()
}

/// Worst relative error over every element of every input.
pub fn elementwise(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let grads = analytic(inputs, f);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let numeric = central(inputs, f, i, |t| t.data_mut()[j] += STEP, |t| t.data_mut()[j] -= STEP);
            worst = worst.max(relative_error(grads[i].data()[j], numeric / (2.0 * STEP)));
        }
    }
    worst
}

/// Step proportional to the tensor's RMS, so small-valued kernels are
/// perturbed by the same relative amount as unit-scale affine parameters.
pub fn scaled_step(t: &Tensor<f64>) -> f64 {
    let rms = (t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64).sqrt();
    STEP * rms.max(1e-3)
}

/// Worst relative error of directional derivatives, one random direction
/// per input, plus `samples` single elements per input. Steps follow
/// [`scaled_step`].
pub fn directional(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    seed: u64,
    samples: usize,
) -> Vec<f64> {
    let grads = analytic(inputs, f);
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let h = scaled_step(input);
            let d = normal(input.shape(), seed + i as u64);
            let expected: f64 = grads[i].data().iter().zip(d.data()).map(|(g, v)| g * v).sum();
            let shift = |t: &mut Tensor<f64>, sign: f64| {
                for (x, v) in t.data_mut().iter_mut().zip(d.data()) {
                    *x += sign * h * v;
                }
            };
            let numeric = central(inputs, f, i, |t| shift(t, 1.0), |t| shift(t, -1.0)) / (2.0 * h);
            let mut worst = relative_error(expected, numeric);
            let stride = (input.numel() / samples.max(1)).max(1);
            for j in (0..input.numel()).step_by(stride).take(samples) {
                let numeric = central(inputs, f, i, |t| t.data_mut()[j] += h, |t| t.data_mut()[j] -= h);
                worst = worst.max(relative_error(grads[i].data()[j], numeric / (2.0 * h)));
            }
            worst
        })
        .collect()
}

fn central(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    i: usize,
    plus: impl Fn(&mut Tensor<f64>),
    minus: impl Fn(&mut Tensor<f64>),
) -> f64 {
    let mut up = inputs.to_vec();
    plus(&mut up[i]);
    let mut down = inputs.to_vec();
    minus(&mut down[i]);
    evaluate(&up, f) - evaluate(&down, f)
}

type Loss = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// Every tape primitive on small random inputs, each reduced to a scalar.
pub fn primitive_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, Loss)> {
    let x = || normal(Shape::new(2, 3, 4, 4), 1);
    let y = || normal(Shape::new(2, 3, 4, 4), 2);
    let kernel = || normal(Shape::new(4, 3, 3, 3), 3);
    let away_from_zero = || x().map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v });
    let affine = |seed| normal(Shape::new(2, 3, 1, 1), seed);
    vec![
        ("mirror_pad", vec![x()], Box::new(|t, v| {
            let y = t.mirror_pad(v[0], 2).unwrap();
            project(t, y, 10)
        })),
        ("correlate", vec![x(), kernel()], Box::new(|t, v| {
            let y = t.correlate(v[0], v[1], 1).unwrap();
            project(t, y, 11)
        })),
        ("conv2d_stride2", vec![x(), kernel()], Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], 2).unwrap();
            project(t, y, 12)
        })),
        ("upsample_nn", vec![x()], Box::new(|t, v| {
            let y = t.upsample_nn(v[0], 2).unwrap();
            project(t, y, 13)
        })),
        ("relu", vec![away_from_zero()], Box::new(|t, v| {
            let y = t.relu(v[0]);
            project(t, y, 14)
        })),
        ("sigmoid", vec![x()], Box::new(|t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, 15)
        })),
        ("add", vec![x(), y()], Box::new(|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            project(t, y, 16)
        })),
        ("sub", vec![x(), y()], Box::new(|t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            project(t, y, 17)
        })),
        ("mul", vec![x(), y()], Box::new(|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            project(t, y, 18)
        })),
        ("scale", vec![x()], Box::new(|t, v| {
            let y = t.scale(v[0], 0.7);
            project(t, y, 19)
        })),
        ("instance_norm", vec![x()], Box::new(|t, v| {
            let y = t.instance_norm(v[0], 1e-5);
            project(t, y, 20)
        })),
        ("scale_shift", vec![x(), affine(4), affine(5)], Box::new(|t, v| {
            let y = t.scale_shift(v[0], v[1], v[2]).unwrap();
            project(t, y, 21)
        })),
        ("gather_rows", vec![normal(Shape::new(3, 3, 1, 1), 6)], Box::new(|t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
            project(t, y, 22)
        })),
        ("gram", vec![x()], Box::new(|t, v| {
            let y = t.gram(v[0]);
            project(t, y, 23)
        })),
        ("sum", vec![x()], Box::new(|t, v| {
            let y = t.sum(v[0]);
            project(t, y, 24)
        })),
        ("sum_squares", vec![x()], Box::new(|t, v| t.sum_squares(v[0]))),
        ("sample_sum_squares", vec![x()], Box::new(|t, v| {
            let y = t.sample_sum_squares(v[0]);
            project(t, y, 25)
        })),
        ("conditional_instance_norm", vec![x(), normal(Shape::new(3, 3, 1, 1), 7), normal(Shape::new(3, 3, 1, 1), 8)], Box::new(|t, v| {
            let n = t.instance_norm(v[0], 1e-5);
            let g = t.gather_rows(v[1], &[2, 0]).unwrap();
            let b = t.gather_rows(v[2], &[2, 0]).unwrap();
            let y = t.scale_shift(n, g, b).unwrap();
            project(t, y, 26)
        })),
    ]
}

/// Worst elementwise relative error per primitive.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    primitive_cases().into_iter().map(|(name, inputs, f)| (name, elementwise(&inputs, &*f))).collect()
}

/// Weighted total loss through the toy network (widths 8/16/32, 16x16 input)
/// for a two-sample batch with different styles, as a function of every
/// trainable tensor.
pub fn network_case() -> (Vec<String>, Vec<Tensor<f64>>, Loss) {
    use pastiche_core::{FeatureExtractor, ModelWeights, NetworkConfig};
    use pastiche_core::loss::BatchTargets;

    let config = NetworkConfig { base_width: 8, residual_blocks: 2, input_size: 16, ..NetworkConfig::default() };
    let model = ModelWeights::<f32>::build(config, &["a", "b"], 5).unwrap().cast::<f64>();
    let fx = FeatureExtractor::<f32>::new(super::toy_extractor()).unwrap().cast::<f64>();
    let content = Tensor::stack(&[super::content_image(1, 16, 16).cast(), super::content_image(2, 16, 16).cast()]).unwrap();
    let style_a = fx.style_target(&super::stripes_style(16, 16).cast()).unwrap();
    let style_b = fx.style_target(&super::dots_style(16, 16).cast()).unwrap();
    let content_features = fx.content_features(&content).unwrap();
    let layers = model.layers().len();

    let mut inputs: Vec<Tensor<f64>> = model.kernels().to_vec();
    let mut names: Vec<String> = model.layers().iter().map(|s| format!("kernel/{}", s.name)).collect();
    for (layer, spec) in model.bank().layers().iter().zip(model.layers()) {
        inputs.push(layer.gamma_tensor().unwrap());
        inputs.push(layer.beta_tensor().unwrap());
        names.push(format!("gamma/{}", spec.name));
        names.push(format!("beta/{}", spec.name));
    }

    let f = Box::new(move |tape: &mut Tape<f64>, v: &[Var]| -> Var {
        let x = tape.constant(content.clone());
        let affine: Vec<(Var, Var)> = (0..layers)
            .map(|l| {
                let g = tape.gather_rows(v[layers + 2 * l], &[0, 1]).unwrap();
                let b = tape.gather_rows(v[layers + 2 * l + 1], &[0, 1]).unwrap();
                (g, b)
            })
            .collect();
        let p = model.forward_on_tape(tape, &v[..layers], &affine, x).unwrap();
        let targets = BatchTargets {
            content: &content_features,
            styles: vec![&style_a, &style_b],
            lambda_s: vec![5.0, 2.0],
            lambda_c: 1.0,
        };
        fx.batch_loss(tape, p, &targets).unwrap().total
    });
    (names, inputs, f)
}

/// Worst relative error per trainable tensor of [`network_case`].
pub fn network_errors() -> Vec<(String, f64)> {
    let (names, inputs, f) = network_case();
    names.into_iter().zip(directional(&inputs, &*f, 40, 3)).collect()
}
