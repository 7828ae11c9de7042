//! Finite-difference validation of every analytic backward pass. Each op
//! is probed on randomized instances with a fixed projection vector
//! turning the output into a scalar, so the op's backward pass evaluated
//! at that projection must match central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fisheye_seg::deform::{
    bilinear_sample_with_grad, deformable_conv2d, deformable_conv2d_backward,
    factorized_rdc_1d, factorized_rdc_1d_backward, restricted_deformable_conv2d,
    restricted_deformable_conv2d_backward, Axis, DeformVariant, KernelGeometry, SamplePosition,
};
use fisheye_seg::gradcheck::finite_difference_check;
use fisheye_seg::labels::LabelMap;
use fisheye_seg::ops::conv::{conv2d, conv2d_backward};
use fisheye_seg::ops::loss::softmax_cross_entropy;
use fisheye_seg::ops::norm::{batch_normalize, batch_normalize_backward, Mode, NormStatistics};
use fisheye_seg::tensor::Tensor;

const EPSILON: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
const INSTANCES: usize = 20;

fn random_tensor(shape: [usize; 4], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Offsets kept a safe margin away from the bilinear kinks at integer
/// coordinates, so finite differences stay on one linear piece.
fn kink_safe_offsets(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| {
            let base = rng.gen_range(-2i64..=2) as f64;
            let frac = rng.gen_range(0.05..0.45);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            base + sign * frac
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn bilinear_sample_positional_partials() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..INSTANCES {
        let h = rng.gen_range(3..7);
        let w = rng.gen_range(3..7);
        let plane: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut pos = vec![
            rng.gen_range(0.0..(w - 1) as f64 - 0.1) + 0.05,
            rng.gen_range(0.0..(h - 1) as f64 - 0.1) + 0.05,
        ];
        let (_, d_du, d_dv) = bilinear_sample_with_grad(
            &plane,
            h,
            w,
            SamplePosition { u: pos[0], v: pos[1] },
        );
        let report = finite_difference_check(
            &mut pos,
            &[d_du, d_dv],
            |p| {
                bilinear_sample_with_grad(&plane, h, w, SamplePosition { u: p[0], v: p[1] }).0
            },
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }
}

/// Checks one deformable variant: gradients with respect to the input,
/// the weights, the bias, and the offsets, against finite differences of
/// the projected output.
fn check_deform_variant(variant: DeformVariant, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..3);
        let in_c = rng.gen_range(1..3);
        let out_c = rng.gen_range(1..3);
        let h = rng.gen_range(4..6);
        let w = rng.gen_range(4..6);
        let dilation = rng.gen_range(1..3);

        let (geometry, axis, off_c) = match variant {
            DeformVariant::Deformable => (KernelGeometry::new(3, 3, dilation).unwrap(), None, 18),
            DeformVariant::Restricted => (KernelGeometry::new(3, 3, dilation).unwrap(), None, 16),
            DeformVariant::Factorized => {
                if rng.gen_bool(0.5) {
                    (KernelGeometry::new(3, 1, dilation).unwrap(), Some(Axis::Vertical), 2)
                } else {
                    (KernelGeometry::new(1, 3, dilation).unwrap(), Some(Axis::Horizontal), 2)
                }
            }
        };
        let (kh, kw) = geometry.kernel_extents();

        let mut input = random_tensor([n, in_c, h, w], 1.0, &mut rng);
        let mut weights = random_tensor([out_c, in_c, kh, kw], 0.7, &mut rng);
        let mut bias: Vec<f64> = (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut offsets = kink_safe_offsets([n, off_c, h, w], &mut rng);
        let proj = random_tensor([n, out_c, h, w], 1.0, &mut rng);

        let forward = |input: &Tensor, weights: &Tensor, bias: &[f64], offsets: &Tensor| {
            let out = match variant {
                DeformVariant::Deformable => {
                    deformable_conv2d(input, weights, bias, offsets, &geometry)
                }
                DeformVariant::Restricted => {
                    restricted_deformable_conv2d(input, weights, bias, offsets, &geometry)
                }
                DeformVariant::Factorized => factorized_rdc_1d(
                    input,
                    weights,
                    bias,
                    offsets,
                    axis.unwrap(),
                    dilation,
                ),
            }
            .unwrap();
            dot(out.data(), proj.data())
        };

        let grads = match variant {
            DeformVariant::Deformable => {
                deformable_conv2d_backward(&input, &weights, &bias, &offsets, &geometry, &proj)
            }
            DeformVariant::Restricted => restricted_deformable_conv2d_backward(
                &input, &weights, &bias, &offsets, &geometry, &proj,
            ),
            DeformVariant::Factorized => factorized_rdc_1d_backward(
                &input,
                &weights,
                &bias,
                &offsets,
                axis.unwrap(),
                dilation,
                &proj,
            ),
        }
        .unwrap();

        let (w2, b2, o2) = (weights.clone(), bias.clone(), offsets.clone());
        let gin = grads.input.data().to_vec();
        let report = finite_difference_check(
            input.data_mut(),
            &gin,
            |x| {
                let t = Tensor::from_vec([n, in_c, h, w], x.to_vec()).unwrap();
                forward(&t, &w2, &b2, &o2)
            },
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "{variant:?} input: {report}");

        let (i2, o2) = (input.clone(), offsets.clone());
        let gw = grads.weights.data().to_vec();
        let report = finite_difference_check(
            weights.data_mut(),
            &gw,
            |x| {
                let t = Tensor::from_vec([out_c, in_c, kh, kw], x.to_vec()).unwrap();
                forward(&i2, &t, &b2, &o2)
            },
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "{variant:?} weights: {report}");

        let w2 = weights.clone();
        let report = finite_difference_check(
            &mut bias,
            &grads.bias,
            |b| forward(&i2, &w2, b, &o2),
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "{variant:?} bias: {report}");

        let b2 = bias.clone();
        let goff = grads.offsets.data().to_vec();
        let report = finite_difference_check(
            offsets.data_mut(),
            &goff,
            |x| {
                let t = Tensor::from_vec([n, off_c, h, w], x.to_vec()).unwrap();
                forward(&i2, &w2, &b2, &t)
            },
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "{variant:?} offsets: {report}");
    }
}

#[test]
fn deformable_gradients() {
    check_deform_variant(DeformVariant::Deformable, 11);
}

#[test]
fn restricted_gradients() {
    check_deform_variant(DeformVariant::Restricted, 12);
}

#[test]
fn factorized_gradients() {
    check_deform_variant(DeformVariant::Factorized, 13);
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..3);
        let in_c = rng.gen_range(1..3);
        let out_c = rng.gen_range(1..4);
        let h = rng.gen_range(4..7);
        let w = rng.gen_range(4..7);
        let stride = rng.gen_range(1..3);
        let dilation = rng.gen_range(1..3);
        let pad = dilation;

        let mut input = random_tensor([n, in_c, h, w], 1.0, &mut rng);
        let mut weights = random_tensor([out_c, in_c, 3, 3], 0.7, &mut rng);
        let mut bias: Vec<f64> = (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let probe = conv2d(&input, &weights, &bias, stride, dilation, pad).unwrap();
        let proj = random_tensor(probe.shape(), 1.0, &mut rng);

        let forward = |input: &Tensor, weights: &Tensor, bias: &[f64]| {
            let out = conv2d(input, weights, bias, stride, dilation, pad).unwrap();
            dot(out.data(), proj.data())
        };
        let (gin, gw, gb) =
            conv2d_backward(&input, &weights, stride, dilation, pad, &proj).unwrap();

        let (w2, b2) = (weights.clone(), bias.clone());
        let g = gin.data().to_vec();
        let report = finite_difference_check(
            input.data_mut(),
            &g,
            |x| forward(&Tensor::from_vec([n, in_c, h, w], x.to_vec()).unwrap(), &w2, &b2),
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "conv input: {report}");

        let i2 = input.clone();
        let g = gw.data().to_vec();
        let report = finite_difference_check(
            weights.data_mut(),
            &g,
            |x| {
                forward(
                    &i2,
                    &Tensor::from_vec([out_c, in_c, 3, 3], x.to_vec()).unwrap(),
                    &b2,
                )
            },
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "conv weights: {report}");

        let w2 = weights.clone();
        let report =
            finite_difference_check(&mut bias, &gb, |b| forward(&i2, &w2, b), EPSILON, TOLERANCE)
                .unwrap();
        assert!(report.passed, "conv bias: {report}");
    }
}

#[test]
fn batch_normalize_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(2..4);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(2..5);
        let w = rng.gen_range(2..5);
        let mut input = random_tensor([n, c, h, w], 1.0, &mut rng);
        let mut scale: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let mut shift: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let proj = random_tensor([n, c, h, w], 1.0, &mut rng);

        let forward = |input: &Tensor, scale: &[f64], shift: &[f64]| {
            let mut stats = NormStatistics::new(c);
            let (out, _) =
                batch_normalize(input, &mut stats, scale, shift, Mode::Train, 0.1).unwrap();
            dot(out.data(), proj.data())
        };

        let mut stats = NormStatistics::new(c);
        let (_, cache) =
            batch_normalize(&input, &mut stats, &scale, &shift, Mode::Train, 0.1).unwrap();
        let (gin, gscale, gshift) = batch_normalize_backward(&cache, &proj).unwrap();

        let (s2, t2) = (scale.clone(), shift.clone());
        let g = gin.data().to_vec();
        let report = finite_difference_check(
            input.data_mut(),
            &g,
            |x| forward(&Tensor::from_vec([n, c, h, w], x.to_vec()).unwrap(), &s2, &t2),
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "bn input: {report}");

        let i2 = input.clone();
        let report = finite_difference_check(
            &mut scale,
            &gscale,
            |s| forward(&i2, s, &t2),
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "bn scale: {report}");

        let s2 = scale.clone();
        let report = finite_difference_check(
            &mut shift,
            &gshift,
            |t| forward(&i2, &s2, t),
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "bn shift: {report}");
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(2..5);
        let h = rng.gen_range(2..4);
        let w = rng.gen_range(2..4);
        let mut logits = random_tensor([n, c, h, w], 2.0, &mut rng);
        let mut labels = LabelMap::new(n, h, w, 0);
        for v in labels.data.iter_mut() {
            // Sprinkle ignored pixels among real labels.
            *v = if rng.gen_bool(0.2) {
                255
            } else {
                rng.gen_range(0..c as u8)
            };
        }
        if labels.data.iter().all(|v| *v == 255) {
            labels.data[0] = 0;
        }
        let scale = 2.0;
        let (_, grad) = softmax_cross_entropy(&logits, &labels, 255, scale).unwrap();
        let g = grad.data().to_vec();
        let report = finite_difference_check(
            logits.data_mut(),
            &g,
            |x| {
                let t = Tensor::from_vec([n, c, h, w], x.to_vec()).unwrap();
                softmax_cross_entropy(&t, &labels, 255, scale).unwrap().0
            },
            EPSILON,
            TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "cross entropy: {report}");
    }
}
