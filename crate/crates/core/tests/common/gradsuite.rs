//! Analytic-vs-finite-difference checks for every layer kind and both full losses.

use jointreg::completion::{completion_loss, completion_loss_grad, init_latent_with, CompletionConfig, CompletionNet, LatentCode};
use jointreg::datagen::{SdfSample, SDF_CLAMP};
use jointreg::geometry::{PointSet, SetTag};
use jointreg::netcore::{max_pool_backward, max_pool_points, LayerKind, Mode, NetParams, StackInput, StackOptions};
use jointreg::registration::{predict_transform, registration_loss, registration_loss_grad, RegistrationConfig, RegistrationNet};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assignment, fd_check, fd_vector, random_cloud, rel_err};

pub const CASES: [&str; 9] = [
    "pointwise_linear",
    "fully_connected",
    "batch_norm_train",
    "batch_norm_eval",
    "dropout",
    "latent_input",
    "max_pool",
    "registration_loss",
    "completion_loss",
];

const PER_TENSOR: usize = 12;

/// Draws with a kink (ReLU at zero, L1 at zero, truncation edge) closer than this are
/// rejected: a central difference straddling a kink does not measure the derivative.
const KINK_MARGIN: f64 = 2e-4;

/// Smallest |pre-activation| over every ReLU in the stack for this input.
fn relu_margin(net: &NetParams, input: StackInput<'_>, dropout_seed: u64) -> f64 {
    let mut margin = f64::INFINITY;
    for k in (0..net.layers.len()).filter(|&k| net.layers[k].relu) {
        let mut head = net.clone();
        head.layers.truncate(k + 1);
        let last = head.layers.last_mut().unwrap();
        last.relu = false;
        last.dropout = None;
        let pre = head.evaluate(input, &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();
        margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

fn slices(n: &mut NetParams) -> Vec<(String, &mut [f64])> {
    n.param_slices_mut("net")
}

fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn randomize_biases(net: &mut NetParams, rng: &mut ChaCha8Rng) {
    for l in &mut net.layers {
        l.bias = Array1::from_shape_simple_fn(l.bias.len(), || rng.random_range(-0.2..0.2));
        if let Some(bn) = &mut l.norm {
            bn.scale = Array1::from_shape_simple_fn(bn.scale.len(), || rng.random_range(0.5..1.5));
            bn.shift = Array1::from_shape_simple_fn(bn.shift.len(), || rng.random_range(-0.3..0.3));
            bn.running_mean = Array1::from_shape_simple_fn(bn.scale.len(), || rng.random_range(-0.5..0.5));
            bn.running_var = Array1::from_shape_simple_fn(bn.scale.len(), || rng.random_range(0.5..2.0));
        }
    }
}

/// `sum(weights * stack(x))` checked for parameters and the dense input.
fn dense_stack(kind: LayerKind, dims: &[usize], opts: StackOptions, mode: Mode, rows: usize, seed: u64) -> Option<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetParams::new(kind, dims, true, &opts, &mut rng).unwrap();
    randomize_biases(&mut net, &mut rng);
    net.mode = mode;
    let x = rand_matrix(rows, dims[0], &mut rng);
    let w = rand_matrix(rows, *dims.last().unwrap(), &mut rng);
    let dropout_seed = rng.random::<u64>();
    if relu_margin(&net, StackInput::Dense(x.view()), dropout_seed) < KINK_MARGIN {
        return None;
    }
    let loss = |n: &NetParams, x: &Array2<f64>| {
        let out = n.evaluate(StackInput::Dense(x.view()), &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();
        (&out * &w).sum()
    };
    let (_, mut trace) = net.forward(StackInput::Dense(x.view()), &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();
    let mut grads = net.zero_grads();
    let dx = net.backward(&mut trace, w.clone(), &mut grads).unwrap().into_array();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut res = fd_check(&mut net, slices, &analytic, &|n| loss(n, &x), PER_TENSOR, &mut rng);
    let fd_x = fd_vector(x.as_slice().unwrap(), &|v| loss(&net, &Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap()));
    res.push(("input".into(), rel_err(dx.as_slice().unwrap(), &fd_x)));
    Some(res)
}

fn latent_stack(seed: u64) -> Option<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [8 + 3, 16, 12, 4];
    let mut net = NetParams::new(LayerKind::PointwiseLinear, &dims, true, &StackOptions::default(), &mut rng).unwrap();
    randomize_biases(&mut net, &mut rng);
    let codes = rand_matrix(3, 8, &mut rng);
    let coords = rand_matrix(10, 3, &mut rng);
    let segments = vec![0..4, 4..5, 5..10];
    let w = rand_matrix(10, 4, &mut rng);
    if relu_margin(&net, StackInput::Latent { codes: codes.view(), coords: coords.view(), segments: &segments }, 0) < KINK_MARGIN {
        return None;
    }
    let loss = |n: &NetParams, codes: &Array2<f64>| {
        let input = StackInput::Latent { codes: codes.view(), coords: coords.view(), segments: &segments };
        (&n.evaluate(input, &mut ChaCha8Rng::seed_from_u64(0)).unwrap() * &w).sum()
    };
    let input = StackInput::Latent { codes: codes.view(), coords: coords.view(), segments: &segments };
    let (_, mut trace) = net.forward(input, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut grads = net.zero_grads();
    let dcodes = net.backward(&mut trace, w.clone(), &mut grads).unwrap().into_array();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut res = fd_check(&mut net, slices, &analytic, &|n| loss(n, &codes), PER_TENSOR, &mut rng);
    let fd = fd_vector(codes.as_slice().unwrap(), &|v| loss(&net, &Array2::from_shape_vec(codes.raw_dim(), v.to_vec()).unwrap()));
    res.push(("codes".into(), rel_err(dcodes.as_slice().unwrap(), &fd)));
    Some(res)
}

fn max_pool_case(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_matrix(9, 5, &mut rng);
    let w = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
    let loss = |v: &[f64]| {
        let m = Array2::from_shape_vec((9, 5), v.to_vec()).unwrap();
        max_pool_points(m.view()).unwrap().0.dot(&w)
    };
    let (_, idx) = max_pool_points(x.view()).unwrap();
    let analytic = max_pool_backward(&w, &idx, 9);
    let fd = fd_vector(x.as_slice().unwrap(), &loss);
    vec![("input".into(), rel_err(analytic.as_slice().unwrap(), &fd))]
}

fn reg_slices(n: &mut RegistrationNet) -> Vec<(String, &mut [f64])> {
    n.param_slices_mut()
}

/// Registration loss through the whole decoder. Returns `None` when a finite-difference
/// step would flip a nearest-neighbor assignment.
fn registration_case(seed: u64) -> Option<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RegistrationConfig { point_widths: vec![32, 16], head_widths: vec![16, 8], output_gain: 1.0, ..Default::default() };
    let mut net = RegistrationNet::new(&cfg, &mut rng).unwrap();
    randomize_biases(&mut net.head, &mut rng);
    let z = init_latent_with(&mut rng, "z");
    let src = PointSet::new(random_cloud(30, 1.0, &mut rng), SetTag::Full, "s").unwrap();
    let tgt = PointSet::new(random_cloud(22, 1.0, &mut rng), SetTag::Partial, "t").unwrap();
    let sigma = 0.5;
    let (_, grads, dz) = registration_loss_grad(&net, &z, &src, &tgt, sigma).unwrap();

    // Reject configurations where the assignment is not locally constant.
    let moved = |n: &RegistrationNet, z: &LatentCode| {
        let t = predict_transform(n, z, &src).unwrap();
        t.to_map().unwrap().apply(&src).into_points()
    };
    let base = moved(&net, &z);
    let margin_ok = {
        let d = |p: &jointreg::geometry::Point, q: &jointreg::geometry::Point| jointreg::geometry::dist_sq(p, q);
        let all = base.iter().chain(tgt.points()).count();
        let _ = all;
        let mut ok = true;
        for y in tgt.points() {
            let mut ds: Vec<f64> = base.iter().map(|x| d(x, y)).collect();
            ds.sort_by(f64::total_cmp);
            ok &= ds[1] - ds[0] > 1e-4 && (ds[0] - sigma).abs() > 1e-4;
        }
        for x in &base {
            let mut ds: Vec<f64> = tgt.points().iter().map(|y| d(x, y)).collect();
            ds.sort_by(f64::total_cmp);
            ok &= ds[1] - ds[0] > 1e-4 && (ds[0] - sigma).abs() > 1e-4;
        }
        ok
    };
    if !margin_ok {
        return None;
    }
    let reference = assignment(&base, tgt.points());
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let loss = |n: &RegistrationNet| registration_loss(n, &z, &src, &tgt, sigma).unwrap();
    let mut res = fd_check(&mut net, reg_slices, &analytic, &loss, PER_TENSOR, &mut rng);
    let fd_z = fd_vector(z.values.as_slice().unwrap(), &|v| {
        let zz = LatentCode::new(Array1::from(v.to_vec()), "z").unwrap();
        assert_eq!(assignment(&moved(&net, &zz), tgt.points()), reference, "assignment flipped");
        registration_loss(&net, &zz, &src, &tgt, sigma).unwrap()
    });
    res.push(("latent".into(), rel_err(dz.as_slice().unwrap(), &fd_z)));
    Some(res)
}

fn comp_slices(n: &mut CompletionNet) -> Vec<(String, &mut [f64])> {
    n.params.param_slices_mut("completion")
}

fn completion_case(seed: u64) -> Option<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CompletionConfig { hidden_layers: 3, width: 24, output_gain: 1.0, ..Default::default() };
    let mut net = CompletionNet::new(&cfg, &mut rng).unwrap();
    randomize_biases(&mut net.params, &mut rng);
    // Scale the output so predictions sit inside the truncation band where the loss is not flat.
    net.params.layers.last_mut().unwrap().weight *= 0.02;
    net.params.layers.last_mut().unwrap().bias.fill(0.0);
    let z = init_latent_with(&mut rng, "z");
    let samples: Vec<SdfSample> =
        random_cloud(40, 1.0, &mut rng).into_iter().map(|location| SdfSample { location, distance: rng.random_range(0.0..0.03) }).collect();
    let coords = Array2::from_shape_fn((samples.len(), 3), |(i, j)| samples[i].location[j]);
    #[allow(clippy::single_range_in_vec_init)]
    let segments = [0..samples.len()];
    let code = z.values.view().insert_axis(Axis(0));
    let input = StackInput::Latent { codes: code, coords: coords.view(), segments: &segments };
    let preds = net.sdf_batch(&z, &samples.iter().map(|s| s.location).collect::<Vec<_>>()).unwrap();
    let output_margin =
        preds.iter().zip(&samples).fold(f64::INFINITY, |m, (p, s)| m.min((p - s.distance).abs()).min((p.abs() - SDF_CLAMP).abs()));
    if relu_margin(&net.params, input, 0) < KINK_MARGIN || output_margin < KINK_MARGIN {
        return None;
    }
    let sigma_prior = 2.0;
    let (_, grads, dz) = completion_loss_grad(&net, &z, &samples, sigma_prior).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let loss = |n: &CompletionNet| completion_loss(n, &z, &samples, sigma_prior).unwrap();
    let mut res = fd_check(&mut net, comp_slices, &analytic, &loss, PER_TENSOR, &mut rng);
    let fd_z = fd_vector(z.values.as_slice().unwrap(), &|v| {
        let zz = LatentCode::new(Array1::from(v.to_vec()), "z").unwrap();
        completion_loss(&net, &zz, &samples, sigma_prior).unwrap()
    });
    res.push(("latent".into(), rel_err(dz.as_slice().unwrap(), &fd_z)));
    Some(res)
}

/// Runs one configuration of `case`; `None` means the random draw was rejected as
/// not tie-free and another seed should be tried.
pub fn run_case(case: &str, seed: u64) -> Option<Vec<(String, f64)>> {
    let bn = StackOptions { batch_norm: true, ..Default::default() };
    match case {
        "pointwise_linear" => dense_stack(LayerKind::PointwiseLinear, &[5, 16, 8, 3], StackOptions::default(), Mode::Eval, 12, seed),
        "fully_connected" => dense_stack(LayerKind::FullyConnected, &[6, 20, 12, 4], StackOptions::default(), Mode::Eval, 5, seed),
        "batch_norm_train" => dense_stack(LayerKind::FullyConnected, &[6, 16, 10, 3], bn, Mode::Train, 9, seed),
        "batch_norm_eval" => dense_stack(LayerKind::FullyConnected, &[6, 16, 10, 3], bn, Mode::Eval, 9, seed),
        "dropout" => {
            let opts = StackOptions { dropout: Some(0.3), ..Default::default() };
            dense_stack(LayerKind::FullyConnected, &[6, 16, 10, 3], opts, Mode::Train, 7, seed)
        }
        "latent_input" => latent_stack(seed),
        "max_pool" => Some(max_pool_case(seed)),
        "registration_loss" => registration_case(seed),
        "completion_loss" => completion_case(seed),
        other => panic!("unknown gradient case {other}"),
    }
}

/// Worst relative error over `configs` accepted configurations of `case`.
pub fn worst_over(case: &str, configs: usize, base_seed: u64) -> (f64, usize) {
    let mut accepted = 0;
    let mut worst = 0.0f64;
    let mut seed = base_seed;
    while accepted < configs {
        if let Some(res) = run_case(case, seed) {
            for (_, e) in res {
                worst = worst.max(e);
            }
            accepted += 1;
        }
        seed += 1;
        assert!(seed - base_seed < 50 * configs as u64, "too many rejected draws for {case}");
    }
    (worst, accepted)
}
