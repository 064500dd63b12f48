//! Analytic gradients against central finite differences (h = 1e-5).

#[path = "common/gradcheck.rs"]
mod gradcheck;

use fuzzy_attn::init;
use fuzzy_attn::{Tape, Tensor, Var};
use gradcheck::{probe, rel_err, H, TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    init::normal(rng, shape, scale)
}

/// Checks every entry of every input of a single op.
fn check_op(
    rng: &mut ChaCha8Rng,
    shapes: &[&[usize]],
    f: &dyn Fn(&mut Tape, &[Var]) -> Var,
    prepare: &dyn Fn(&mut Vec<Tensor>),
) -> f64 {
    let mut inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(rng, s, 1.0)).collect();
    prepare(&mut inputs);
    let eval = |inputs: &[Tensor], dir: Option<&Tensor>| -> (f64, Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let dir = dir.cloned().unwrap_or_else(|| Tensor::filled(tape.value(out).shape(), 1.0));
        let loss = probe(&mut tape, out, &dir);
        (tape.value(loss).item().unwrap(), tape, vars, loss)
    };
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).shape().to_vec()
    };
    let dir = rand_tensor(rng, &shape, 1.0);
    let (_, tape, vars, loss) = eval(&inputs, Some(&dir));
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("tracked input").to_vec();
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus, Some(&dir)).0 - eval(&minus, Some(&dir)).0) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

fn no_prep(_: &mut Vec<Tensor>) {}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
    let away_from_zero = |v: &mut Vec<Tensor>| {
        // Keep ReLU inputs off the kink.
        for x in v[0].data_mut() {
            if x.abs() < 0.05 {
                *x += 0.1_f64.copysign(*x);
            }
        }
    };
    let ops: Vec<(&str, Vec<Vec<usize>>, OpFn, Box<dyn Fn(&mut Vec<Tensor>)>)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()), Box::new(no_prep)),
        ("batched_matmul", vec![vec![2, 3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()), Box::new(no_prep)),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.add(v[0], v[1]).unwrap()), Box::new(no_prep)),
        ("sub", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.sub(v[0], v[1]).unwrap()), Box::new(no_prep)),
        ("mul", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.mul(v[0], v[1]).unwrap()), Box::new(no_prep)),
        ("add_row", vec![vec![4, 3], vec![3]], Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()), Box::new(no_prep)),
        ("scale", vec![vec![3, 2]], Box::new(|t, v| t.scale(v[0], -1.7)), Box::new(no_prep)),
        ("add_scalar", vec![vec![3, 2]], Box::new(|t, v| t.add_scalar(v[0], 0.3)), Box::new(no_prep)),
        ("relu", vec![vec![3, 4]], Box::new(|t, v| t.relu(v[0])), Box::new(away_from_zero)),
        ("softplus", vec![vec![3, 4]], Box::new(|t, v| t.softplus(v[0])), Box::new(no_prep)),
        ("exp", vec![vec![3, 4]], Box::new(|t, v| t.exp(v[0])), Box::new(no_prep)),
        ("square", vec![vec![3, 4]], Box::new(|t, v| t.square(v[0])), Box::new(no_prep)),
        ("softmax_rows", vec![vec![3, 5]], Box::new(|t, v| t.softmax(v[0], 1).unwrap()), Box::new(no_prep)),
        ("softmax_cols", vec![vec![3, 5]], Box::new(|t, v| t.softmax(v[0], 0).unwrap()), Box::new(no_prep)),
        ("log_softmax", vec![vec![2, 4]], Box::new(|t, v| t.log_softmax(v[0], 1).unwrap()), Box::new(no_prep)),
        (
            "layer_norm",
            vec![vec![3, 5], vec![5], vec![5]],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
            Box::new(no_prep),
        ),
        ("transpose", vec![vec![3, 4]], Box::new(|t, v| t.transpose(v[0]).unwrap()), Box::new(no_prep)),
        ("mean_axis0", vec![vec![4, 3]], Box::new(|t, v| t.mean(v[0], 0).unwrap()), Box::new(no_prep)),
        ("mean_axis1", vec![vec![4, 3]], Box::new(|t, v| t.mean(v[0], 1).unwrap()), Box::new(no_prep)),
        ("concat", vec![vec![3], vec![2]], Box::new(|t, v| t.concat(&[v[0], v[1]]).unwrap()), Box::new(no_prep)),
        ("index", vec![vec![5]], Box::new(|t, v| t.index(v[0], 2).unwrap()), Box::new(no_prep)),
        ("reshape", vec![vec![2, 6]], Box::new(|t, v| t.reshape(v[0], &[3, 4]).unwrap()), Box::new(no_prep)),
        ("slice_rows", vec![vec![5, 3]], Box::new(|t, v| t.slice_rows(v[0], 1, 3).unwrap()), Box::new(no_prep)),
        (
            "gaussian_logits",
            vec![vec![4, 3], vec![5, 3], vec![5, 3]],
            Box::new(|t, v| t.gaussian_logits(v[0], v[1], v[2]).unwrap()),
            Box::new(|v: &mut Vec<Tensor>| v[2] = v[2].map(|s| 0.5 + s.abs())),
        ),
    ];
    for (name, shapes, f, prep) in &ops {
        let shapes: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            worst = worst.max(check_op(&mut rng, &shapes, f.as_ref(), prep.as_ref()));
        }
        assert!(worst < TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn fuzzy_layer_parameters() {
    let worst = gradcheck::fuzzy_layer_worst(20);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn encoder_block_parameters() {
    let worst = gradcheck::encoder_block_worst(20);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn pair_model_parameters() {
    let worst = gradcheck::pair_model_worst(20);
    assert!(worst < TOL, "worst relative error {worst:e}");
}
