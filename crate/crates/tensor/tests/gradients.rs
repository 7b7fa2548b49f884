use eenr_tensor::gradcheck::{check, GradCheckReport};
use eenr_tensor::{OpKind, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

/// Checks d(loss)/d(input k) for a loss built from `inputs` by `build`.
/// `loss = sum(out ⊙ weights)` with fixed random weights so every output
/// element contributes with a distinct coefficient.
fn check_op(
    inputs: &[Tensor],
    build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
) -> Vec<GradCheckReport> {
    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&tape, &vars);
        let w = rand_tensor(&out.shape(), 99);
        out.value().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&tape, &vars);
    let w = tape.constant(rand_tensor(&out.shape(), 99));
    let loss = out.mul(w).unwrap().sum().unwrap();
    tape.backward(loss).unwrap();

    (0..inputs.len())
        .map(|k| {
            let analytic = vars[k].grad().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
            check(&inputs[k], &analytic, STEP, |probe| {
                let mut xs = inputs.to_vec();
                xs[k] = probe.clone();
                eval(&xs)
            })
        })
        .collect()
}

fn assert_passes(name: &str, reports: Vec<GradCheckReport>) {
    for (k, r) in reports.iter().enumerate() {
        assert!(
            r.passes(TOL),
            "{name}: input {k} max rel err {} (abs {})",
            r.max_rel_err,
            r.max_abs_err
        );
    }
}

fn unary(kind: OpKind, shape: &[usize]) {
    let name = format!("{kind:?}");
    let x = rand_tensor(shape, 1);
    assert_passes(
        &name,
        check_op(&[x], move |tape, v| tape.apply(kind.clone(), &[v[0]]).unwrap()),
    );
}

#[test]
fn gradcheck_elementwise_unary() {
    unary(OpKind::Tanh, &[3, 4]);
    unary(OpKind::Sigmoid, &[3, 4]);
    unary(OpKind::Exp, &[3, 4]);
    unary(OpKind::Scale(-2.5), &[5]);
    unary(OpKind::AddScalar(0.7), &[2, 2]);
}

#[test]
fn gradcheck_ln() {
    let x = rand_tensor(&[2, 3], 5).map(|v| v.abs() + 0.5);
    assert_passes(
        "ln",
        check_op(&[x], |_, v| v[0].ln().unwrap()),
    );
}

#[test]
fn gradcheck_axis_ops() {
    for axis in 0..2 {
        unary(OpKind::Softmax { axis }, &[3, 4]);
        unary(OpKind::LogSoftmax { axis }, &[3, 4]);
        unary(OpKind::LogSumExp { axis }, &[3, 4]);
    }
    unary(OpKind::Softmax { axis: 1 }, &[2, 3, 2]);
}

#[test]
fn gradcheck_reductions_and_shape_ops() {
    unary(OpKind::Sum, &[3, 4]);
    unary(OpKind::Mean, &[3, 4]);
    unary(OpKind::Transpose, &[3, 4]);
    unary(OpKind::Reshape { shape: vec![6, 2] }, &[3, 4]);
    unary(OpKind::Slice { axis: 1, start: 1, end: 3 }, &[3, 4]);
    unary(OpKind::Slice { axis: 0, start: 2, end: 3 }, &[3, 4]);
    unary(
        OpKind::Gather {
            indices: vec![2, 0, 2, 1],
        },
        &[3, 4],
    );
}

#[test]
fn gradcheck_binary_broadcasting() {
    let shapes: &[(&[usize], &[usize])] = &[
        (&[3, 4], &[3, 4]),
        (&[3, 4], &[1, 4]),
        (&[3, 4], &[3, 1]),
        (&[3, 4], &[]),
        (&[4], &[3, 4]),
    ];
    for (i, (sa, sb)) in shapes.iter().enumerate() {
        let a = rand_tensor(sa, 10 + i as u64);
        let b = rand_tensor(sb, 20 + i as u64);
        for kind in [OpKind::Add, OpKind::Sub, OpKind::Mul] {
            let name = format!("{kind:?} {sa:?} {sb:?}");
            let k2 = kind.clone();
            assert_passes(
                &name,
                check_op(&[a.clone(), b.clone()], move |tape, v| {
                    tape.apply(k2.clone(), &[v[0], v[1]]).unwrap()
                }),
            );
        }
    }
}

#[test]
fn gradcheck_matmul_concat_weighted_sum() {
    let a = rand_tensor(&[3, 5], 3);
    let b = rand_tensor(&[5, 2], 4);
    assert_passes("matmul", check_op(&[a, b], |_, v| v[0].matmul(v[1]).unwrap()));

    let x = rand_tensor(&[2, 3], 6);
    let y = rand_tensor(&[2, 1], 7);
    assert_passes(
        "concat",
        check_op(&[x.clone(), y], |tape, v| tape.concat(&[v[0], v[1]], 1).unwrap()),
    );
    let z = rand_tensor(&[2, 3], 8);
    assert_passes(
        "weighted_sum",
        check_op(&[x, z], |tape, v| {
            tape.weighted_sum(&[v[0], v[1]], &[0.3, -1.7]).unwrap()
        }),
    );
}

#[test]
fn gradcheck_sum_tanh_linear_layer() {
    // loss = sum(tanh(W x))
    let w = rand_tensor(&[4, 3], 11);
    let x = rand_tensor(&[3, 1], 12);
    let reports = check_op(&[w, x], |_, v| v[0].matmul(v[1]).unwrap().tanh().unwrap());
    assert_passes("sum(tanh(Wx))", reports);
}

#[test]
fn gradcheck_composed_gated_cell() {
    // one LSTM-style step, the deepest composition used downstream
    let x = rand_tensor(&[2, 3], 30);
    let wx = rand_tensor(&[3, 8], 31);
    let h = rand_tensor(&[2, 2], 32);
    let wh = rand_tensor(&[2, 8], 33);
    let c = rand_tensor(&[2, 2], 34);
    let reports = check_op(&[x, wx, h, wh, c], |_, v| {
        let gates = v[0].matmul(v[1]).unwrap().add(v[2].matmul(v[3]).unwrap()).unwrap();
        let i = gates.slice_cols(0, 2).unwrap().sigmoid().unwrap();
        let f = gates.slice_cols(2, 4).unwrap().sigmoid().unwrap();
        let g = gates.slice_cols(4, 6).unwrap().tanh().unwrap();
        let o = gates.slice_cols(6, 8).unwrap().sigmoid().unwrap();
        let c2 = f.mul(v[4]).unwrap().add(i.mul(g).unwrap()).unwrap();
        o.mul(c2.tanh().unwrap()).unwrap()
    });
    assert_passes("gated cell", reports);
}

#[test]
fn deterministic_trajectories() {
    fn run() -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = eenr_tensor::ParamStore::new();
        store.insert_uniform("w", &[3, 2], &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let mut trace = Vec::new();
        for _ in 0..20 {
            let tape = Tape::new();
            let w = store.bind(&tape, "w").unwrap();
            let xv = tape.constant(x.clone());
            let loss = xv.matmul(w).unwrap().tanh().unwrap().sum().unwrap();
            tape.backward(loss).unwrap();
            store.collect_grads(&tape).unwrap();
            store.step(0.01);
            trace.extend_from_slice(store.get("w").unwrap().data());
        }
        trace
    }
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..7,
        seed in any::<u64>(),
        scale in 0.1f64..50.0,
    ) {
        let x = rand_tensor(&[rows, cols], seed).map(|v| v * scale);
        let tape = Tape::new();
        let y = tape.constant(x).softmax(1).unwrap().value();
        for r in 0..rows {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn concat_slices_recover_inputs(
        rows in 1usize..4,
        widths in proptest::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let tape = Tape::new();
        let parts: Vec<Tensor> = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| rand_tensor(&[rows, w], seed.wrapping_add(i as u64)))
            .collect();
        let vars: Vec<Var> = parts.iter().map(|t| tape.constant(t.clone())).collect();
        let joined = tape.concat(&vars, 1).unwrap();
        let mut start = 0;
        for p in &parts {
            let w = p.shape()[1];
            let s = joined.slice_cols(start, start + w).unwrap().value();
            prop_assert_eq!(&*s, p);
            start += w;
        }
    }
}
