use super::*;

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_by_identity_is_noop() {
    let mut tape = Tape::new();
    let a = Tensor::matrix(3, 3, vec![1.0, -2.0, 3.5, 0.25, 7.0, -1.0, 4.0, 0.0, 2.0]);
    let i = tape.constant(Tensor::identity(3));
    let av = tape.constant(a.clone());
    let out = tape.matmul(i, av).unwrap();
    assert_eq!(tape.value(out), &a);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]));
    let y = tape.softmax(x).unwrap();
    assert!(close(tape.value(y).data(), &[1.0 / 3.0; 3], 1e-7));
}

#[test]
fn log_inverts_exp() {
    let mut tape = Tape::new();
    let xs: Vec<f32> = (0..21).map(|i| -5.0 + 0.5 * i as f32).collect();
    let x = tape.constant(Tensor::new(vec![21], xs.clone()));
    let e = tape.exp(x).unwrap();
    let l = tape.log(e).unwrap();
    assert!(close(tape.value(l).data(), &xs, 1e-6));
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn records_only_when_an_input_requires_grad() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let d = tape.exp(c).unwrap();
    assert!(!tape.requires_grad(d));
    let p = tape.param(Tensor::scalar(1.0));
    let e = tape.mul(c, p).unwrap();
    assert!(tape.requires_grad(e));
}

#[test]
fn grad_of_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn constant_graph_has_empty_gradients() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]));
    let s = tape.sum(x).unwrap();
    assert!(tape.backward(s).unwrap().is_empty());
}

#[test]
fn unreachable_leaf_gets_zeros() {
    let mut tape = Tape::new();
    let used = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]));
    let unused = tape.param(Tensor::zeros(&[3, 2]));
    let s = tape.sum(used).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[3, 2]));
    assert_eq!(g.get(used).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn non_scalar_root_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    let y = tape.exp(x).unwrap();
    assert!(matches!(
        tape.backward(y),
        Err(AutodiffError::NonScalarRoot { .. })
    ));
}

#[test]
fn causal_softmax_zeroes_future_columns() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(
        2,
        4,
        vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0],
    ));
    let y = tape.causal_softmax(x, 1).unwrap();
    let v = tape.value(y);
    assert_eq!(&v.data()[2..4], &[0.0, 0.0]);
    assert_eq!(v.data()[3 + 4], 0.0);
    let row0: f32 = v.row(0).iter().sum();
    assert!((row0 - 1.0).abs() < 1e-6);
}

#[test]
fn gather_and_pick_index_checks() {
    let mut tape = Tape::new();
    let t = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(
        tape.gather_rows(t, vec![0, 3]),
        Err(AutodiffError::IndexOutOfRange {
            index: 3,
            bound: 3,
            ..
        })
    ));
    assert!(matches!(
        tape.pick(t, vec![0, 1, 2]),
        Err(AutodiffError::IndexOutOfRange {
            index: 2,
            bound: 2,
            ..
        })
    ));
}

#[test]
fn replay_is_bit_identical() {
    let build = || {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::matrix(2, 3, vec![0.3, -0.1, 0.7, 1.1, -0.4, 0.2]));
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.5, -1.5]));
        let h = tape.matmul(x, w).unwrap();
        let p = tape.log_softmax(h).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        (tape.value(s).item().to_bits(), g.get(w).unwrap().clone())
    };
    let (a, ga) = build();
    let (b, gb) = build();
    assert_eq!(a, b);
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ga), bits(&gb));
}

fn random_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

#[test]
fn two_layer_network_matches_central_differences() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let cfg = gradcheck::GradCheckConfig::default();
    for _ in 0..10 {
        let point = vec![
            random_matrix(&mut rng, 3, 4),
            random_matrix(&mut rng, 4, 5),
            random_matrix(&mut rng, 5, 2),
            random_matrix(&mut rng, 3, 2),
        ];
        let report = gradcheck::check_tape_function(&point, &cfg, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.relu(h)?;
            let y = t.matmul(h, v[2])?;
            let y = t.log_softmax(y)?;
            let y = t.mul(y, v[3])?;
            t.sum(y)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-3, "{report:?}");
        assert!(report.checked > report.rejected * 3, "{report:?}");
    }
}

#[test]
fn gradcheck_catches_a_wrong_gradient() {
    let point = vec![Tensor::new(vec![3], vec![0.5, -1.0, 2.0])];
    let wrong = vec![Tensor::new(vec![3], vec![1.0, -2.0, 4.1])];
    let report = gradcheck::check_coordinates(
        &point,
        &wrong,
        &gradcheck::all_coordinates(&point),
        &gradcheck::GradCheckConfig::default(),
        |x| Ok::<_, ()>(x[0].data().iter().map(|&v| f64::from(v * v)).sum()),
    )
    .unwrap();
    assert!(report.max_rel_error > 0.02, "{report:?}");
}

#[test]
fn gradcheck_rejects_a_coordinate_on_a_kink() {
    // hinges inside h/2 and far inside it, where the central estimates at h
    // and h/2 coincide
    let point = vec![Tensor::new(vec![3], vec![0.0002, 1e-6, 1.0])];
    let grad = vec![Tensor::new(vec![3], vec![1.0, 1.0, 1.0])];
    let report = gradcheck::check_coordinates(
        &point,
        &grad,
        &gradcheck::all_coordinates(&point),
        &gradcheck::GradCheckConfig::default(),
        |x| Ok::<_, ()>(x[0].data().iter().map(|&v| f64::from(v.max(0.0))).sum()),
    )
    .unwrap();
    assert_eq!((report.checked, report.rejected), (1, 2));
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}
