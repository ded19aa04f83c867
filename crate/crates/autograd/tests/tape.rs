use fmce_autograd::{AutogradError, Tape, Tensor, Var};
use proptest::prelude::*;

fn t(dims: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(dims.to_vec(), data).unwrap()
}

#[test]
fn add_small_vectors() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], vec![1.0, 2.0]));
    let b = tape.constant(t(&[2], vec![3.0, 4.0]));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.data(c), &[4.0, 6.0]);
}

#[test]
fn adding_zeros_is_identity() {
    let mut tape = Tape::new();
    let x = t(&[2, 2], vec![1.5, -2.0, 0.25, 9.0]);
    let a = tape.constant(x.clone());
    let z = tape.constant(Tensor::zeros([2, 2]).unwrap());
    let c = tape.add(a, z).unwrap();
    assert_eq!(tape.data(c), x.data());
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros([2, 3]).unwrap());
    let b = tape.constant(Tensor::zeros([3, 2]).unwrap());
    let err = tape.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2×3]") && msg.contains("[3×2]"), "{msg}");
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::new();
    let i = tape.constant(t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]));
    let p = tape.matmul(i, m).unwrap();
    assert_eq!(tape.data(p), &[5.0, 6.0, 7.0, 8.0]);

    let r = tape.constant(t(&[1, 2], vec![1.0, 2.0]));
    let c = tape.constant(t(&[2, 1], vec![3.0, 4.0]));
    let d = tape.matmul(r, c).unwrap();
    assert_eq!(tape.data(d), &[11.0]);

    assert!(matches!(
        tape.matmul(r, r).unwrap_err(),
        AutogradError::ShapeMismatch { op: "matmul", .. }
    ));
}

#[test]
fn conv_counts_overlaps() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full([1, 1, 3, 3], 1.0f64).unwrap());
    let k = tape.constant(Tensor::full([1, 1, 2, 2], 1.0).unwrap());
    let b = tape.constant(Tensor::zeros([1]).unwrap());
    let y = tape.conv2d(x, k, b, 1, 0).unwrap();
    assert_eq!(tape.shape(y).dims(), &[1, 1, 2, 2]);
    assert_eq!(tape.data(y), &[4.0; 4]);
}

#[test]
fn zero_kernel_gives_zero_output() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2, 4, 4], (0..32).map(|i| i as f64 - 7.5).collect()));
    let k = tape.constant(Tensor::zeros([3, 2, 3, 3]).unwrap());
    let b = tape.constant(Tensor::zeros([3]).unwrap());
    let y = tape.conv2d(x, k, b, 1, 1).unwrap();
    assert!(tape.data(y).iter().all(|&v| v == 0.0));
}

#[test]
fn conv_kernel_larger_than_padded_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([1, 1, 3, 3]).unwrap());
    let k = tape.constant(Tensor::zeros([1, 1, 6, 6]).unwrap());
    let b = tape.constant(Tensor::zeros([1]).unwrap());
    assert!(tape.conv2d(x, k, b, 1, 1).is_err());
    assert!(tape.conv2d(x, k, b, 1, 2).is_ok());
}

#[test]
fn relu_values_and_zero_subgradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], vec![-1.0, 0.0, 2.0]).with_grad());
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.data(y), &[0.0, 0.0, 2.0]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros([2]).unwrap().with_grad());
    assert!(matches!(tape.backward(x), Err(AutogradError::NonScalarLoss(_))));
}

#[test]
fn repeated_backward_accumulates_until_zeroed() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], vec![1.0, -3.0]).with_grad());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0, -12.0]);
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, -6.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], vec![1.0, 2.0]).with_grad());
    let c = tape.constant(t(&[2], vec![5.0, 6.0]));
    let p = tape.mul(x, c).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap(), &[5.0, 6.0]);
}

/// A small conv net on the tape, used for replay-order and determinism checks.
fn small_net(tape: &mut Tape<f64>) -> (Vec<Var>, Var) {
    let x = tape.leaf(t(&[2, 1, 6, 6], (0..72).map(|i| ((i * 37) % 17) as f64 / 17.0).collect()).with_grad());
    let k = tape.leaf(t(&[3, 1, 3, 3], (0..27).map(|i| ((i * 11) % 7) as f64 / 7.0 - 0.4).collect()).with_grad());
    let b = tape.leaf(t(&[3], vec![0.1, -0.2, 0.05]).with_grad());
    let h = tape.conv2d(x, k, b, 1, 1).unwrap();
    let h = tape.relu(h).unwrap();
    let h = tape.maxpool2d(h, 2, 2).unwrap();
    let g = tape.global_avg_pool(h).unwrap();
    let w = tape.leaf(t(&[3, 4], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).with_grad());
    let logits = tape.matmul(g, w).unwrap();
    let target = t(&[2, 4], vec![0., 1., 0., 0., 0., 0., 0., 1.]);
    let loss = tape.cross_entropy_from_logits(logits, &target).unwrap();
    (vec![x, k, b, w], loss)
}

#[test]
fn replay_visits_each_node_once_after_its_consumers() {
    let mut tape = Tape::new();
    let (_, loss) = small_net(&mut tape);
    let order = tape.backward_traced(loss).unwrap();
    let mut seen = std::collections::HashSet::new();
    let mut position = std::collections::HashMap::new();
    for (i, v) in order.iter().enumerate() {
        assert!(seen.insert(*v), "node {v:?} visited twice");
        position.insert(*v, i);
    }
    for v in &order {
        for input in tape.inputs_of(*v) {
            assert!(input < *v, "input recorded after its consumer");
            if let Some(&p) = position.get(&input) {
                // an input's adjoint is read only after every consumer wrote into it
                assert!(p > position[v]);
            }
        }
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let grads = |_: ()| {
        let mut tape = Tape::new();
        let (leaves, loss) = small_net(&mut tape);
        tape.backward(loss).unwrap();
        leaves
            .iter()
            .flat_map(|v| tape.grad(*v).unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    assert_eq!(grads(()), grads(()));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..12, seed in any::<u64>()) {
        let mut s = seed;
        let data: Vec<f64> = (0..rows * cols).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 40.0
        }).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[rows, cols], data));
        let y = tape.log_softmax(x).unwrap();
        for row in tape.data(y).chunks(cols) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative(
        logits in prop::collection::vec(-50.0f64..50.0, 12),
        class in prop::collection::vec(0usize..4, 3),
    ) {
        let mut target = vec![0.0; 12];
        for (r, c) in class.iter().enumerate() {
            target[r * 4 + c] = 1.0;
        }
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 4], logits));
        let l = tape.cross_entropy_from_logits(x, &t(&[3, 4], target)).unwrap();
        prop_assert!(tape.value(l).item() >= 0.0);
    }
}
