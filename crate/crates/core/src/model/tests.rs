use super::*;
use crate::rng::SeedTree;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn random_batch(rng: &mut crate::rng::Rng, rows: usize, input: usize, output: usize, loss: LossKind) -> Batch {
    let inputs: Vec<f64> = (0..rows * input).map(|_| StandardNormal.sample(rng)).collect();
    let targets = match loss {
        LossKind::MeanSquaredError => {
            Targets::Values((0..rows * output).map(|_| StandardNormal.sample(rng)).collect())
        }
        LossKind::SoftmaxCrossEntropy => Targets::Labels((0..rows).map(|_| rng.random_range(0..output)).collect()),
    };
    Batch { inputs, targets, rows, task_id: 0 }
}

fn init_store(spec: &ModelSpec, seed: u64, scale: f64) -> ParamStore {
    let mut store = ParamStore::zeros(spec.partition().unwrap());
    store.gaussian_init(&mut SeedTree::new(seed).stream("init"), scale).unwrap();
    store
}

/// Central differences over every coordinate, compared against `backward`.
fn max_fd_rel_error(spec: &ModelSpec, store: &ParamStore, batch: &Batch) -> f64 {
    let (_, grad) = loss_and_gradient(spec, store, batch).unwrap();
    let partition = store.partition().clone();
    let mut theta = store.values().to_vec();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() {
        let orig = theta[j];
        theta[j] = orig + h;
        let up = loss_at(spec, &partition, &theta, batch).unwrap();
        theta[j] = orig - h;
        let down = loss_at(spec, &partition, &theta, batch).unwrap();
        theta[j] = orig;
        let fd = (up - down) / (2.0 * h);
        let denom = grad[j].abs().max(fd.abs()).max(1e-4);
        worst = worst.max((grad[j] - fd).abs() / denom);
    }
    worst
}

#[test]
fn zero_weights_zero_targets_give_zero_loss() {
    let spec = ModelSpec::mlp(3, vec![4], 2, Activation::Tanh, LossKind::MeanSquaredError);
    let store = ParamStore::zeros(spec.partition().unwrap());
    let batch = Batch {
        inputs: vec![1.0, -2.0, 0.5, 0.3, 0.3, 0.3],
        targets: Targets::Values(vec![0.0; 4]),
        rows: 2,
        task_id: 0,
    };
    let (loss, cache) = forward_loss(&spec, &store, &batch).unwrap();
    assert_eq!(loss, 0.0);
    let grad = backward(&spec, &store, &cache).unwrap();
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn uniform_logits_give_log_classes() {
    let spec = ModelSpec::mlp(3, vec![], 4, Activation::Tanh, LossKind::SoftmaxCrossEntropy);
    let store = ParamStore::zeros(spec.partition().unwrap());
    let batch = Batch {
        inputs: vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0],
        targets: Targets::Labels(vec![0, 3]),
        rows: 2,
        task_id: 0,
    };
    let (loss, _) = forward_loss(&spec, &store, &batch).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
    assert!((loss - 1.3863).abs() < 1e-4);
}

/// Straight-line re-implementation of a 2-hidden-layer tanh MLP with MSE.
fn reference_three_layer_loss(theta: &[f64], sizes: [usize; 4], x: &[f64], y: &[f64], rows: usize) -> f64 {
    let mut off = 0;
    let mut take = |n: usize| {
        let s = &theta[off..off + n];
        off += n;
        s.to_vec()
    };
    let w1 = take(sizes[1] * sizes[0]);
    let b1 = take(sizes[1]);
    let w2 = take(sizes[2] * sizes[1]);
    let b2 = take(sizes[2]);
    let w3 = take(sizes[3] * sizes[2]);
    let b3 = take(sizes[3]);
    let mut total = 0.0;
    for r in 0..rows {
        let xr = &x[r * sizes[0]..(r + 1) * sizes[0]];
        let mut h1 = vec![0.0; sizes[1]];
        for i in 0..sizes[1] {
            let mut acc = b1[i];
            for j in 0..sizes[0] {
                acc += w1[i * sizes[0] + j] * xr[j];
            }
            h1[i] = acc.tanh();
        }
        let mut h2 = vec![0.0; sizes[2]];
        for i in 0..sizes[2] {
            let mut acc = b2[i];
            for j in 0..sizes[1] {
                acc += w2[i * sizes[1] + j] * h1[j];
            }
            h2[i] = acc.tanh();
        }
        for i in 0..sizes[3] {
            let mut acc = b3[i];
            for j in 0..sizes[2] {
                acc += w3[i * sizes[2] + j] * h2[j];
            }
            let e = acc - y[r * sizes[3] + i];
            total += e * e;
        }
    }
    total / (rows * sizes[3]) as f64
}

#[test]
fn forward_matches_straight_line_reference() {
    let sizes = [5, 7, 6, 3];
    let spec = ModelSpec::mlp(5, vec![7, 6], 3, Activation::Tanh, LossKind::MeanSquaredError);
    let store = init_store(&spec, 17, 0.5);
    let mut rng = SeedTree::new(17).stream("data");
    let batch = random_batch(&mut rng, 9, 5, 3, LossKind::MeanSquaredError);
    let (loss, _) = forward_loss(&spec, &store, &batch).unwrap();
    let Targets::Values(y) = &batch.targets else { unreachable!() };
    let reference = reference_three_layer_loss(store.values(), sizes, &batch.inputs, y, 9);
    assert!((loss - reference).abs() <= 1e-12, "{loss} vs {reference}");
}

#[test]
fn finite_differences_mlp_all_combinations() {
    for (i, (act, loss)) in [
        (Activation::Tanh, LossKind::MeanSquaredError),
        (Activation::Tanh, LossKind::SoftmaxCrossEntropy),
        (Activation::Relu, LossKind::MeanSquaredError),
        (Activation::Relu, LossKind::SoftmaxCrossEntropy),
    ]
    .into_iter()
    .enumerate()
    {
        let spec = ModelSpec::mlp(6, vec![8, 5], 4, act, loss);
        let store = init_store(&spec, 100 + i as u64, 0.6);
        let mut rng = SeedTree::new(100 + i as u64).stream("data");
        let batch = random_batch(&mut rng, 7, 6, 4, loss);
        let err = max_fd_rel_error(&spec, &store, &batch);
        assert!(err <= 1e-5, "{act:?}/{loss:?}: {err}");
    }
}

#[test]
fn finite_differences_attention() {
    for (i, (act, loss)) in [
        (Activation::Tanh, LossKind::MeanSquaredError),
        (Activation::Relu, LossKind::SoftmaxCrossEntropy),
    ]
    .into_iter()
    .enumerate()
    {
        let spec = ModelSpec {
            architecture: Architecture::ToyAttention { seq_len: 4 },
            widths: vec![5, 6],
            activation: act,
            input_dim: 12,
            output_dim: 3,
            loss,
        };
        let store = init_store(&spec, 200 + i as u64, 0.7);
        let mut rng = SeedTree::new(200 + i as u64).stream("data");
        let batch = random_batch(&mut rng, 5, 12, 3, loss);
        let err = max_fd_rel_error(&spec, &store, &batch);
        assert!(err <= 1e-5, "{act:?}/{loss:?}: {err}");
    }
}

#[test]
fn exact_interpolation_has_zero_gradient() {
    let spec = ModelSpec::mlp(4, vec![6], 2, Activation::Tanh, LossKind::MeanSquaredError);
    let store = init_store(&spec, 5, 0.4);
    let mut rng = SeedTree::new(5).stream("data");
    let mut batch = random_batch(&mut rng, 6, 4, 2, LossKind::MeanSquaredError);
    batch.targets = Targets::Values(predict(&spec, &store, &batch).unwrap());
    let (loss, grad) = loss_and_gradient(&spec, &store, &batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn duplicated_rows_leave_mean_gradient_unchanged() {
    let spec = ModelSpec::mlp(4, vec![6], 3, Activation::Relu, LossKind::SoftmaxCrossEntropy);
    let store = init_store(&spec, 9, 0.5);
    let mut rng = SeedTree::new(9).stream("data");
    let batch = random_batch(&mut rng, 8, 4, 3, LossKind::SoftmaxCrossEntropy);
    let doubled = batch.concat(&batch).unwrap();
    let (_, g1) = loss_and_gradient(&spec, &store, &batch).unwrap();
    let (_, g2) = loss_and_gradient(&spec, &store, &doubled).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn slicing_rows_inverts_concat() {
    let mut rng = SeedTree::new(2).stream("data");
    for loss in [LossKind::SoftmaxCrossEntropy, LossKind::MeanSquaredError] {
        let a = random_batch(&mut rng, 3, 4, 2, loss);
        let b = random_batch(&mut rng, 5, 4, 2, loss);
        let both = a.concat(&b).unwrap();
        assert_eq!(both.slice_rows(0..3).unwrap(), a);
        let mut tail = both.slice_rows(3..8).unwrap();
        tail.task_id = b.task_id;
        assert_eq!(tail, b);
        assert!(both.slice_rows(4..4).is_err());
        assert!(both.slice_rows(0..9).is_err());
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let spec = ModelSpec {
        architecture: Architecture::ToyAttention { seq_len: 2 },
        widths: vec![3],
        activation: Activation::Tanh,
        input_dim: 4,
        output_dim: 2,
        loss: LossKind::MeanSquaredError,
    };
    let store = init_store(&spec, 1, 0.5);
    let batch = random_batch(&mut SeedTree::new(1).stream("data"), 4, 4, 2, LossKind::MeanSquaredError);
    let a = forward_loss(&spec, &store, &batch).unwrap().0;
    let b = forward_loss(&spec, &store, &batch).unwrap().0;
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn stale_cache_is_rejected() {
    let spec = ModelSpec::mlp(2, vec![2], 1, Activation::Tanh, LossKind::MeanSquaredError);
    let mut store = init_store(&spec, 2, 0.5);
    let batch = random_batch(&mut SeedTree::new(2).stream("data"), 3, 2, 1, LossKind::MeanSquaredError);
    let (_, cache) = forward_loss(&spec, &store, &batch).unwrap();
    store.values_mut()[0] += 1.0;
    assert!(matches!(backward(&spec, &store, &cache), Err(EpiError::StaleCache)));
}

#[test]
fn shape_errors() {
    let spec = ModelSpec::mlp(3, vec![2], 2, Activation::Tanh, LossKind::MeanSquaredError);
    let store = init_store(&spec, 3, 0.5);
    let bad = Batch {
        inputs: vec![0.0; 5],
        targets: Targets::Values(vec![0.0; 4]),
        rows: 2,
        task_id: 0,
    };
    assert!(forward_loss(&spec, &store, &bad).is_err());
    let labels = Batch {
        inputs: vec![0.0; 6],
        targets: Targets::Labels(vec![0, 1]),
        rows: 2,
        task_id: 0,
    };
    assert!(matches!(forward_loss(&spec, &store, &labels), Err(EpiError::ShapeMismatch(_))));
    let other = ModelSpec::mlp(3, vec![3], 2, Activation::Tanh, LossKind::MeanSquaredError);
    let ok = random_batch(&mut SeedTree::new(3).stream("d"), 2, 3, 2, LossKind::MeanSquaredError);
    assert!(forward_loss(&other, &store, &ok).is_err());
}

#[test]
fn non_finite_activations_are_reported() {
    let spec = ModelSpec::mlp(1, vec![], 1, Activation::Tanh, LossKind::MeanSquaredError);
    let store = ParamStore::from_values(spec.partition().unwrap(), vec![f64::MAX, f64::MAX]).unwrap();
    let batch = Batch {
        inputs: vec![10.0],
        targets: Targets::Values(vec![0.0]),
        rows: 1,
        task_id: 0,
    };
    assert!(matches!(forward_loss(&spec, &store, &batch), Err(EpiError::NonFinite(_))));
}

#[test]
fn evaluate_perfect_and_regression() {
    // Identity-ish classifier: logits = x.
    let spec = ModelSpec::mlp(3, vec![], 3, Activation::Tanh, LossKind::SoftmaxCrossEntropy);
    let mut values = vec![0.0; 12];
    for i in 0..3 {
        values[i * 3 + i] = 1.0;
    }
    let store = ParamStore::from_values(spec.partition().unwrap(), values).unwrap();
    let batch = Batch {
        inputs: vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0],
        targets: Targets::Labels(vec![0, 1, 2]),
        rows: 3,
        task_id: 0,
    };
    assert_eq!(evaluate(&spec, &store, &batch).unwrap(), 1.0);

    let reg = ModelSpec::mlp(2, vec![3], 2, Activation::Tanh, LossKind::MeanSquaredError);
    let store = init_store(&reg, 4, 0.5);
    let mut b = random_batch(&mut SeedTree::new(4).stream("d"), 5, 2, 2, LossKind::MeanSquaredError);
    b.targets = Targets::Values(predict(&reg, &store, &b).unwrap());
    assert_eq!(evaluate(&reg, &store, &b).unwrap(), 1.0);

    let empty = Batch {
        inputs: vec![],
        targets: Targets::Values(vec![]),
        rows: 0,
        task_id: 0,
    };
    assert!(evaluate(&reg, &store, &empty).is_err());
}

#[test]
fn random_labels_give_chance_accuracy() {
    // n = 4000: binomial std = sqrt(0.25 / 4000) ~ 0.0079, so +-0.05 is > 6 sigma.
    let spec = ModelSpec::mlp(4, vec![5], 2, Activation::Tanh, LossKind::SoftmaxCrossEntropy);
    let store = init_store(&spec, 12, 0.5);
    let batch = random_batch(&mut SeedTree::new(12).stream("d"), 4000, 4, 2, LossKind::SoftmaxCrossEntropy);
    let acc = evaluate(&spec, &store, &batch).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn partition_names() {
    let spec = ModelSpec::mlp(4, vec![3], 2, Activation::Tanh, LossKind::MeanSquaredError);
    let p = spec.partition().unwrap();
    let names: Vec<_> = p.groups().iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]);
    assert_eq!(p.dim(), 4 * 3 + 3 + 3 * 2 + 2);
    let att = ModelSpec {
        architecture: Architecture::ToyAttention { seq_len: 2 },
        widths: vec![3, 4],
        activation: Activation::Tanh,
        input_dim: 6,
        output_dim: 2,
        loss: LossKind::MeanSquaredError,
    };
    let p = att.partition().unwrap();
    assert_eq!(p.groups()[0].name, "attn.query");
    assert_eq!(p.groups()[0].len, 3 * 3);
    assert_eq!(p.groups()[3].name, "head1.weight");
    assert_eq!(p.groups()[3].len, 3 * 4);
    assert!(ModelSpec { input_dim: 5, ..att }.validate().is_err());
}
