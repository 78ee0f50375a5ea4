use wdecay::{fd_gradient, ParamVector, Problem, Rng, SparseLogisticTask};

/// `max_i |g_i - fd_i| / (1 + |fd_i|)` over 20 random points.
fn worst_relative_error(p: &Problem, seed: u64, scale: f64) -> f64 {
    let mut rng = Rng::new(seed);
    let batch = p.full_batch();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta = ParamVector::new((0..p.dim()).map(|_| scale * rng.normal()).collect()).unwrap();
        let g = p.grad(&theta, &batch).unwrap();
        let fd = fd_gradient(p, &theta, &batch, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    worst
}

fn task(dim: usize, train: usize) -> SparseLogisticTask {
    SparseLogisticTask {
        dim,
        informative: dim.min(2),
        train,
        eval: 10,
        ..SparseLogisticTask::default()
    }
}

#[test]
fn quadratic_gradient() {
    let p = Problem::quadratic(
        ParamVector::new(vec![0.5, 2.0, 30.0, 7.0]).unwrap(),
        ParamVector::new(vec![1.0, -1.0, 0.25, 3.0]).unwrap(),
    )
    .unwrap();
    assert!(worst_relative_error(&p, 1, 2.0) < 1e-7);
}

#[test]
fn logistic_gradient() {
    let (train, _) = task(5, 32).generate(2).unwrap();
    let p = Problem::logistic(train);
    assert!(worst_relative_error(&p, 2, 1.0) < 1e-5);
}

#[test]
fn mlp_gradient() {
    let (train, _) = task(2, 32).generate(3).unwrap();
    let p = Problem::mlp(train, vec![2, 8, 1]).unwrap();
    assert_eq!(p.dim(), 2 * 8 + 8 + 8 + 1);
    assert!(worst_relative_error(&p, 3, 1.0) < 1e-4);
}

#[test]
fn deeper_mlp_gradient() {
    let (train, _) = task(4, 16).generate(4).unwrap();
    let p = Problem::mlp(train, vec![4, 6, 5, 1]).unwrap();
    assert!(worst_relative_error(&p, 4, 0.7) < 1e-4);
}
