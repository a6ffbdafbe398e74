use pkws::adapt::{TrmConfig, TrmModule};
use pkws::autodiff::{Graph, Tensor};
use pkws::dataset::{mix_seed, TrmMode};
use pkws::exec::Exec;
use pkws::model::{train_mtl, CosineClassifier, MtlData, MtlModel, TrainConfig};
use pkws::verify::tiny_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .unwrap()
}

struct Batch {
    x: Tensor,
    keyword: Vec<usize>,
    speaker: Vec<Option<usize>>,
}

fn batch(model: &MtlModel, rng: &mut ChaCha8Rng, b: usize) -> Batch {
    let cfg = model.config();
    Batch {
        x: randn(rng, &[b, 9, 3]),
        keyword: (0..b).map(|_| rng.random_range(0..cfg.keywords.len())).collect(),
        speaker: (0..b)
            .map(|i| (i == 0 || rng.random_bool(0.7)).then(|| rng.random_range(0..cfg.speakers.len())))
            .collect(),
    }
}

/// (total, keyword, speaker) loss values and the gradients of the total.
fn losses(model: &MtlModel, b: &Batch, lambda: f64) -> (f64, f64, f64, pkws::autodiff::Gradients) {
    let mut g = Graph::new();
    let x = g.constant(b.x.clone());
    let l = model.mtl_loss(&mut g, x, &b.keyword, &b.speaker, lambda).unwrap();
    let grads = g.backward(l.total).unwrap();
    (
        g.value(l.total).item(),
        g.value(l.keyword).item(),
        g.value(l.speaker).item(),
        grads,
    )
}

#[test]
fn multitask_loss_is_keyword_plus_weighted_speaker() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let model = tiny_model(&mut rng).unwrap();
        let n = rng.random_range(1..6);
        let b = batch(&model, &mut rng, n);
        let lambda = rng.random_range(0.0..2.0);
        let (total, lk, ls, _) = losses(&model, &b, lambda);
        assert!((total - (lk + lambda * ls)).abs() < 1e-12);
        let (t0, k0, _, _) = losses(&model, &b, 0.0);
        assert_eq!(t0, k0);
        assert_eq!(k0, lk);
    }
}

#[test]
fn speaker_side_gradients_scale_with_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let model = tiny_model(&mut rng).unwrap();
        let b = batch(&model, &mut rng, 4);
        let (.., g1) = losses(&model, &b, 0.1);
        let (.., g2) = losses(&model, &b, 0.2);
        let (.., g0) = losses(&model, &b, 0.0);
        for (id, name, _) in model.params().iter() {
            let (a, c) = (g1.get(id), g2.get(id));
            if name.starts_with("speaker") {
                let (a, c) = (a.unwrap().data(), c.unwrap().data());
                for (x, y) in a.iter().zip(c) {
                    assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{name}: {x} vs {y}");
                }
                assert!(g0.get(id).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
            } else if name.starts_with("keyword") {
                // The keyword head never sees the speaker loss.
                assert_eq!(a.map(|t| t.data().to_vec()), c.map(|t| t.data().to_vec()), "{name}");
            }
        }
    }
}

#[test]
fn speakerless_batch_has_zero_speaker_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = tiny_model(&mut rng).unwrap();
    let mut b = batch(&model, &mut rng, 3);
    b.speaker = vec![None; 3];
    let (total, lk, ls, grads) = losses(&model, &b, 0.5);
    assert_eq!(ls, 0.0);
    assert_eq!(total, lk);
    for (id, name, _) in model.params().iter() {
        if name.starts_with("speaker") {
            assert!(
                grads.get(id).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)),
                "{name}"
            );
        }
    }
}

#[test]
fn speaker_head_does_not_touch_keyword_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = tiny_model(&mut rng).unwrap();
    let x = randn(&mut rng, &[1, 9, 3]);
    let f = pkws::features::FeatureMatrix {
        frames: 9,
        dim: 3,
        data: x.data().to_vec(),
        shift_secs: 0.01,
        kind: pkws::features::FeatureKind::LogMel,
    };
    let (zk, zs) = model.embed(&f).unwrap();
    let mut other = model.clone();
    other.reinit_speaker_side(99).unwrap();
    let (zk2, zs2) = other.embed(&f).unwrap();
    assert_eq!(zk, zk2);
    assert_ne!(zs, zs2);
    assert_eq!(model.embed(&f).unwrap(), (zk, zs));
}

#[test]
fn classifier_closed_forms() {
    let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let clf = CosineClassifier::new(w, 1.0, 0.0).unwrap();
    let e = std::f64::consts::E;
    let p = clf.classify(&[1.0, 0.0]).unwrap();
    assert!((p[0] - e / (e + 1.0)).abs() < 1e-12 && (p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    assert!((clf.loss(&[1.0, 0.0], 0).unwrap() - 0.313_261_687_518_222_8).abs() < 1e-12);
    assert_eq!(clf.classify(&[5.0, 0.0]).unwrap(), p);
    assert!(clf.classify(&[0.0, 0.0]).is_err());

    let w = Tensor::new(vec![3, 12], (0..36).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let uniform = CosineClassifier::new(w, 0.0, 0.0).unwrap();
    assert!((uniform.loss(&[0.3, -1.0, 2.0], 5).unwrap() - 12f64.ln()).abs() < 1e-12);
}

/// Attention module whose gate is the constant ½ and a unit-scale loss.
fn flat_module(d: usize) -> TrmModule {
    let mut m = TrmModule::new(TrmConfig::new(TrmMode::To, d, 0)).unwrap();
    for (id, name, t) in m.params().clone().iter() {
        let v = match name {
            "loss.scale" => 1.0,
            _ => 0.0,
        };
        *m.params_mut().get_mut(id) = Tensor::filled(t.shape(), v);
    }
    m
}

#[test]
fn prototypical_loss_closed_forms() {
    let m = flat_module(2);
    // Orthonormal rows: ψ is the identity matrix.
    let q = Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let l = m.loss(q.clone(), q).unwrap();
    assert!((l - 0.313_261_687_518_222_8).abs() < 1e-12, "{l}");

    // Identical rows: every ψ equal, loss log N.
    let rows = vec![vec![0.3, -0.2, 0.5, 0.1]; 5];
    let q = Tensor::from_rows(&rows).unwrap();
    assert!((m.loss(q.clone(), q).unwrap() - 5f64.ln()).abs() < 1e-12);

    let one = Tensor::from_rows(&[vec![0.3, -0.2, 0.5, 0.1]]).unwrap();
    assert!(m.loss(one.clone(), one).unwrap().abs() < 1e-12);
}

fn tiny_data(model: &MtlModel, rng: &mut ChaCha8Rng, n: usize) -> MtlData {
    let cfg = model.config();
    MtlData {
        inputs: (0..n).map(|_| randn(rng, &[27]).into_data()).collect(),
        frames: 9,
        keyword: (0..n).map(|_| rng.random_range(0..cfg.keywords.len())).collect(),
        speaker: (0..n)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..cfg.speakers.len())))
            .collect(),
    }
}

fn train_cfg(lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 5,
        learning_rate: 1e-2,
        lambda,
        seed: 7,
    }
}

#[test]
fn training_is_deterministic_across_schedules() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = tiny_model(&mut rng).unwrap();
    let data = tiny_data(&base, &mut rng, 23);
    let mut runs = Vec::new();
    for exec in [Exec::Sequential, Exec::Sequential, Exec::Parallel] {
        let mut m = base.clone();
        let log = train_mtl(&mut m, &data, None, &train_cfg(0.1), exec).unwrap();
        runs.push((m.params().clone(), log));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    assert_ne!(&runs[0].0, base.params());
}

/// With λ = 0 the speaker side cannot influence the shared trunk or the
/// keyword head, whatever it was initialized to.
#[test]
fn zero_lambda_keyword_trajectory_ignores_speaker_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = tiny_model(&mut rng).unwrap();
    let data = tiny_data(&base, &mut rng, 30);
    let mut a = base.clone();
    let mut b = base.clone();
    b.reinit_speaker_side(mix_seed(1, &[2])).unwrap();
    let la = train_mtl(&mut a, &data, None, &train_cfg(0.0), Exec::Sequential).unwrap();
    let lb = train_mtl(&mut b, &data, None, &train_cfg(0.0), Exec::Sequential).unwrap();
    for (id, name, t) in a.params().iter() {
        if !name.starts_with("speaker") {
            assert_eq!(t, b.params().get(id), "{name}");
        }
    }
    let kw = |l: &pkws::model::TrainLog| l.epochs.iter().map(|e| e.keyword_loss).collect::<Vec<_>>();
    assert_eq!(kw(&la), kw(&lb));

    // And with λ > 0 the trunk does move differently.
    let mut c = base.clone();
    train_mtl(&mut c, &data, None, &train_cfg(0.5), Exec::Sequential).unwrap();
    assert_ne!(c.params().by_name("shared.0.w"), a.params().by_name("shared.0.w"));
}
