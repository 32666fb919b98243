mod support;

use fedsynth::busgen::{build_federation, ClientShard, SplitTag};
use fedsynth::fedsim::model::label_tensor;
use fedsynth::fedsim::model::loss_and_grads;
use fedsynth::fedsim::{
    aggregate, classifier, local_update, run_federation, run_round, select_best, synthetic_update,
    train_centralized, Algorithm, ClientUpdate, FederationConfig, FederationState, Injection, Prox,
    SyntheticPool, SyntheticSource,
};
use fedsynth::nn::{Module, ParamSet, Tensor};
use fedsynth::rng::SeedStream;
use fedsynth::Error;
use rand::seq::SliceRandom;
use rand::Rng;
use support::fixtures::{random_param_set, resample};

fn one(values: &[f32]) -> ParamSet<f32> {
    ParamSet::new(vec![(
        "w".into(),
        Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
    )])
    .unwrap()
}

fn update(id: u16, p: ParamSet<f32>, n: usize) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        params: p,
        weight: n,
    }
}

#[test]
fn aggregation_examples() {
    let (g, w) = aggregate(&[
        update(0, one(&[1.0, 3.0]), 5),
        update(1, one(&[3.0, 5.0]), 5),
    ])
    .unwrap();
    assert_eq!(g, one(&[2.0, 4.0]));
    assert_eq!(w, vec![0.5, 0.5]);
    let (g, _) = aggregate(&[update(0, one(&[0.0]), 1), update(1, one(&[4.0]), 3)]).unwrap();
    assert_eq!(g, one(&[3.0]));
    let p = random_param_set(&mut SeedStream::new(1).rng("p"));
    assert_eq!(aggregate(&[update(4, p.clone(), 17)]).unwrap().0, p);
}

#[test]
fn aggregation_errors() {
    assert!(matches!(aggregate::<f32>(&[]), Err(Error::Empty(_))));
    let r = aggregate(&[update(0, one(&[1.0]), 1), update(1, one(&[1.0, 2.0]), 1)]);
    assert!(matches!(r, Err(Error::Incompatible(_))));
    assert!(aggregate(&[update(0, one(&[1.0]), 0)]).is_err());
}

#[test]
fn aggregating_identical_sets_is_the_identity_in_any_order() {
    let mut rng = SeedStream::new(2).rng("agg");
    for _ in 0..20 {
        let p = random_param_set(&mut rng);
        let k = rng.random_range(2..6);
        let ups: Vec<_> = (0..k)
            .map(|i| update(i, p.clone(), rng.random_range(1..500)))
            .collect();
        let (g, w) = aggregate(&ups).unwrap();
        assert_eq!(g, p);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut mixed: Vec<_> = ups
            .iter()
            .map(|u| update(u.client_id, resample(&p, &mut rng), u.weight))
            .collect();
        let base = aggregate(&mixed).unwrap();
        mixed.shuffle(&mut rng);
        assert_eq!(aggregate(&mixed).unwrap(), base);
    }
}

fn small_config(seed: u64) -> FederationConfig {
    FederationConfig {
        rounds: 3,
        seed,
        ..FederationConfig::default()
    }
}

fn shards() -> Vec<ClientShard> {
    build_federation(11, 0.1).unwrap()
}

#[test]
fn fedprox_with_zero_mu_matches_fedavg() {
    let shards = shards();
    let global = FederationState::new(3).global;
    let avg = small_config(3);
    let prox = FederationConfig {
        algorithm: Algorithm::FedProx,
        mu: 0.0,
        ..avg.clone()
    };
    for s in &shards {
        let a = local_update(&global, s, &avg, 0, None).unwrap();
        let b = local_update(&global, s, &prox, 0, None).unwrap();
        assert_eq!(a, b);
    }
    let with_mu = FederationConfig { mu: 0.03, ..prox };
    assert_ne!(
        local_update(&global, &shards[0], &with_mu, 0, None)
            .unwrap()
            .params,
        local_update(&global, &shards[0], &avg, 0, None)
            .unwrap()
            .params
    );
}

fn tiny_batch(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = SeedStream::new(seed).rng("batch");
    let x = Tensor::uniform(&[n, 1, 32, 32], 0.0, 1.0, &mut rng);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    (x, label_tensor(&labels))
}

#[test]
fn proximal_term_vanishes_at_the_anchor() {
    let mut rng = SeedStream::new(4).rng("init");
    let model = classifier::<f64>(&mut rng);
    let anchor = model.param_set();
    let (x, y) = tiny_batch(3, 4);
    let (l0, g0) = loss_and_grads(&model, &x, &y, None).unwrap();
    let (l1, g1) = loss_and_grads(
        &model,
        &x,
        &y,
        Some(Prox {
            mu: 0.03,
            anchor: &anchor,
        }),
    )
    .unwrap();
    assert_eq!(l0, l1);
    assert_eq!(g0, g1);
}

#[test]
fn proximal_gradient_matches_finite_differences() {
    let mut rng = SeedStream::new(5).rng("init");
    let anchor = classifier::<f64>(&mut rng).param_set();
    let mut model = classifier::<f64>(&mut rng);
    let (x, y) = tiny_batch(4, 5);
    let prox = Prox {
        mu: 0.03,
        anchor: &anchor,
    };
    let (_, grads) = loss_and_grads(&model, &x, &y, Some(prox)).unwrap();
    let h = 1e-5;
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    for _ in 0..300 {
        let t = rng.random_range(0..sizes.len());
        let i = rng.random_range(0..sizes[t]);
        let orig = model.params_mut()[t].data()[i];
        model.params_mut()[t].data_mut()[i] = orig + h;
        let (lp, _) = loss_and_grads(&model, &x, &y, Some(prox)).unwrap();
        model.params_mut()[t].data_mut()[i] = orig - h;
        let (lm, _) = loss_and_grads(&model, &x, &y, Some(prox)).unwrap();
        model.params_mut()[t].data_mut()[i] = orig;
        num.push((lp - lm) / (2.0 * h));
        ana.push(grads[t].data()[i]);
    }
    let diff: f64 = num
        .iter()
        .zip(&ana)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    assert!(diff / scale < 1e-3, "relative error {}", diff / scale);
}

fn pool(n: usize) -> SyntheticPool {
    let mut rng = SeedStream::new(6).rng("pool");
    SyntheticPool::new(
        (0..n)
            .map(|_| Tensor::uniform(&[1, 32, 32], 0.0, 1.0, &mut rng))
            .collect(),
        (0..n).map(|i| (i % 2) as u8).collect(),
        SyntheticSource::Ddpm,
    )
    .unwrap()
}

#[test]
fn synthetic_update_step_count_and_identity() {
    let global = FederationState::new(7).global;
    let p = pool(400);
    let mut config = small_config(7);
    let (same, steps) = synthetic_update(&global, Some(&p), &config, 0).unwrap();
    assert_eq!((same, steps), (global.clone(), 0));
    config.synthetic_count = 160;
    let (a, steps) = synthetic_update(&global, Some(&p), &config, 0).unwrap();
    assert_eq!(steps, 5);
    assert_ne!(a, global);
    assert_eq!(
        synthetic_update(&global, Some(&p), &config, 0).unwrap().0,
        a
    );
    assert!(synthetic_update(&global, None, &config, 0).is_err());
    config.synthetic_count = 150;
    assert_eq!(
        synthetic_update(&global, Some(&p), &config, 0).unwrap().1,
        5
    );
}

#[test]
fn pool_draws_are_distinct_and_reshuffle_when_exhausted() {
    let p = pool(100);
    let r0 = p.draw(1, 0, 40).unwrap();
    let r1 = p.draw(1, 1, 40).unwrap();
    let r2 = p.draw(1, 2, 40).unwrap();
    let mut both: Vec<usize> = r0.iter().chain(&r1).copied().collect();
    both.sort();
    both.dedup();
    assert_eq!(both.len(), 80, "rounds 0 and 1 come from one permutation");
    let mut r2s = r2.clone();
    r2s.sort();
    r2s.dedup();
    assert_eq!(r2s.len(), 40);
    assert_eq!(p.draw(1, 2, 40).unwrap(), r2);
    assert!(p.draw(1, 0, 101).is_err());
}

#[test]
fn single_client_federation_is_centralized_training() {
    let shard = shards().remove(0);
    let config = small_config(8);
    let state = FederationState::new(8);
    let central = train_centralized(&state.global, &shard, &config, 2).unwrap();
    let res = run_federation(
        &config,
        std::slice::from_ref(&shard),
        None,
        Some(state),
        Some(2),
        |_| Ok(()),
    )
    .unwrap();
    assert_eq!(res.state.global, central[1]);
}

#[test]
fn no_local_steps_keeps_the_global_model() {
    let shards = shards();
    let config = FederationConfig {
        local_epochs: 0,
        ..small_config(9)
    };
    let global = FederationState::new(9).global;
    let (next, record) = run_round(&global, 0, &shards, None, &config).unwrap();
    assert_eq!(next, global);
    let n: usize = shards.iter().map(|s| s.n_train()).sum();
    for (w, s) in record.weights.iter().zip(&shards) {
        assert_eq!(*w, s.n_train() as f64 / n as f64);
    }
}

#[test]
fn best_round_is_the_earliest_maximum() {
    assert_eq!(
        select_best(&[Some(0.6), Some(0.9), Some(0.9), Some(0.7)]),
        Some(1)
    );
    assert_eq!(select_best(&[None, Some(0.5), None]), Some(1));
    assert_eq!(select_best(&[None, None]), Some(0));
    let config = FederationConfig {
        rounds: 1,
        ..small_config(10)
    };
    let res = run_federation(&config, &shards(), None, None, None, |_| Ok(())).unwrap();
    assert_eq!(res.best().round, 1);
    assert_eq!(res.best().params, res.state.global);
}

fn poison_tests(mut shards: Vec<ClientShard>) -> Vec<ClientShard> {
    for s in &mut shards {
        for i in s.indices(SplitTag::Test) {
            s.images[i] = Tensor::full(&[1, 32, 32], f32::NAN);
        }
    }
    shards
}

#[test]
fn training_never_touches_test_images() {
    let config = small_config(12);
    let clean = run_federation(&config, &shards(), None, None, None, |_| Ok(())).unwrap();
    let poisoned = run_federation(&config, &poison_tests(shards()), None, None, None, |_| {
        Ok(())
    })
    .unwrap();
    assert_eq!(clean, poisoned);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let shards = shards();
    let p = pool(300);
    let config = FederationConfig {
        rounds: 4,
        synthetic_count: 64,
        algorithm: Algorithm::FedProx,
        ..small_config(13)
    };
    let full = run_federation(&config, &shards, Some(&p), None, None, |_| Ok(())).unwrap();
    let half = run_federation(&config, &shards, Some(&p), None, Some(2), |_| Ok(())).unwrap();
    assert_eq!(half.state.round, 2);
    let rest = run_federation(&config, &shards, Some(&p), Some(half.state), None, |_| {
        Ok(())
    })
    .unwrap();
    assert_eq!(rest, full);
}

#[test]
fn client_injection_runs_the_synthetic_batches_on_every_client() {
    let shards = shards();
    let p = pool(200);
    let config = FederationConfig {
        synthetic_count: 64,
        injection: Injection::Client,
        ..small_config(14)
    };
    let global = FederationState::new(14).global;
    let (next, record) = run_round(&global, 0, &shards, Some(&p), &config).unwrap();
    assert_eq!(record.synthetic_steps, 2);
    let server = FederationConfig {
        injection: Injection::Server,
        ..config
    };
    assert_ne!(
        run_round(&global, 0, &shards, Some(&p), &server).unwrap().0,
        next
    );
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let config = small_config(15);
    let shards = shards();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_federation(&config, &shards, None, None, Some(2), |_| Ok(())).unwrap())
    };
    assert_eq!(run(1), run(4));
}
