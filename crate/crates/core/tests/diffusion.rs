mod support;

use fedsynth::busgen::{build_federation, ClientShard, SplitTag};
use fedsynth::diffusion::{
    ddpm_chain, ddpm_loss_and_grads, ddpm_sample, draw_conditioning, guided_eps, make_schedule,
    q_sample, q_sample_with, reverse_step, reverse_step_with, train_ddpm, DdpmTrainConfig,
    Denoiser, EpsModel, GuidanceConfig, MlpDenoiser, NoiseSchedule, NULL_CLASS,
};
use fedsynth::gan::generator_training_set;
use fedsynth::nn::{AdamW, AdamWConfig, Module, Tensor};
use fedsynth::rng::SeedStream;
use fedsynth::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Knows `x0`, so it can read the exact noise back out of `x_t`.
struct Oracle {
    x0: Tensor<f64>,
    schedule: NoiseSchedule,
}

impl Module<f64> for Oracle {
    fn named_params(&self) -> Vec<(String, &Tensor<f64>)> {
        vec![]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![]
    }
}

impl EpsModel<f64> for Oracle {
    type Trace = ();
    fn sample_shape(&self) -> Vec<usize> {
        self.x0.shape()[1..].to_vec()
    }
    fn predict_trace(
        &self,
        x: &Tensor<f64>,
        steps: &[usize],
        _: &[usize],
    ) -> fedsynth::Result<(Tensor<f64>, ())> {
        let per = x.len() / x.batch();
        let out = Tensor::from_fn(x.shape(), |i| {
            let ab = self.schedule.alpha_bar_at(steps[i / per]);
            (x.data()[i] - ab.sqrt() * self.x0.data()[i % self.x0.len()]) / (1.0 - ab).sqrt()
        });
        Ok((out, ()))
    }
    fn backward(&self, _: &(), _: &Tensor<f64>) -> fedsynth::Result<Vec<Tensor<f64>>> {
        Ok(vec![])
    }
}

struct Zero;

impl Module<f64> for Zero {
    fn named_params(&self) -> Vec<(String, &Tensor<f64>)> {
        vec![]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![]
    }
}

impl EpsModel<f64> for Zero {
    type Trace = ();
    fn sample_shape(&self) -> Vec<usize> {
        vec![1, 8, 8]
    }
    fn predict_trace(
        &self,
        x: &Tensor<f64>,
        _: &[usize],
        _: &[usize],
    ) -> fedsynth::Result<(Tensor<f64>, ())> {
        Ok((Tensor::zeros(x.shape()), ()))
    }
    fn backward(&self, _: &(), _: &Tensor<f64>) -> fedsynth::Result<Vec<Tensor<f64>>> {
        Ok(vec![])
    }
}

#[test]
fn schedule_examples() {
    let s = make_schedule(1000, 1e-4, 0.02).unwrap();
    assert!(*s.alpha_bar.last().unwrap() < 5e-5);
    let desk = NoiseSchedule::default_desk();
    assert_eq!(desk.steps(), 200);
    assert!(*desk.alpha_bar.last().unwrap() < 5e-5);
    for t in 1..=desk.steps() {
        let ab = desk.alpha_bar_at(t) as f32;
        let id = ab.sqrt().powi(2) + (1.0 - ab).sqrt().powi(2);
        assert!((id - 1.0).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn schedule_is_a_running_product(t in 1usize..400, b0 in 1e-5f64..0.3, span in 0.0f64..0.6) {
        let b1 = (b0 + span).min(0.99);
        let s = make_schedule(t, b0, b1).unwrap();
        let mut prod = 1.0;
        for i in 0..t {
            prod *= 1.0 - s.beta[i];
            prop_assert!((s.alpha_bar[i] - prod).abs() < 1e-12);
            prop_assert!(s.alpha_bar[i] > 0.0 && s.alpha_bar[i] < 1.0);
            if i > 0 {
                prop_assert!(s.alpha_bar[i] < s.alpha_bar[i - 1]);
            }
        }
        prop_assert!((s.beta[0] - b0).abs() < 1e-15 && (s.beta[t - 1] - b1).abs() < 1e-12 || t == 1);
    }

    #[test]
    fn x0_path_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = SeedStream::new(seed).rng("lin");
        let s = NoiseSchedule::default_desk();
        let t = rng.random_range(1..=s.steps());
        let x = Tensor::<f64>::randn(&[6], 1.0, &mut rng);
        let y = Tensor::<f64>::randn(&[6], 1.0, &mut rng);
        let zero = Tensor::zeros(&[6]);
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = q_sample(&s, &combo, t, &zero).unwrap();
        let rhs = q_sample(&s, &x, t, &zero).unwrap().scale(a)
            .add(&q_sample(&s, &y, t, &zero).unwrap().scale(b)).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-12);
        }
    }
}

#[test]
fn q_sample_limits_and_range() {
    let mut rng = SeedStream::new(1).rng("q");
    let x0 = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
    let eps = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
    assert_eq!(q_sample_with(1.0, &x0, &eps).unwrap(), x0);
    assert_eq!(q_sample_with(0.0, &x0, &eps).unwrap(), eps);
    let s = NoiseSchedule::default_desk();
    assert!(matches!(
        q_sample(&s, &x0, 0, &eps),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        q_sample(&s, &x0, 201, &eps),
        Err(Error::InvalidArgument(_))
    ));
    assert!(q_sample(&s, &x0, 1, &Tensor::zeros(&[3, 2])).is_err());
}

#[test]
fn q_sample_marginal_variance() {
    let draws = 100_000;
    for ab in [0.81, 0.5, 0.1] {
        let mut rng = SeedStream::new(7).rng(&format!("mc{ab}"));
        let x0 = Tensor::<f64>::zeros(&[4]);
        let mut sums = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for _ in 0..draws {
            let eps = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
            let xt = q_sample_with(ab, &x0, &eps).unwrap();
            for (p, v) in xt.data().iter().enumerate() {
                sums[p] += v;
                sq[p] += v * v;
            }
        }
        let target = 1.0 - ab;
        let se = target * (2.0 / (draws as f64 - 1.0)).sqrt();
        for p in 0..4 {
            let m = sums[p] / draws as f64;
            let var = (sq[p] - draws as f64 * m * m) / (draws as f64 - 1.0);
            assert!(
                (var - target).abs() < 3.0 * se,
                "ᾱ={ab} pixel {p}: {var} vs {target}"
            );
        }
    }
}

#[test]
fn oracle_and_zero_losses() {
    let s = NoiseSchedule::default_desk();
    let mut rng = SeedStream::new(2).rng("loss");
    let x0 = Tensor::<f64>::uniform(&[64, 1, 8, 8], -1.0, 1.0, &mut rng);
    let labels: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
    let g = GuidanceConfig::default();
    let oracle = Oracle {
        x0: x0.clone(),
        schedule: s.clone(),
    };
    let (stats, _) = ddpm_loss_and_grads(&oracle, &s, &x0, &labels, &g, &mut rng).unwrap();
    assert!(stats.loss < 1e-20, "{}", stats.loss);
    let (stats, _) = ddpm_loss_and_grads(&Zero, &s, &x0, &labels, &g, &mut rng).unwrap();
    let se = (2.0 / x0.len() as f64).sqrt();
    assert!((stats.loss - 1.0).abs() < 4.0 * se, "{}", stats.loss);
    assert!(ddpm_loss_and_grads(&Zero, &s, &x0, &[2; 64], &g, &mut rng).is_err());
}

#[test]
fn label_drop_rate() {
    let mut rng = SeedStream::new(3).rng("drop");
    let labels = vec![1u8; 10_000];
    let c = draw_conditioning(&mut rng, &labels, 200, 0.1).unwrap();
    let rate = c.dropped as f64 / 1e4;
    assert!((0.092..=0.108).contains(&rate), "{rate}");
    assert_eq!(
        c.labels.iter().filter(|&&y| y == NULL_CLASS).count(),
        c.dropped
    );
    assert!(c.labels.iter().all(|&y| y == 1 || y == NULL_CLASS));
    assert!(c.steps.iter().all(|&t| (1..=200).contains(&t)));
    assert!(c.steps.contains(&1) && c.steps.contains(&200));
    let none = draw_conditioning(&mut rng, &labels, 200, 0.0).unwrap();
    assert_eq!(none.dropped, 0);
}

#[test]
fn exact_inversion_at_the_first_step() {
    let s = NoiseSchedule::default_desk();
    for seed in 0..20 {
        let mut rng = SeedStream::new(seed).rng("inv");
        let x0 = Tensor::<f32>::uniform(&[2, 1, 32, 32], -1.0, 1.0, &mut rng);
        let eps = Tensor::<f32>::randn(&[2, 1, 32, 32], 1.0, &mut rng);
        let x1 = q_sample(&s, &x0, 1, &eps).unwrap();
        let xi = Tensor::<f32>::randn(&[2, 1, 32, 32], 1.0, &mut rng);
        let back = reverse_step_with(&s, &x1, 1, &eps, &xi).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
    // with the model in the loop
    let mut rng = SeedStream::new(9).rng("inv-model");
    let x0 = Tensor::<f64>::uniform(&[3, 1, 8, 8], -1.0, 1.0, &mut rng);
    let eps = Tensor::<f64>::randn(&[3, 1, 8, 8], 1.0, &mut rng);
    let x1 = q_sample(&s, &x0, 1, &eps).unwrap();
    let oracle = Oracle {
        x0: x0.clone(),
        schedule: s.clone(),
    };
    let back = reverse_step(
        &oracle,
        &s,
        &x1,
        1,
        &[0, 1, 0],
        &GuidanceConfig::default(),
        &mut rng,
    )
    .unwrap();
    for (a, b) in back.data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(reverse_step(
        &oracle,
        &s,
        &x1,
        0,
        &[0, 1, 0],
        &GuidanceConfig::default(),
        &mut rng
    )
    .is_err());
}

#[test]
fn guidance_algebra() {
    let mut rng = SeedStream::new(4).rng("guide");
    let c = Tensor::<f32>::randn(&[2, 1, 4, 4], 1.0, &mut rng);
    let u = Tensor::<f32>::randn(&[2, 1, 4, 4], 1.0, &mut rng);
    assert_eq!(guided_eps(&c, &u, 0.0).unwrap(), c);
    assert_eq!(guided_eps(&c, &c, 1.5).unwrap(), c);
    for w in [0.0f32, 1.0, 2.0] {
        let g = guided_eps(&c, &u, w as f64).unwrap();
        for i in 0..c.len() {
            let (ci, ui) = (c.data()[i], u.data()[i]);
            assert_eq!(g.data()[i], ci + w * (ci - ui));
            assert!((g.data()[i] - ((1.0 + w) * ci - w * ui)).abs() < 1e-5);
        }
    }
    // affine in w: the step from 0 to 1 repeats from 1 to 2
    let g: Vec<Tensor<f32>> = [0.0, 1.0, 2.0]
        .iter()
        .map(|&w| guided_eps(&c, &u, w).unwrap())
        .collect();
    for i in 0..c.len() {
        let d = c.data()[i] - u.data()[i];
        assert_eq!(g[1].data()[i], g[0].data()[i] + d);
        assert_eq!(g[2].data()[i], g[0].data()[i] + 2.0 * d);
    }
    assert!(GuidanceConfig {
        p_drop: 1.0,
        w_g: 1.0
    }
    .validate()
    .is_err());
    assert!(GuidanceConfig {
        p_drop: 0.1,
        w_g: -0.5
    }
    .validate()
    .is_err());
}

fn fd_check<M: EpsModel<f64>>(
    model: &mut M,
    x: &Tensor<f64>,
    steps: &[usize],
    labels: &[usize],
    rng: &mut impl Rng,
) -> f64 {
    let (out, trace) = model.predict_trace(x, steps, labels).unwrap();
    assert_eq!(out.shape(), x.shape());
    let r = Tensor::<f64>::randn(out.shape(), 1.0, rng);
    let weighted = |m: &M| -> f64 {
        let y = m.predict(x, steps, labels).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let grads = model.backward(&trace, &r).unwrap();
    assert_eq!(grads.len(), model.named_params().len());
    let l0 = weighted(model);
    let h = 1e-6;
    let (mut num, mut ana, mut skipped) = (Vec::new(), Vec::new(), 0);
    for _ in 0..200 {
        let t = rng.random_range(0..grads.len());
        let i = rng.random_range(0..grads[t].len());
        let orig = model.params_mut()[t].data()[i];
        model.params_mut()[t].data_mut()[i] = orig + h;
        let lp = weighted(model);
        model.params_mut()[t].data_mut()[i] = orig - h;
        let lm = weighted(model);
        model.params_mut()[t].data_mut()[i] = orig;
        let (up, down) = ((lp - l0) / h, (l0 - lm) / h);
        // a probe that straddles a relu kink is not differentiable there
        if (up - down).abs() > 1e-4 * (up.abs() + down.abs()) + 1e-6 {
            skipped += 1;
            continue;
        }
        num.push((lp - lm) / (2.0 * h));
        ana.push(grads[t].data()[i]);
    }
    assert!(skipped < 20, "{skipped} probes straddled a kink");
    let diff: f64 = num
        .iter()
        .zip(&ana)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12)
}

#[test]
fn denoiser_gradient_matches_finite_differences() {
    for case in 0..3u64 {
        let mut rng = SeedStream::new(case).rng("unet-fd");
        let mut model = Denoiser::<f64>::new(4, &mut rng);
        // randomize the affine and projection terms so no path is trivially zero
        for p in model.params_mut() {
            let noise = Tensor::<f64>::randn(p.shape(), 0.1, &mut rng);
            p.axpy(1.0, &noise).unwrap();
        }
        let x = Tensor::<f64>::randn(&[2, 1, 32, 32], 1.0, &mut rng);
        let err = fd_check(&mut model, &x, &[1, 150], &[0, NULL_CLASS], &mut rng);
        assert!(err < 1e-4, "case {case}: {err:e}");
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for case in 0..20u64 {
        let mut rng = SeedStream::new(case).rng("mlp-fd");
        let mut model = MlpDenoiser::<f64>::new(16, &mut rng);
        let x = Tensor::<f64>::randn(&[5, 1], 1.0, &mut rng);
        let err = fd_check(
            &mut model,
            &x,
            &[1, 7, 50, 120, 200],
            &[0, 1, 2, 1, 0],
            &mut rng,
        );
        assert!(err < 1e-4, "case {case}: {err:e}");
    }
}

#[test]
fn denoiser_rejects_bad_inputs() {
    let model = Denoiser::<f32>::new(4, &mut SeedStream::new(0).rng("x"));
    let x = Tensor::<f32>::zeros(&[2, 1, 32, 32]);
    assert!(model.predict(&x, &[1, 2], &[0, 3]).is_err());
    assert!(model.predict(&x, &[1], &[0, 1]).is_err());
    assert!(model
        .predict(&Tensor::zeros(&[2, 1, 16, 16]), &[1, 2], &[0, 1])
        .is_err());
    let out = model.predict(&x, &[1, 2], &[0, NULL_CLASS]).unwrap();
    assert_eq!(out.shape(), x.shape());
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"class.table".to_string()));
    let table = model
        .named_params()
        .into_iter()
        .find(|(n, _)| n == "class.table")
        .unwrap()
        .1;
    assert_eq!(table.shape(), &[3, 16]);
    assert_ne!(table.data()[..16], table.data()[32..]);
}

#[test]
fn sampling_is_deterministic_and_batch_independent() {
    let s = make_schedule(20, 1e-3, 0.2).unwrap();
    let model = Denoiser::<f32>::new(4, &mut SeedStream::new(5).rng("init"));
    let g = GuidanceConfig::default();
    let a = ddpm_sample(&model, &s, 3, 1, &g, 11).unwrap();
    let b = ddpm_sample(&model, &s, 3, 1, &g, 11).unwrap();
    assert_eq!(a, b);
    let c = ddpm_sample(&model, &s, 60, 1, &g, 11).unwrap();
    assert_eq!(a[..], c[..3]);
    assert!(c.iter().all(|(img, y)| *y == 1
        && img.shape() == [1, 32, 32]
        && img.data().iter().all(|v| (0.0..=1.0).contains(v))));
    assert_ne!(ddpm_sample(&model, &s, 3, 1, &g, 12).unwrap(), a);
    assert!(ddpm_sample(&model, &s, 0, 0, &g, 11).unwrap().is_empty());
    assert!(ddpm_sample(&model, &s, 1, 2, &g, 11).is_err());
}

fn mixture(n: usize, rng: &mut impl Rng) -> (Tensor<f32>, Vec<u8>) {
    let modes = [
        Normal::new(-0.8, 0.25).unwrap(),
        Normal::new(1.2, 0.25).unwrap(),
    ];
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let x = Tensor::from_fn(&[n, 1], |i| modes[labels[i] as usize].sample(rng) as f32);
    (x, labels)
}

#[test]
fn toy_mixture_means_are_recovered() {
    let s = NoiseSchedule::default_desk();
    let stream = SeedStream::new(21);
    let mut model = MlpDenoiser::<f32>::new(64, &mut stream.rng("init"));
    let mut opt = AdamW::new(AdamWConfig {
        lr: 2e-3,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut rng = stream.rng("train");
    let g = GuidanceConfig::default();
    for _ in 0..4000 {
        let (x, y) = mixture(128, &mut rng);
        fedsynth::diffusion::ddpm_train_step(&mut model, &mut opt, &s, &x, &y, &g, &mut rng)
            .unwrap();
    }
    let sample_mean = |class: u8, w: f64| {
        let out = ddpm_chain(&model, &s, 1000, class, &GuidanceConfig { w_g: w, ..g }, 3).unwrap();
        out.data().iter().map(|&v| v as f64).sum::<f64>() / 1000.0
    };
    for (class, mean, away) in [(0u8, -0.8, -1.0), (1, 1.2, 1.0)] {
        let m = sample_mean(class, 0.0);
        assert!((m - mean).abs() < 0.1, "class {class}: {m} vs {mean}");
        // guidance sharpens the class, pushing samples away from the other mode
        let guided = sample_mean(class, g.w_g);
        assert!(
            (guided - m) * away > 0.0,
            "class {class}: guided {guided}, conditional {m}"
        );
    }
}

fn desk_training_set() -> ClientShard {
    let fed = build_federation(0, 0.1).unwrap();
    generator_training_set(&fed, None).unwrap()
}

#[test]
fn training_loss_decreases() {
    let data = desk_training_set();
    for seed in 0..5 {
        let config = DdpmTrainConfig {
            base_channels: 8,
            steps: 200,
            batch_size: 16,
            seed,
            ..DdpmTrainConfig::default()
        };
        let (_, losses) = train_ddpm(&data, &config).unwrap();
        let median = |v: &[f32]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| a.total_cmp(b));
            v[v.len() / 2]
        };
        let (first, last) = (median(&losses[..20]), median(&losses[180..]));
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn training_refuses_test_images() {
    let mut data = desk_training_set();
    data.tags[0] = SplitTag::Test;
    let config = DdpmTrainConfig {
        steps: 1,
        ..DdpmTrainConfig::default()
    };
    assert!(matches!(train_ddpm(&data, &config), Err(Error::Leakage(_))));
}
