use proptest::prelude::*;

use dina::cox::{cox_partial_loglik, CoxDesign};
use dina::dina::diagnostics::logit_identity_gap;
use dina::dina::{blend_exponential_at, fit_dina, fold_split, DinaOptions};
use dina::evaluation::{bootstrap_ci, read_rows, sensitivity_r2, write_rows, MseRow};
use dina::experiment::{ExperimentId, MethodSpec, RunConfig};
use dina::io::{read_dataset, write_dataset};
use dina::learners::{fit_propensity, LearnerSpec};
use dina::model::{mu, psi, variance};
use dina::simgen::{gen_dataset, SimConfig};
use dina::{Family, Matrix};

fn exp_family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::gaussian()), Just(Family::Bernoulli), Just(Family::Poisson)]
}

fn any_family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::gaussian()),
        Just(Family::Bernoulli),
        Just(Family::Poisson),
        Just(Family::CoxPartial),
        Just(Family::CoxFull(dina::BaselineHazard::linear_hazard())),
    ]
}

fn small_config() -> impl Strategy<Value = SimConfig> {
    (exp_family(), 1usize..4, 60usize..200, any::<u64>(), prop::collection::vec(-0.8f64..0.8, 8)).prop_map(
        |(f, d, n, seed, c)| SimConfig {
            alpha: c[..=d].to_vec(),
            beta: vec![c[4..4 + d.min(3) + 1].iter().copied().chain(std::iter::repeat(0.0)).take(d + 1).collect()],
            propensity: vec![(0..=d).map(|j| if j == 1 { c[7] } else { 0.0 }).collect()],
            seed,
            ..SimConfig::null(n, d, f)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cumulant_is_strictly_convex(f in exp_family(), eta in -30.0f64..30.0) {
        prop_assert!(variance(&f, eta).unwrap() > 0.0);
    }

    #[test]
    fn mean_and_variance_are_cumulant_derivatives(f in exp_family(), eta in -5.0f64..5.0) {
        let h = 1e-4;
        let d1 = (psi(&f, eta + h).unwrap() - psi(&f, eta - h).unwrap()) / (2.0 * h);
        let d2 = (mu(&f, eta + h).unwrap() - mu(&f, eta - h).unwrap()) / (2.0 * h);
        let m = mu(&f, eta).unwrap();
        let v = variance(&f, eta).unwrap();
        prop_assert!((d1 - m).abs() <= 1e-6 * m.abs().max(1e-3));
        prop_assert!((d2 - v).abs() <= 1e-6 * v.abs().max(1e-3));
    }

    #[test]
    fn logit_decomposition(f in prop_oneof![Just(Family::Bernoulli), Just(Family::Poisson)],
                           e in 0.05f64..0.95, h0 in -2.0f64..2.0, t in -1.5f64..1.5) {
        prop_assert!(logit_identity_gap(&f, e, h0, h0 + t) < 1e-10);
    }

    #[test]
    fn blend_stays_in_clip_range(f in exp_family(), e in 0.0f64..1.0, h0 in -8.0f64..8.0, h1 in -8.0f64..8.0) {
        let p = blend_exponential_at(&f, e, h0, h1);
        prop_assert!((0.01..=0.99).contains(&p.a[0]));
        let (lo, hi) = (h0.min(h1), h0.max(h1));
        prop_assert!(p.nu >= lo - 1e-12 && p.nu <= hi + 1e-12);
    }

    #[test]
    fn propensity_is_clipped(cfg in small_config(), scale in 0.0f64..20.0) {
        let mut cfg = cfg;
        cfg.propensity[0][1] = scale;
        let (data, _) = gen_dataset(&cfg).unwrap();
        if let Ok(p) = fit_propensity(&LearnerSpec::Glm, &data.x, &data.w, 2) {
            for r in data.x.iter_rows() {
                let e = p.treated(r);
                prop_assert!((0.01..=0.99).contains(&e), "{e}");
            }
        }
    }

    #[test]
    fn folds_partition_rows(n in 2usize..500, seed in any::<u64>()) {
        let [a, b] = fold_split(n, seed);
        prop_assert_eq!(a.len(), n.div_ceil(2));
        prop_assert_eq!(b.len(), n / 2);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn beta_is_fold_average(cfg in small_config()) {
        let (data, _) = gen_dataset(&cfg).unwrap();
        if let Ok(fit) = fit_dina(&data, &LearnerSpec::Glm, &LearnerSpec::Glm, &DinaOptions::default().with_seed(cfg.seed)) {
            for j in 0..fit.beta.len() {
                prop_assert_eq!(fit.beta[j], (fit.fold_estimates[0][j] + fit.fold_estimates[1][j]) / 2.0);
            }
        }
    }

    #[test]
    fn ground_truth_tau_is_linear(cfg in small_config()) {
        let (data, truth) = gen_dataset(&cfg).unwrap();
        for (i, x) in data.x.iter_rows().enumerate() {
            let b = &cfg.beta[0];
            let t = b[0] + x.iter().zip(&b[1..]).map(|(a, c)| a * c).sum::<f64>();
            prop_assert_eq!(truth.tau[i][0], t);
        }
    }

    #[test]
    fn dataset_csv_round_trips(cfg in small_config(), f in any_family()) {
        let cfg = SimConfig { family: f.clone(), ..cfg };
        let cfg = if f.is_cox() {
            cfg.with_censoring(dina::cox::CensoringMechanism::UniformOn(1.0))
        } else {
            cfg
        };
        let (data, _) = gen_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &f, Some(2)).unwrap();
        prop_assert_eq!(&back.x, &data.x);
        prop_assert_eq!(&back.w, &data.w);
        prop_assert_eq!(&back.y, &data.y);
        prop_assert_eq!(&back.delta, &data.delta);
        prop_assert_eq!(back.n_arms, data.n_arms);
    }

    #[test]
    fn result_rows_round_trip(rows in prop::collection::vec((0usize..5, 1usize..10_000, 0usize..500, -1e6f64..1e6), 0..40)) {
        let names = ["dina", "e", "se", "x", "pax"];
        let rows: Vec<MseRow> = rows
            .into_iter()
            .map(|(m, n, r, v)| MseRow { method: names[m].into(), n, replication: r, mse: v })
            .collect();
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let back: Vec<MseRow> = read_rows(buf.as_slice()).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn r2_is_at_most_one(v in prop::collection::vec(-5.0f64..5.0, 2..50), noise in prop::collection::vec(-1.0f64..1.0, 50)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let est: Vec<f64> = v.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let r = sensitivity_r2(&v, &est).unwrap();
        prop_assert!(r <= 1.0);
        prop_assert_eq!(sensitivity_r2(&v, &v).unwrap(), 1.0);
        if est != v {
            prop_assert!(r < 1.0);
        }
    }

    #[test]
    fn partial_likelihood_ignores_offset_shift(
        times in prop::collection::vec(0.01f64..5.0, 5..40),
        shift in -10.0f64..10.0,
        coef in -1.0f64..1.0,
    ) {
        let n = times.len();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) - 0.5).collect();
        let events: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
        let off: Vec<f64> = (0..n).map(|i| (i % 5) as f64 * 0.1).collect();
        let d = CoxDesign::new(Matrix::new(n, 1, x.clone()).unwrap(), off.clone(), times.clone(), events.clone()).unwrap();
        let shifted: Vec<f64> = off.iter().map(|o| o + shift).collect();
        let s = CoxDesign::new(Matrix::new(n, 1, x).unwrap(), shifted, times, events).unwrap();
        let (a, b) = (cox_partial_loglik(&d, &[coef]).unwrap(), cox_partial_loglik(&s, &[coef]).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn run_config_text_round_trips(
        id in prop::sample::select(ExperimentId::ALL.to_vec()),
        seed in any::<u64>(),
        reps in 1usize..500,
        sizes in prop::collection::vec(10usize..100_000, 1..6),
        partial in any::<bool>(),
        delta in prop::option::of(-3.0f64..3.0),
    ) {
        let mut cfg = RunConfig::new(id);
        cfg.seed = seed;
        cfg.replications = reps;
        cfg.sizes = sizes;
        cfg.overrides.delta = delta;
        if partial {
            cfg.methods.push(MethodSpec::parse("dina-partial").unwrap());
        }
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), cfg.to_text());
        prop_assert_eq!(back.seed, seed);
        prop_assert_eq!(back.overrides.delta, delta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bootstrap_intervals_are_ordered_and_reproducible(cfg in small_config(), seed in any::<u64>()) {
        let (data, _) = gen_dataset(&cfg).unwrap();
        let est = |d: &dina::Dataset| {
            let y = d.y.iter().sum::<f64>() / d.n() as f64;
            Ok(vec![y, d.x.as_slice().iter().sum::<f64>() / d.n() as f64])
        };
        let a = bootstrap_ci(&data, est, 20, 0.9, seed).unwrap();
        let b = bootstrap_ci(&data, est, 20, 0.9, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for j in 0..2 {
            prop_assert!(a.ci_lo[j] <= a.estimate[j] && a.estimate[j] <= a.ci_hi[j]);
        }
    }
}
