use hca_core::alignment::align_factors;
use hca_core::completion::{nnr_complete, MaskedMatrix, NnrConfig};
use hca_core::ingest::{self, LeaderboardSchema, RuleSet};
use hca_core::scaling::{ate_backdoor, sigmoid_fit, SigmoidFitConfig};
use hca_core::seed;
use hca_core::subspace::{basis_distance, subspace_distance, pca, Scaling};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, s: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(s, &[stream]);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("b{i}")).collect()
}

/// Benchmarks that are noisy linear functions of three latent factors.
fn factor_data(s: u64, rows: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = gaussian(rows, 3, s, 0);
    let x = &z * gaussian(3, 5, s, 1) + gaussian(rows, 5, s, 2) * 0.3;
    (z, x)
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn alignment_ignores_row_order_and_factor_scale(s in 0u64..1000, scales in prop::array::uniform3(0.2f64..5.0), flip in any::<[bool; 3]>()) {
        let (z, x) = factor_data(s, 120);
        let (_, base) = align_factors(&z, &x, &names(5), None).unwrap();

        let mut order: Vec<usize> = (0..120).collect();
        order.shuffle(&mut seed::rng(s, &[7]));
        let zp = DMatrix::from_fn(120, 3, |i, j| z[(order[i], j)] * scales[j] * if flip[j] { -1.0 } else { 1.0 });
        let xp = DMatrix::from_fn(120, 5, |i, j| x[(order[i], j)]);
        let (_, moved) = align_factors(&zp, &xp, &names(5), None).unwrap();
        for (a, b) in base.factors.iter().zip(&moved.factors) {
            prop_assert_eq!(a.benchmark_index, b.benchmark_index);
            prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9);
        }
        prop_assert!((base.r_squared.clone() - moved.r_squared.clone()).amax() < 1e-9);
    }

    #[test]
    fn alignment_is_idempotent(s in 0u64..1000) {
        let (z, x) = factor_data(s, 150);
        let (once, r1) = align_factors(&z, &x, &names(5), None).unwrap();
        let (twice, r2) = align_factors(&once, &x, &names(5), None).unwrap();
        prop_assert!((&once - &twice).amax() < 1e-8 * (1.0 + once.amax()));
        for (a, b) in r1.factors.iter().zip(&r2.factors) {
            prop_assert_eq!(a.benchmark_index, b.benchmark_index);
            prop_assert!(b.predecessor_coefficients.iter().all(|c| c.abs() < 1e-8));
        }
    }

    #[test]
    fn subspace_distance_ignores_the_basis(s in 0u64..1000, n in 3usize..8, r in 1usize..3) {
        let a = gaussian(n, r, s, 0);
        let mix = DMatrix::identity(r, r) + gaussian(r, r, s, 1) * 0.3;
        prop_assume!(mix.clone().svd(false, false).singular_values.min() > 0.1);
        prop_assert!(basis_distance(&a, &(&a * mix)).unwrap() < 1e-10);
        let b = gaussian(n, r, s, 2);
        let ab = basis_distance(&a, &b).unwrap();
        prop_assert!((ab - basis_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn pca_subspace_is_translation_invariant(s in 0u64..1000, shift in -50.0f64..50.0) {
        let x = gaussian(60, 5, s, 0) * gaussian(5, 5, s, 1);
        let moved = x.map(|v| v + shift);
        let a = pca(&x, 2, Scaling::Raw).unwrap();
        let b = pca(&moved, 2, Scaling::Raw).unwrap();
        prop_assert!(subspace_distance(&a, &b).unwrap() < 1e-8);
        let total: f64 = a.explained_variance_ratios.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn soft_impute_objective_never_increases(s in 0u64..1000, frac in 0.05f64..1.5, hide in 0.1f64..0.7) {
        let x = gaussian(30, 2, s, 0) * gaussian(2, 8, s, 1) + gaussian(30, 8, s, 2) * 0.05;
        let mut rng = seed::rng(s, &[3]);
        let obs = DMatrix::from_fn(30, 8, |_, _| rng.random::<f64>() >= hide);
        let m = MaskedMatrix::new(x.clone(), obs.clone()).unwrap();
        let sigma = x.clone().svd(false, false).singular_values.max();
        let r = nnr_complete(&m, frac * sigma * 0.1, &NnrConfig::default()).unwrap();
        for w in r.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "{} -> {}", w[0], w[1]);
        }
        for (i, &o) in obs.iter().enumerate() {
            if o {
                prop_assert_eq!(r.completed[i], x[i]);
            }
        }
    }

    #[test]
    fn parameter_range_is_inclusive(p in prop_oneof![Just(9.0), Just(9.5), 8.0f64..10.5]) {
        let rules = RuleSet::default_rules();
        let row = ingest::LeaderboardRow {
            model_name: "someone/gemma-2-9b-tuned".into(),
            declared_base: None,
            architecture: None,
            parameter_count: Some(p),
            upload_date: None,
            is_moe: None,
            fine_tuned: None,
            scores: vec![],
        };
        let got = ingest::attribute_base_model(&row, &rules);
        prop_assert_eq!(got.is_some(), (9.0..=9.5).contains(&p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn sigmoid_fit_is_equivariant_in_compute_scale(s in 0u64..1000, log_scale in -3.0f64..3.0) {
        let mut rng = seed::rng(s, &[]);
        let (l, k, c0, b, tau) = (0.6, 1.2, 1e23, 0.1, 0.05);
        let mut c = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let ci = 10f64.powf(rng.random_range(21.0..25.0));
            let ti = (i % 2) as f64;
            c.push(ci);
            t.push(ti);
            y.push(l * logistic(k * (ci.ln() - f64::ln(c0))) + b + tau * ti);
        }
        let scale = 10f64.powf(log_scale);
        let cs: Vec<f64> = c.iter().map(|v| v * scale).collect();
        let cfg = SigmoidFitConfig::default();
        let f1 = sigmoid_fit(&c, &t, &y, &cfg).unwrap();
        let f2 = sigmoid_fit(&cs, &t, &y, &cfg).unwrap();
        for (a, b) in [(f1.l, f2.l), (f1.k, f2.k), (f1.b, f2.b), (f1.tau, f2.tau)] {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        prop_assert!((f2.log_c0 - f1.log_c0 - scale.ln()).abs() < 1e-6);
    }
}

const BOARD_HEADER: &str = "fullname,Architecture,#Params (B),IFEval,BBH,MATH Lvl 5,GPQA,MUSR,MMLU-PRO";

fn board_lines() -> Vec<String> {
    let models = [
        ("google/gemma-2-9b-it", "Gemma2ForCausalLM", 9.24),
        ("a/gemma-2-9b-x", "Gemma2ForCausalLM", 9.24),
        ("google/gemma-2-2b-it", "Gemma2ForCausalLM", 2.61),
        ("b/tiny", "Qwen2ForCausalLM", 0.49),
        ("c/tiny-2", "Qwen2ForCausalLM", 0.5),
        ("d/unknown", "GPT2LMHeadModel", 0.1),
        ("Qwen/Qwen2.5-7B-Instruct", "Qwen2ForCausalLM", 7.62),
    ];
    models
        .iter()
        .enumerate()
        .map(|(i, (m, a, p))| {
            let v = 0.1 + 0.05 * i as f64;
            format!("{m},{a},{p},{v},{v},{v},{v},{v},{v}")
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn grouping_does_not_depend_on_row_order(s in 0u64..1000) {
        let rules = RuleSet::default_rules();
        let schema = LeaderboardSchema::default();
        let group = |lines: &[String]| {
            let text = format!("{BOARD_HEADER}\n{}\n", lines.join("\n"));
            let board = ingest::parse_leaderboard_str(&text, &schema).unwrap();
            let attr: Vec<_> = board.rows.iter().map(|r| ingest::attribute_base_model(r, &rules)).collect();
            let mut per_model: Vec<(String, Option<String>)> = board
                .rows
                .iter()
                .zip(&attr)
                .map(|(r, a)| (r.model_name.clone(), a.as_ref().map(|a| a.base_model_id.clone())))
                .collect();
            per_model.sort();
            let g = ingest::group_domains(&board, &attr, 1).unwrap();
            (per_model, g.included)
        };
        let lines = board_lines();
        let mut shuffled = lines.clone();
        shuffled.shuffle(&mut seed::rng(s, &[]));
        prop_assert_eq!(group(&lines), group(&shuffled));
    }
}

#[test]
fn confounded_treatment_effect_is_recovered() {
    // treatment is far more likely at high compute, so the naive contrast
    // absorbs the compute effect
    let mut rng = seed::rng(11, &[]);
    let (l, k, c0, b, tau) = (0.5, 1.5, 1e23, 0.1, 0.07);
    let mut c = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    for _ in 0..400 {
        let lc = rng.random_range(21.0..25.0) * 10f64.ln();
        let p = logistic(2.0 * (lc - f64::ln(c0)));
        let ti = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let e: f64 = rng.sample(StandardNormal);
        c.push(lc.exp());
        t.push(ti);
        y.push(l * logistic(k * (lc - f64::ln(c0))) + b + tau * ti + 0.01 * e);
    }
    let fit = sigmoid_fit(&c, &t, &y, &SigmoidFitConfig::default()).unwrap();
    let x: Vec<f64> = c.iter().map(|v| v.ln()).collect();
    let r = ate_backdoor(&y, &t, &x, &fit, 5).unwrap();
    assert!((r.ate - tau).abs() < 0.01, "ate {}", r.ate);
    assert!(r.naive > tau + 0.1, "naive {}", r.naive);
    assert!((r.stratified.unwrap() - tau).abs() < (r.naive - tau).abs());
    assert!(r.warning.contains("ignorability"));
}
