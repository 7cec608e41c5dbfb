//! Property tests of the invariants each stage promises.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use proptest::prelude::*;

use sobol_robust::design::evaluate_model;
use sobol_robust::estimators::{bootstrap_std, estimate_indices, NominalIndices};
use sobol_robust::frechet::{build_table, IndicatorWeights};
use sobol_robust::models::FnModel;
use sobol_robust::perturb::reweighted_indices;
use sobol_robust::{
    DerivativeTable, EvalBundle, IndexKind, MarginalDensity, Model, Partition, PerturbationPlan, PerturbedDensity,
    PickFreezeDesign, Target,
};

fn marginal() -> impl Strategy<Value = MarginalDensity> {
    prop_oneof![
        (-5.0..5.0f64, 0.1..4.0f64).prop_map(|(lo, w)| MarginalDensity::uniform(lo, lo + w).unwrap()),
        (-0.2..1.2f64, 0.1..2.0f64).prop_map(|(mu, s)| MarginalDensity::truncated_normal(mu, s, 0.0, 1.0).unwrap()),
        (0.02..0.3f64, 0.7..0.98f64)
            .prop_map(|(a, b)| { MarginalDensity::randomized_support_uniform([0.0, a], [b, 1.0]).unwrap() }),
    ]
}

/// Integral over `[a, b]` in unit coordinates, split at every node of the
/// 2001-point grid so piecewise-linear densities are integrated exactly.
fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(8).unwrap());
    let mut cuts = vec![a];
    cuts.extend((0..=2000).map(|k| k as f64 / 2000.0).filter(|x| *x > a && *x < b));
    cuts.push(b);
    cuts.windows(2).map(|w| rule.integrate(w[0], w[1], &f)).sum()
}

fn weights_for(bundle: &EvalBundle, margins: &[MarginalDensity], partition: &Partition) -> IndicatorWeights {
    IndicatorWeights::new(bundle, margins, partition).unwrap()
}

struct Fixture {
    margins: Arc<Vec<MarginalDensity>>,
    partition: Arc<Partition>,
    bundle: EvalBundle,
    weights: IndicatorWeights,
    nominal: NominalIndices,
    table: DerivativeTable,
}

fn fixture(margins: Vec<MarginalDensity>, m: usize, n: usize, seed: u64, f: impl Fn(&[f64]) -> f64 + Sync) -> Fixture {
    let p = margins.len();
    let partition = Partition::quantile(&margins, m).unwrap();
    let design = PickFreezeDesign::generate(&margins, n, seed).unwrap();
    let bundle = evaluate_model(&design, &FnModel::new(p, "prop", f)).unwrap();
    let weights = weights_for(&bundle, &margins, &partition);
    let nominal = estimate_indices(&bundle).unwrap();
    let table = build_table(&bundle, &weights, &partition, &nominal);
    Fixture {
        margins: Arc::new(margins),
        partition: Arc::new(partition),
        bundle,
        weights,
        nominal,
        table,
    }
}

fn interacting(x: &[f64]) -> f64 {
    2.0 * x[1] * (-2.0 * x[0]).exp() + x[2] * x[2] + 0.5 * x[0] * x[2]
}

fn pick(ix: &NominalIndices, kind: IndexKind, k: usize) -> f64 {
    match kind {
        IndexKind::First => ix.s[k],
        IndexKind::Total => ix.t[k],
    }
}

fn kind_of(first: bool) -> IndexKind {
    if first {
        IndexKind::First
    } else {
        IndexKind::Total
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cell_infimum_bounds_density(m in marginal(), cells in 2usize..12) {
        let axis = m.quantile_partition(cells).unwrap();
        for j in 0..axis.len() {
            let (a, b) = axis.cell(j);
            let inf = m.cell_infimum(a, b);
            prop_assert!(inf >= 0.0);
            for t in 0..=1000 {
                let x = a + (b - a) * t as f64 / 1000.0;
                prop_assert!(inf <= m.pdf(x).unwrap(), "cell {j}: inf {inf} > pdf({x})");
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf(m in marginal()) {
        for t in 0..=200 {
            let q = t as f64 / 200.0;
            let x = m.quantile(q).unwrap();
            prop_assert!((m.cdf(x) - q).abs() <= 1e-6);
        }
    }

    #[test]
    fn quantile_cells_carry_equal_mass(m in marginal(), cells in 2usize..12) {
        let axis = m.quantile_partition(cells).unwrap();
        let widths: f64 = (0..axis.len()).map(|j| axis.width(j)).sum();
        prop_assert!((widths - 1.0).abs() < 1e-12);
        for j in 0..axis.len() {
            let (a, b) = axis.cell(j);
            prop_assert!(b > a);
            let mass = quad(|x| m.pdf(x).unwrap(), a, b);
            prop_assert!((mass - 1.0 / cells as f64).abs() <= 1e-6, "cell {j} mass {mass}");
        }
    }

    #[test]
    fn unit_density_integrates_to_one(m in marginal()) {
        let mass = quad(|x| m.pdf(x).unwrap(), 0.0, 1.0);
        prop_assert!((mass - 1.0).abs() <= 1e-8);
        let (lo, hi) = m.support();
        let physical = quad(|x| m.pdf_physical(lo + x * (hi - lo)).unwrap() * (hi - lo), 0.0, 1.0);
        prop_assert!((physical - 1.0).abs() <= 1e-8);
        for t in 0..=50 {
            let x = t as f64 / 50.0;
            prop_assert!((m.to_unit(m.to_physical(x)) - x).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn c_rows_reproduce_stored_outputs(seed in any::<u64>(), p in 2usize..5, n in 2usize..40) {
        let margins = vec![MarginalDensity::uniform(0.0, 1.0).unwrap(); p];
        let design = PickFreezeDesign::generate(&margins, n, seed).unwrap();
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.sin()).product::<f64>() + x[0];
        let model = FnModel::new(p, "rows", f);
        let bundle = evaluate_model(&design, &model).unwrap();
        prop_assert_eq!(bundle.model_evaluations(), ((p + 2) * n) as u64);
        for k in 0..p {
            for r in 0..n {
                let row = design.c_row(k, r);
                prop_assert_eq!(model.evaluate(&row).unwrap(), bundle.f_c(k)[r]);
                for (i, v) in row.iter().enumerate() {
                    let expect = if i == k { design.b(r, i) } else { design.a(r, i) };
                    prop_assert_eq!(*v, expect);
                }
            }
        }
    }

    #[test]
    fn affine_output_maps_leave_indices_unchanged(
        seed in any::<u64>(),
        c in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64],
        d in -1e3..1e3f64,
    ) {
        let margins = vec![MarginalDensity::uniform(0.0, 1.0).unwrap(); 3];
        let design = PickFreezeDesign::generate(&margins, 300, seed).unwrap();
        let base = evaluate_model(&design, &FnModel::new(3, "f", interacting)).unwrap();
        let scaled = evaluate_model(&design, &FnModel::new(3, "g", move |x: &[f64]| c * interacting(x) + d)).unwrap();
        let (a, b) = (estimate_indices(&base).unwrap(), estimate_indices(&scaled).unwrap());
        for k in 0..3 {
            prop_assert!((a.s[k] - b.s[k]).abs() <= 1e-9 * (1.0 + a.s[k].abs()), "S {} vs {}", a.s[k], b.s[k]);
            prop_assert!((a.t[k] - b.t[k]).abs() <= 1e-9 * (1.0 + a.t[k].abs()), "T {} vs {}", a.t[k], b.t[k]);
        }
    }

    #[test]
    fn estimator_matches_compensated_recomputation(seed in any::<u64>(), n in 50usize..500) {
        let margins = vec![MarginalDensity::uniform(0.0, 1.0).unwrap(); 3];
        let design = PickFreezeDesign::generate(&margins, n, seed).unwrap();
        let bundle = evaluate_model(&design, &FnModel::new(3, "f", interacting)).unwrap();
        let fast = estimate_indices(&bundle).unwrap();

        // Neumaier summation, rows visited in reverse.
        let mean = |it: &mut dyn Iterator<Item = f64>| {
            let (mut s, mut comp, mut count) = (0.0f64, 0.0f64, 0usize);
            for x in it {
                let t = s + x;
                comp += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
                s = t;
                count += 1;
            }
            (s + comp) / count as f64
        };
        let shift = mean(&mut bundle.f_a().iter().rev().copied());
        let ga: Vec<f64> = bundle.f_a().iter().map(|v| v - shift).collect();
        let gb: Vec<f64> = bundle.f_b().iter().map(|v| v - shift).collect();
        let m = mean(&mut ga.iter().rev().copied());
        let h = mean(&mut ga.iter().rev().map(|v| v * v)) - m * m;
        for k in 0..3 {
            let gc: Vec<f64> = bundle.f_c(k).iter().map(|v| v - shift).collect();
            let f = mean(&mut (0..n).rev().map(|r| gb[r] * (gc[r] - ga[r])));
            let g = mean(&mut (0..n).rev().map(|r| 0.5 * (ga[r] - gc[r]).powi(2)));
            prop_assert!((f / h - fast.s[k]).abs() <= 1e-12 * (f / h).abs().max(1e-3));
            prop_assert!((g / h - fast.t[k]).abs() <= 1e-12 * (g / h).abs().max(1e-3));
        }
        prop_assert!((h - fast.var_f).abs() <= 1e-12 * h);
    }

    #[test]
    fn uniform_null_sums_vanish(seed in any::<u64>(), m in 2usize..10) {
        let fx = fixture(vec![MarginalDensity::uniform(0.0, 1.0).unwrap(); 3], m, 400, seed, interacting);
        for k in 0..3 {
            for kind in [IndexKind::First, IndexKind::Total] {
                for row in fx.table.rows(kind, k) {
                    let sum: f64 = row.iter().sum();
                    prop_assert!(sum.abs() <= 1e-10 * (1.0 + fx.nominal.s[k].abs()), "sum {sum}");
                }
            }
        }
    }

    #[test]
    fn derivative_is_linear_in_direction(
        seed in any::<u64>(),
        i in 0usize..3,
        j1 in 0usize..6,
        j2 in 0usize..6,
        c1 in -1.0..1.0f64,
        c2 in -1.0..1.0f64,
        k in 0usize..3,
        first in any::<bool>(),
    ) {
        prop_assume!(j1 != j2 && (c1.abs() + c2.abs()) > 0.1);
        let margins = vec![MarginalDensity::truncated_normal(0.4, 0.5, 0.0, 1.0).unwrap(); 3];
        let fx = fixture(margins, 6, 400, seed, interacting);
        let kind = kind_of(first);
        let mut a: Vec<Vec<f64>> = vec![vec![0.0; 6]; 3];
        a[i][j1] = c1;
        a[i][j2] = c2;
        let mut dw = vec![0.0; 3];
        dw[i] = 1.0;
        let plan = PerturbationPlan::from_parts(Target::new(kind, k), a, dw, fx.margins.clone(), fx.partition.clone()).unwrap();
        let step = 1e-4;
        let at = |d: f64| {
            let pd = PerturbedDensity::new(&plan, d).unwrap();
            pick(&reweighted_indices(&fx.bundle, &fx.weights, &pd).unwrap(), kind, k)
        };
        let fd = (at(step) - at(-step)) / (2.0 * step);
        let combined = c1 * fx.table.entry(kind, k, i, j1) + c2 * fx.table.entry(kind, k, i, j2);
        prop_assert!((fd - combined).abs() <= 1e-6 * combined.abs().max(1e-6), "fd {fd} vs {combined}");
    }
}

fn perturb_fixture(seed: u64) -> Fixture {
    let margins = vec![
        MarginalDensity::uniform(0.0, 1.0).unwrap(),
        MarginalDensity::truncated_normal(0.3, 0.4, 0.0, 1.0).unwrap(),
        MarginalDensity::randomized_support_uniform([0.0, 0.1], [0.9, 1.0]).unwrap(),
    ];
    fixture(margins, 8, 500, seed, interacting)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perturbed_marginals_are_densities(seed in any::<u64>(), k in 0usize..3, first in any::<bool>(), frac in -1.0..=1.0f64) {
        let fx = perturb_fixture(seed);
        let target = Target::new(kind_of(first), k);
        let plan = PerturbationPlan::solve_optimal_direction(&fx.table, fx.margins.clone(), fx.partition.clone(), target).unwrap();
        let pd = PerturbedDensity::new(&plan, frac * plan.delta_bar()).unwrap();
        for i in 0..3 {
            for t in 0..=2000 {
                prop_assert!(pd.pdf(i, t as f64 / 2000.0).unwrap() >= 0.0);
            }
            let edges = fx.partition.axis(i).edges();
            let mass: f64 = edges
                .windows(2)
                .map(|w| quad(|x| pd.pdf(i, x).unwrap(), w[0], w[1]))
                .sum();
            prop_assert!((mass - 1.0).abs() <= 1e-10, "coordinate {i} mass {mass}");
        }
    }

    #[test]
    fn extreme_perturbation_stays_in_unit_ball(seed in any::<u64>(), k in 0usize..3, first in any::<bool>()) {
        let fx = perturb_fixture(seed);
        let plan = PerturbationPlan::solve_optimal_direction(
            &fx.table, fx.margins.clone(), fx.partition.clone(), Target::new(kind_of(first), k),
        ).unwrap();
        let delta = plan.delta_bar();
        for (i, m) in fx.margins.iter().enumerate() {
            let axis = fx.partition.axis(i);
            for t in 1..2000 {
                let x = t as f64 / 2000.0;
                let phi = m.pdf(x).unwrap();
                let psi = plan.coefficients()[i][axis.locate(x)];
                let v = (delta * plan.delta_weights()[i] * psi / phi).abs();
                prop_assert!(v <= 1.0 + 1e-12, "coordinate {i} at {x}: {v}");
            }
        }
    }

    #[test]
    fn closed_form_direction_is_optimal(seed in any::<u64>(), k in 0usize..3, first in any::<bool>(), trial_seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let fx = perturb_fixture(seed);
        let target = Target::new(kind_of(first), k);
        let plan = PerturbationPlan::solve_optimal_direction(&fx.table, fx.margins.clone(), fx.partition.clone(), target).unwrap();
        let rows = fx.table.rows(target.kind, target.k);
        let objective = |b: &[Vec<f64>]| -> f64 {
            b.iter().zip(rows).map(|(bi, ei)| bi.iter().zip(ei).map(|(b, e)| b * e).sum::<f64>()).sum::<f64>().abs()
        };
        let best = objective(plan.coefficients());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(trial_seed);
        for _ in 0..1000 {
            let b: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    let axis = fx.partition.axis(i);
                    (0..axis.len())
                        .map(|j| {
                            let (lo, hi) = axis.cell(j);
                            fx.margins[i].cell_infimum(lo, hi) * rng.random_range(-1.0..=1.0)
                        })
                        .collect()
                })
                .collect();
            prop_assert!(objective(&b) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_magnitude_reproduces_nominal(seed in any::<u64>(), k in 0usize..3, first in any::<bool>()) {
        let fx = perturb_fixture(seed);
        let plan = PerturbationPlan::solve_optimal_direction(
            &fx.table, fx.margins.clone(), fx.partition.clone(), Target::new(kind_of(first), k),
        ).unwrap();
        let pd = PerturbedDensity::new(&plan, 0.0).unwrap();
        prop_assert_eq!(reweighted_indices(&fx.bundle, &fx.weights, &pd).unwrap(), fx.nominal.clone());
    }

    #[test]
    fn small_perturbations_move_target_first_order(seed in any::<u64>(), k in 0usize..3, first in any::<bool>(), frac in 0.01..0.1f64, positive in any::<bool>()) {
        let fx = perturb_fixture(seed);
        let kind = kind_of(first);
        let plan = PerturbationPlan::solve_optimal_direction(
            &fx.table, fx.margins.clone(), fx.partition.clone(), Target::new(kind, k),
        ).unwrap();
        let delta = if positive { frac } else { -frac } * plan.delta_bar();
        let pd = PerturbedDensity::new(&plan, delta).unwrap();
        let moved = pick(&reweighted_indices(&fx.bundle, &fx.weights, &pd).unwrap(), kind, k) - pick(&fx.nominal, kind, k);
        let predicted = delta * plan.linear_objective(&fx.table);
        let (std_s, std_t, _) = bootstrap_std(&fx.bundle, 32, seed).unwrap();
        let std = if first { std_s[k] } else { std_t[k] };
        if predicted.abs() >= 2.0 * std {
            prop_assert_eq!(moved.signum(), predicted.signum());
        }
    }
}

#[test]
fn additive_model_has_no_interaction_gap() {
    use sobol_robust::estimators::estimate_with_bootstrap;
    let margins = vec![MarginalDensity::uniform(0.0, 1.0).unwrap(); 4];
    let design = PickFreezeDesign::generate(&margins, 5000, 42).unwrap();
    let f = |x: &[f64]| x[0] + 2.0 * x[1] * x[1] + (3.0 * x[2]).sin() + 0.5 * x[3];
    let bundle = evaluate_model(&design, &FnModel::new(4, "additive", f)).unwrap();
    let (est, _) = estimate_with_bootstrap(&bundle, 64, 42).unwrap();
    for k in 0..4 {
        let spread = est.std_s[k].hypot(est.std_t[k]);
        assert!(
            (est.s[k] - est.t[k]).abs() <= 4.0 * spread,
            "k={k}: S {} T {}",
            est.s[k],
            est.t[k]
        );
    }
}

proptest! {
    #[test]
    fn linear_model_is_affine_per_coordinate(x in prop::collection::vec(0.0..1.0f64, 10), i in 0usize..10, h in 0.01..0.3f64) {
        use sobol_robust::{ModelKind, ModelSpec, UnitCubeMap};
        let model = ModelSpec::new(ModelKind::reference_linear(), UnitCubeMap::new(vec![(0.0, 1.0); 10]).unwrap()).unwrap();
        let at = |d: f64| {
            let mut y = x.clone();
            y[i] = (y[i] * 0.4) + d;
            model.evaluate(&y).unwrap()
        };
        let (f0, f1, f2) = (at(0.0), at(h), at(2.0 * h));
        prop_assert!(((f1 - f0) - (f2 - f1)).abs() <= 1e-12);
    }
}
