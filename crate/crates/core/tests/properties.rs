use std::sync::Arc;

use proptest::prelude::*;

use stochhom::bvp::{solve_eps_problem, AffineDatum, BvpConfig, ForceSpec};
use stochhom::cutoff::{build_cutoff, good_radii, AnnulusData};
use stochhom::discretize::{
    assemble_energy, assemble_energy_gradient, build_mesh, prolongate, Boundary, BoxDomain, DiscreteField, EnergyProblem,
};
use stochhom::homogenize::{averaged_stress, multicell_estimate, CellConfig, CellProblem};
use stochhom::integrand::{
    check_truncation, luxemburg_norm, radial_convex_envelope, Family, IntegrandSpec, MaterialState, RadialFunction,
};
use stochhom::random_field::{realize_window, CellLaw, FieldKind, FieldSpec, Window};
use stochhom::solver::{minimize, SolveOptions};
use stochhom::Mat;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::Quadratic),
        (1.2..4.0f64).prop_map(|p| Family::Power { p }),
        Just(Family::RandomPower),
        (1.2..3.0f64, 1.0..4.0f64).prop_map(|(p, q)| Family::DoublePhase { p, q }),
        (1.2..3.0f64, 1.0..2.0f64).prop_map(|(p, q)| Family::ExpPhase { p, q }),
    ]
}

fn state() -> impl Strategy<Value = MaterialState> {
    (0.0..5.0f64, 1.2..4.0f64).prop_map(|(coeff, exponent)| MaterialState { coeff, exponent })
}

fn positive_state() -> impl Strategy<Value = MaterialState> {
    (0.2..5.0f64, 1.2..4.0f64).prop_map(|(coeff, exponent)| MaterialState { coeff, exponent })
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v).unwrap())
}

/// Integrand, state and two points of matching shape.
fn integrand_case(scale: f64) -> impl Strategy<Value = (IntegrandSpec, MaterialState, Mat, Mat)> {
    (family(), 1..=2usize, 1..=3usize, state()).prop_flat_map(move |(f, m, d, s)| {
        let spec = IntegrandSpec::new(f, m, d).unwrap();
        (Just(spec), Just(s), matrix(m, d, scale), matrix(m, d, scale))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn integrand_is_midpoint_convex((spec, s, a, b) in integrand_case(2.0)) {
        let mid = spec.eval(&s, &a.midpoint(&b)).unwrap();
        let avg = 0.5 * (spec.eval(&s, &a).unwrap() + spec.eval(&s, &b).unwrap());
        prop_assert!(mid <= avg + 1e-12 * (1.0 + avg.abs()), "{mid} > {avg}");
    }

    #[test]
    fn fenchel_young((spec, s, xi, eta) in integrand_case(2.0)) {
        match spec.conjugate(&s, &eta, 1e6) {
            Ok(star) => {
                let w = spec.eval(&s, &xi).unwrap();
                let pairing = xi.dot(&eta);
                prop_assert!(w + star >= pairing - 1e-9 * (1.0 + pairing.abs()), "{w} + {star} < {pairing}");
            }
            // a vanishing coefficient on a pure power leaves the supremum infinite
            Err(stochhom::Error::RadiusTooSmall { .. }) => prop_assert!(s.coeff < 1e-2 || spec.family == Family::RandomPower),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn gradient_matches_central_differences((spec, s, xi, _) in integrand_case(1.5)) {
        prop_assume!(xi.norm() > 0.1);
        let g = spec.grad_xi(&s, &xi).unwrap();
        let h = 1e-6;
        let mut fd = Mat::zeros(xi.rows(), xi.cols());
        for k in 0..xi.len() {
            let mut plus = xi.clone();
            let mut minus = xi.clone();
            plus.as_mut_slice()[k] += h;
            minus.as_mut_slice()[k] -= h;
            fd.as_mut_slice()[k] = (spec.eval(&s, &plus).unwrap() - spec.eval(&s, &minus).unwrap()) / (2.0 * h);
        }
        let err = fd.sub(&g).norm();
        prop_assert!(err <= 1e-5 * (1.0 + g.norm()), "fd {fd:?} vs {g:?}");
    }

    #[test]
    fn radial_envelope_is_a_convex_monotone_minorant(
        steps in prop::collection::vec(0.05..1.0f64, 2..30),
        values in prop::collection::vec(-3.0..3.0f64, 30),
        tail in 0.01..5.0f64,
    ) {
        let mut radii = vec![0.0];
        for s in &steps {
            radii.push(radii.last().unwrap() + s);
        }
        let vals: Vec<f64> = values[..radii.len()].to_vec();
        let ell = RadialFunction::new(radii.clone(), vals, tail).unwrap();
        let env = radial_convex_envelope(&ell, 2).unwrap();
        let r_max = ell.largest_minimizer();
        let top = radii.last().unwrap() + 2.0;
        let grid: Vec<f64> = (0..=400).map(|i| top * i as f64 / 400.0).collect();
        for w in grid.windows(3) {
            let (a, b, c) = (env.eval(w[0]), env.eval(w[1]), env.eval(w[2]));
            prop_assert!(b <= 0.5 * (a + c) + 1e-10, "not convex at {}", w[1]);
            prop_assert!(b >= a - 1e-12, "decreasing at {}", w[1]);
        }
        for &r in &grid {
            prop_assert!(env.eval(r) <= ell.eval(r) + 1e-12);
            if r <= r_max {
                prop_assert_eq!(env.eval(r), ell.min_value());
            }
        }
    }

    #[test]
    fn luxemburg_is_homogeneous_with_unit_modular(
        f in family(),
        states in prop::collection::vec(positive_state(), 6),
        g in prop::collection::vec(-2.0..2.0f64, 6),
        lambda in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
    ) {
        prop_assume!(g.iter().any(|v| v.abs() > 1e-3));
        let spec = IntegrandSpec::scalar(f, 1).unwrap();
        let field: Vec<Mat> = g.iter().map(|&v| Mat::scalar(v)).collect();
        let vols = vec![1.0 / 6.0; 6];
        let n = luxemburg_norm(&spec, &states, &field, &vols);
        let scaled: Vec<Mat> = field.iter().map(|m| m.scaled(lambda)).collect();
        let ns = luxemburg_norm(&spec, &states, &scaled, &vols);
        prop_assert!((ns - lambda.abs() * n).abs() <= 1e-8 * ns.max(1e-300), "{ns} vs {}", lambda.abs() * n);
        let modular: f64 = states.iter().zip(&field).zip(&vols).map(|((s, m), v)| v * spec.profile(s, m.norm() / n)).sum();
        prop_assert!(modular <= 1.0 + 1e-6, "modular {modular}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncations_increase_towards_the_integrand(
        f in family(),
        d in 1..=3usize,
        states in prop::collection::vec(state(), 1..4),
        xis in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 10),
        q_frac in 0.05..0.95f64,
    ) {
        let spec = IntegrandSpec::scalar(f, d).unwrap();
        let q_max = if d == 1 { 4.0 } else { d as f64 / (d as f64 - 1.0) };
        let q = 1.0 + q_frac * (q_max - 1.0);
        let xis: Vec<Mat> = xis.iter().map(|v| Mat::from_vec(1, d, v[..d].to_vec()).unwrap()).collect();
        let report = check_truncation(&spec, &states, &[1, 3, 9, 27], q, &xis).unwrap();
        prop_assert_eq!(report.violations(), 0, "{:?}", report);
    }

    #[test]
    fn sub_windows_reproduce_cell_states(
        seed in any::<u64>(),
        lower in prop::collection::vec(-6i64..0, 2),
        extent in prop::collection::vec(1i64..6, 2),
        offset in prop::collection::vec(0i64..3, 2),
    ) {
        let spec = FieldSpec::new(FieldKind::Checkerboard, CellLaw::Uniform { coeff: Some([0.5, 2.0]), exponent: Some([1.5, 3.0]) }, 2).unwrap();
        let outer = Window { lower: lower.clone(), upper: lower.iter().zip(&extent).map(|(l, e)| l + e + 3).collect() };
        let inner_lower: Vec<i64> = lower.iter().zip(&offset).map(|(l, o)| l + o).collect();
        let inner = Window { upper: inner_lower.iter().zip(&extent).map(|(l, e)| l + e).collect(), lower: inner_lower };
        let big = realize_window(&spec, &outer, seed).unwrap();
        let small = realize_window(&spec, &inner, seed).unwrap();
        for x in inner.lower[0]..inner.upper[0] {
            for y in inner.lower[1]..inner.upper[1] {
                prop_assert_eq!(big.cell(&[x, y]), small.cell(&[x, y]));
            }
        }
    }

    #[test]
    fn energy_gradient_matches_directional_differences(
        (f, m) in (family(), 1..=2usize),
        d in 1..=2usize,
        states in prop::collection::vec(positive_state(), 64),
        xi in prop::collection::vec(-1.0..1.0f64, 4),
        coeffs in prop::collection::vec(-0.3..0.3f64, 4),
        dir in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let mesh = Arc::new(build_mesh(&BoxDomain::unit(d), 4).unwrap());
        let spec = Arc::new(IntegrandSpec::new(f, m, d).unwrap());
        let states: Vec<MaterialState> = (0..mesh.n_elements()).map(|e| states[e % states.len()]).collect();
        let xi = Mat::from_vec(m, d, xi[..m * d].to_vec()).unwrap();
        let problem = EnergyProblem::with_states(mesh.clone(), states, spec, xi, Boundary::Dirichlet).unwrap();
        let bump = |x: &[f64], a: &[f64]| -> Vec<f64> {
            let w: f64 = x.iter().map(|t| (std::f64::consts::PI * t).sin()).product();
            (0..m).map(|c| a[c] * w + a[c + 2] * w * x[0]).collect()
        };
        let u = DiscreteField::from_fn(&mesh, m, |x| bump(x, &coeffs)).constrain_boundary(&mesh);
        let v = DiscreteField::from_fn(&mesh, m, |x| bump(x, &dir));
        let grad = assemble_energy_gradient(&problem, &u).unwrap();
        let analytic: f64 = grad.iter().zip(&v.values).map(|(g, w)| g * w).sum();
        let h = 1e-6;
        let shifted = |s: f64| {
            let mut w = u.clone();
            for (a, b) in w.values.iter_mut().zip(&v.values) {
                *a += s * b;
            }
            assemble_energy(&problem, &w).unwrap()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        prop_assert!((fd - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()), "fd {fd} vs {analytic}");
    }

    #[test]
    fn refinement_preserves_piecewise_affine_energy(
        d in 1..=2usize,
        nodal in prop::collection::vec(-1.0..1.0f64, 25),
        f in family(),
        s in positive_state(),
    ) {
        let coarse = Arc::new(build_mesh(&BoxDomain::unit(d), 4).unwrap());
        let fine = Arc::new(build_mesh(&BoxDomain::unit(d), 8).unwrap());
        let mut u = DiscreteField::zeros(&coarse, 1);
        for (i, v) in u.values.iter_mut().enumerate() {
            *v = nodal[i % nodal.len()];
        }
        let spec = Arc::new(IntegrandSpec::scalar(f, d).unwrap());
        let xi = Mat::zeros(1, d);
        let pc = EnergyProblem::uniform(coarse.clone(), s, spec.clone(), xi.clone(), Boundary::Dirichlet).unwrap();
        let pf = EnergyProblem::uniform(fine.clone(), s, spec, xi, Boundary::Dirichlet).unwrap();
        let ec = assemble_energy(&pc, &u).unwrap();
        let ef = assemble_energy(&pf, &prolongate(&coarse, &u, &fine)).unwrap();
        prop_assert!((ec - ef).abs() <= 1e-12 * (1.0 + ec.abs()), "{ec} vs {ef}");
    }

    #[test]
    fn solver_descends_and_certifies(
        f in prop_oneof![Just(Family::Quadratic), (2.0..4.0f64).prop_map(|p| Family::Power { p })],
        states in prop::collection::vec(positive_state(), 8),
        xi in -1.5..1.5f64,
        start in prop::collection::vec(-0.2..0.2f64, 17),
        probes in prop::collection::vec(prop::collection::vec(-0.5..0.5f64, 17), 20),
    ) {
        let mesh = Arc::new(build_mesh(&BoxDomain::unit(1), 16).unwrap());
        let spec = Arc::new(IntegrandSpec::scalar(f, 1).unwrap());
        let states: Vec<MaterialState> = (0..16).map(|e| states[e / 2]).collect();
        let problem = EnergyProblem::with_states(mesh.clone(), states, spec, Mat::scalar(xi), Boundary::Dirichlet).unwrap();
        let mut u0 = DiscreteField::zeros(&mesh, 1);
        u0.values.copy_from_slice(&start);
        let u0 = u0.constrain_boundary(&mesh);
        let opts = SolveOptions::default();
        let sol = minimize(&problem, &u0, &opts).unwrap();
        prop_assert!(sol.energy <= assemble_energy(&problem, &u0).unwrap());
        // iterates descend up to the round-off of the energy itself
        prop_assert!(sol.history.windows(2).all(|w| w[1].0 <= w[0].0 + 16.0 * f64::EPSILON * w[0].0.abs()));
        if sol.converged {
            prop_assert!(sol.grad_norm <= opts.tol_grad);
        }
        for p in &probes {
            let mut v = DiscreteField::zeros(&mesh, 1);
            v.values.copy_from_slice(p);
            let ev = assemble_energy(&problem, &v.constrain_boundary(&mesh)).unwrap();
            prop_assert!(sol.energy <= ev + opts.tol_energy * (1.0 + ev.abs()), "{} > {ev}", sol.energy);
        }
        let again = minimize(&problem, &u0, &opts).unwrap();
        prop_assert_eq!(again.energy.to_bits(), sol.energy.to_bits());
        prop_assert_eq!(again.u.values, sol.u.values);
    }

    #[test]
    fn cell_values_sit_between_zero_and_the_affine_bound(
        f in family(),
        d in 1..=2usize,
        xi in prop::collection::vec(-1.5..1.5f64, 2),
        seed in any::<u64>(),
        periodic in any::<bool>(),
    ) {
        let config = CellConfig {
            integrand: IntegrandSpec::scalar(f, d).unwrap(),
            field: FieldSpec::new(FieldKind::Checkerboard, CellLaw::Uniform { coeff: Some([0.2, 3.0]), exponent: Some([1.5, 3.0]) }, d).unwrap(),
            bc: if periodic { Boundary::Periodic } else { Boundary::Dirichlet },
            n_per_unit: 2,
            solver: SolveOptions::default(),
        };
        let cp = CellProblem::new(Mat::from_vec(1, d, xi[..d].to_vec()).unwrap(), 2, seed, config).unwrap();
        let r = multicell_estimate(&cp).unwrap();
        prop_assert!(r.value >= 0.0);
        prop_assert!(r.value <= r.upper, "{} > {}", r.value, r.upper);
        if periodic {
            let grads = r.corrector.gradients(&cp.energy_problem().unwrap().mesh);
            let mean: f64 = grads.iter().map(|g| g.as_slice().iter().sum::<f64>()).sum::<f64>() / grads.len() as f64;
            prop_assert!(mean.abs() <= 1e-10, "mean corrector gradient {mean}");
            let _ = averaged_stress;
        }
    }

    #[test]
    fn bvp_solutions_keep_boundary_values_and_beat_the_datum(
        slope in -1.0..1.0f64,
        offset in -1.0..1.0f64,
        force in -2.0..2.0f64,
        seed in any::<u64>(),
    ) {
        let cfg = BvpConfig {
            domain: BoxDomain::unit(2),
            g: AffineDatum { xi: vec![vec![slope, -0.5 * slope]], b: vec![offset] },
            force: ForceSpec::Constant { value: vec![force] },
            eps_list: vec![0.5],
            nodes_per_cell: 2,
            integrand: IntegrandSpec::scalar(Family::DoublePhase { p: 2.0, q: 3.0 }, 2).unwrap(),
            field: FieldSpec::new(FieldKind::Checkerboard, CellLaw::two_phase(0.0, 2.0), 2).unwrap(),
            solver: SolveOptions::default(),
            strict_convexity: false,
            gap_threshold: None,
            exponents: None,
        };
        let sol = solve_eps_problem(&cfg, 0.5, seed).unwrap();
        for node in 0..sol.mesh.n_nodes() {
            if sol.mesh.is_boundary_node(node) {
                let x = sol.mesh.node_coords(node);
                let g = slope * x[0] - 0.5 * slope * x[1] + offset;
                prop_assert_eq!(sol.u.values[node], g);
            }
        }
        prop_assert!(sol.total_energy <= sol.datum_energy);
        if sol.converged {
            prop_assert!(sol.residual <= cfg.solver.tol_grad);
        }
    }
}

fn shell_data(n_fields: usize, shells: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let row = move || {
        prop::collection::vec(prop_oneof![3 => 0.0..1.0f64, 1 => 0.0..100.0f64, 1 => Just(0.0)], shells)
    };
    (
        prop::collection::vec(row(), n_fields),
        prop::collection::vec(row(), n_fields),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn good_radii_cover_half_the_annulus(
        (n, delta, radius) in (1..4usize, 0.05..0.5f64, 0.1..10.0f64),
        data in (1..4usize).prop_flat_map(|n| shell_data(n, 24)),
        p in 1.01..4.0f64,
    ) {
        let _ = n;
        let (grad, value) = data;
        let annulus = AnnulusData::new(radius, delta, vec![0.0, 0.0], grad, value).unwrap();
        let u = good_radii(&annulus, p).unwrap();
        prop_assert!(u.measure >= 0.5 * delta * radius * (1.0 - 1e-12));
        let cutoff = build_cutoff(&annulus.edges, &u, radius, delta).unwrap();
        prop_assert_eq!(cutoff.check_invariants(500), 0);
    }

    #[test]
    fn raising_a_bad_shell_keeps_it_bad(
        data in (1..3usize).prop_flat_map(|n| shell_data(n, 32)),
        field in 0..2usize,
        shell in 0..32usize,
        extra in 0.0..50.0f64,
    ) {
        let (grad, value) = data;
        let field = field % grad.len();
        let annulus = AnnulusData::new(1.0, 0.25, vec![0.0, 0.0], grad.clone(), value.clone()).unwrap();
        let before = good_radii(&annulus, 2.0).unwrap();
        let mut raised = grad;
        raised[field][shell] += extra;
        let after = good_radii(&AnnulusData::new(1.0, 0.25, vec![0.0, 0.0], raised, value).unwrap(), 2.0).unwrap();
        // at least 4N equal shells: each shell is no wider than δR/C
        if !before.good[shell] {
            prop_assert!(!after.good[shell]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn power_biconjugate_recovers_the_integrand(p in 1.5..3.0f64, s in positive_state(), r in 0.0..3.0f64) {
        let spec = IntegrandSpec::scalar(Family::Power { p }, 1).unwrap();
        let w = spec.eval(&s, &Mat::scalar(r)).unwrap();
        let slope = spec.grad_xi(&s, &Mat::scalar(r)).unwrap().as_slice()[0];
        let star = spec.radial_conjugate(&s, slope, 1e6).unwrap();
        let bi = r * slope - star;
        prop_assert!(bi <= w + 1e-9 * (1.0 + w));
        prop_assert!((bi - w).abs() <= 1e-4 * (1.0 + w), "W** {bi} vs W {w}");
    }

    #[test]
    fn mesh_elements_tile_the_box(
        d in 1..=3usize,
        n in 1..=6usize,
        lower in prop::collection::vec(-2.0..0.0f64, 3),
        side in 1..=3usize,
    ) {
        let lo = lower[..d].to_vec();
        let domain = BoxDomain::new(lo.clone(), lo.iter().map(|l| l + side as f64).collect());
        let mesh = build_mesh(&domain, n).unwrap();
        let total = mesh.n_elements() as f64 * mesh.element_volume();
        prop_assert!((total - domain.volume()).abs() <= 1e-12 * domain.volume());
        let weights: f64 = mesh.lumped_weights().iter().sum();
        prop_assert!((weights - domain.volume()).abs() <= 1e-12 * domain.volume());
    }
}
