use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbfr_core::oracles::{grid_fixed_point_from, oracle_bounds};
use sbfr_core::regression::Estimator;
use sbfr_core::solver::marginal_residuals;
use sbfr_core::{
    apply_c_hat, closed_form_model, grid_fixed_point, hilbert_distance, l1_normalize, picard_solve,
    BoxRegion, Diffusion, GaussianModel, GridProblem, Lattice, LatticeFunction, ModelKind,
    PolynomialDensity, SolverConfig,
};

struct Fixture {
    model: GaussianModel,
    rho0: PolynomialDensity,
    rho_t: PolynomialDensity,
    lattice: Lattice,
    problem: GridProblem,
}

fn fixture() -> Fixture {
    let model = closed_form_model(ModelKind::Brownian, 1, 1.0, 0.0, 1.0).unwrap();
    let unit = BoxRegion::cube(1, 0.0, 1.0).unwrap();
    let rho0 = PolynomialDensity::new(unit.clone(), vec![0.6, 0.8]).unwrap();
    let rho_t = PolynomialDensity::new(unit.clone(), vec![1.4, -0.8]).unwrap();
    let lattice = Lattice::uniform(unit, 64).unwrap();
    let problem = GridProblem::from_model(&model, 1.0, &lattice, &lattice, &rho0, &rho_t).unwrap();
    Fixture {
        model,
        rho0,
        rho_t,
        lattice,
        problem,
    }
}

fn solver_config(f: &Fixture, n: usize, seed: u64) -> SolverConfig {
    let bounds = oracle_bounds(&f.model, 1.0, &f.lattice, &f.lattice, &f.rho0, &f.rho_t).unwrap();
    SolverConfig::new(n, bounds, seed)
}

#[test]
fn grid_solution_solves_the_system_from_any_start() {
    let f = fixture();
    let tol = 1e-12;
    let reference = grid_fixed_point(&f.problem, tol, 1000).unwrap();
    let (r0, rt) = f.problem.system_residuals(&reference.nu0, &reference.nu_t);
    assert!(r0 < 10.0 * tol && rt < 10.0 * tol, "residuals {r0} {rt}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let g0: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..10.0)).collect();
        let sol = grid_fixed_point_from(&f.problem, g0, tol, 1000).unwrap();
        let d = sbfr_core::hilbert::hilbert_distance_values(&sol.g, &reference.g).unwrap();
        assert!(d < 10.0 * tol, "d_H = {d}");
    }
}

#[test]
fn grid_oracle_is_a_fixed_point_of_the_estimated_operator_in_the_limit() {
    let f = fixture();
    let star = grid_fixed_point(&f.problem, 1e-13, 1000).unwrap();
    let g_star = LatticeFunction::new(f.lattice.clone(), star.g).unwrap();
    let mut gaps = Vec::new();
    for n in [1000, 16_000] {
        let config = solver_config(&f, n, 21);
        let sol = picard_solve(&f.model, &f.rho0, &f.rho_t, &config).unwrap();
        let est = Estimator::new(&sol.clouds, &f.rho0, &f.rho_t, config.bounds, config.mode)
            .unwrap()
            .with_exact(f.model.transition());
        let image = apply_c_hat(&est, &f.lattice, &g_star).unwrap();
        gaps.push(hilbert_distance(&image, &g_star).unwrap());
    }
    println!("fixed-point gaps {gaps:?}");
    assert!(gaps[1] < gaps[0]);
    assert!(gaps[1] < 0.15);
}

#[test]
fn solver_error_shrinks_with_cloud_size() {
    let f = fixture();
    let star = grid_fixed_point(&f.problem, 1e-13, 1000).unwrap();
    let g_star = LatticeFunction::new(f.lattice.clone(), star.g).unwrap();
    let mean_error = |n: usize| {
        let errs: Vec<f64> = (0..4)
            .map(|s| {
                let sol = picard_solve(&f.model, &f.rho0, &f.rho_t, &solver_config(&f, n, 100 + s))
                    .unwrap();
                let (a, _) = l1_normalize(&sol.g_hat).unwrap();
                let (b, _) = l1_normalize(&g_star).unwrap();
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let (small, large) = (mean_error(500), mean_error(8000));
    println!("sup errors {small} {large}");
    assert!(large < small);
}

#[test]
fn solution_respects_bounds_and_normalization() {
    let f = fixture();
    let config = solver_config(&f, 2000, 3);
    let sol = picard_solve(&f.model, &f.rho0, &f.rho_t, &config).unwrap();
    let (lo, hi) = (config.bounds.g_star_min(), config.bounds.g_star_max());
    assert!(sol.g_hat.values().iter().all(|&v| lo <= v && v <= hi));
    assert!(sol.trace.clamped.iter().all(|&c| c == 0));
    assert!((sol.g_hat.integral() - 1.0).abs() < 1e-12);
    assert!(sol
        .nu_0
        .values()
        .iter()
        .chain(sol.nu_t.values())
        .all(|&v| v > 0.0));
    assert!(sol.trace.straddles.iter().all(|&s| s));
    assert!(sol.converged);
}

#[test]
fn grid_potentials_have_small_monte_carlo_residuals() {
    let f = fixture();
    let star = grid_fixed_point(&f.problem, 1e-13, 1000).unwrap();
    let nu0 = LatticeFunction::new(f.lattice.clone(), star.nu0).unwrap();
    let nu_t = LatticeFunction::new(f.lattice.clone(), star.nu_t).unwrap();
    let coarse = Lattice::uniform(BoxRegion::cube(1, 0.0, 1.0).unwrap(), 9).unwrap();
    let nu0_coarse = LatticeFunction::from_fn(coarse.clone(), |x| nu0.eval(x)).unwrap();
    let nu_t_coarse = LatticeFunction::from_fn(coarse, |z| nu_t.eval(z)).unwrap();
    let res = marginal_residuals(
        &f.model,
        &nu0_coarse,
        &nu_t_coarse,
        &f.rho0,
        &f.rho_t,
        4000,
        32,
        1,
    )
    .unwrap();
    println!("{res:?}");
    assert!(res.start_mean < 0.05 && res.end_mean < 0.05, "{res:?}");
}
