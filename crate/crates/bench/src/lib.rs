//! Shared fixtures for the benchmarks.

use sbfr_core::oracles::oracle_bounds;
use sbfr_core::{
    closed_form_model, BoundsConfig, BoxRegion, GaussianModel, Lattice, ModelKind,
    PolynomialDensity,
};

/// Brownian motion on `[0, 1]` with linear marginals on the unit interval.
pub struct Fixture {
    pub model: GaussianModel,
    pub rho0: PolynomialDensity,
    pub rho_t: PolynomialDensity,
    pub lattice: Lattice,
    pub bounds: BoundsConfig,
}

pub fn fixture(nodes: usize) -> Fixture {
    let model = closed_form_model(ModelKind::Brownian, 1, 1.0, 0.0, 1.0).unwrap();
    let unit = BoxRegion::cube(1, 0.0, 1.0).unwrap();
    let rho0 = PolynomialDensity::new(unit.clone(), vec![0.6, 0.8]).unwrap();
    let rho_t = PolynomialDensity::new(unit.clone(), vec![1.4, -0.8]).unwrap();
    let lattice = Lattice::uniform(unit, nodes).unwrap();
    let bounds = oracle_bounds(&model, 1.0, &lattice, &lattice, &rho0, &rho_t).unwrap();
    Fixture {
        model,
        rho0,
        rho_t,
        lattice,
        bounds,
    }
}
