//! Finite-difference utilities for verifying analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central difference `(f(+eps) - f(-eps)) / 2eps` of a scalar function of a
/// perturbation.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, eps: f64) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}

/// Relative error with an absolute floor so that near-zero gradients are
/// compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub probes: Vec<Probe>,
    /// Coordinates passed over because the stencil straddled a kink.
    pub kinks: Vec<usize>,
}

impl CheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compare `analytic` against central differences of `loss` on `count`
/// randomly chosen coordinates of the flat parameter vector `x0`.
pub fn check_coordinates(
    x0: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    count: usize,
    eps: f64,
    floor: f64,
    seed: u64,
) -> CheckReport {
    assert_eq!(x0.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, x0.len(), count.min(x0.len()));
    let mut work = x0.to_vec();
    let probes = picks
        .into_iter()
        .map(|i| {
            let numeric = central_difference(
                |d| {
                    work[i] = x0[i] + d;
                    let v = loss(&work);
                    work[i] = x0[i];
                    v
                },
                eps,
            );
            Probe {
                coordinate: i,
                analytic: analytic[i],
                numeric,
                rel_error: relative_error(analytic[i], numeric, floor),
            }
        })
        .collect();
    CheckReport { probes, kinks: Vec::new() }
}

/// Like [`check_coordinates`] for piecewise-smooth losses (ReLU, abs).
/// A coordinate whose forward and backward one-sided differences disagree
/// by more than `kink_tol` (relative) has a kink inside `±eps`; it is
/// recorded in `kinks` and another coordinate is drawn, until `count`
/// smooth coordinates are probed or the vector is exhausted.
#[allow(clippy::too_many_arguments)]
pub fn check_smooth_coordinates(
    x0: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    count: usize,
    eps: f64,
    floor: f64,
    kink_tol: f64,
    seed: u64,
) -> CheckReport {
    assert_eq!(x0.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, x0.len(), x0.len());
    let mut work = x0.to_vec();
    let f0 = loss(x0);
    let mut report = CheckReport { probes: Vec::new(), kinks: Vec::new() };
    for i in order {
        if report.probes.len() == count {
            break;
        }
        let mut at = |d: f64| {
            work[i] = x0[i] + d;
            let v = loss(&work);
            work[i] = x0[i];
            v
        };
        let (up, down) = (at(eps), at(-eps));
        let (fwd, bwd) = ((up - f0) / eps, (f0 - down) / eps);
        if relative_error(fwd, bwd, floor) > kink_tol {
            report.kinks.push(i);
            continue;
        }
        let numeric = (up - down) / (2.0 * eps);
        report.probes.push(Probe {
            coordinate: i,
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric, floor),
        });
    }
    report
}
