//! Derivative-free minimization: multi-start Nelder–Mead over the
//! unconstrained transform of the variance parameters.
//!
//! The variance parameters live on a constrained domain (positive variances,
//! correlation inside its family's interval), so the optimizer works on a
//! bijectively transformed copy: `log` for the variances, `atanh` for the AR1
//! correlation on (−1, 1), and a logit for the compound-symmetric
//! correlation on (0, 1).

use crate::dataset::CorrFamily;
use crate::lmm::VarianceParams;
use thiserror::Error;

/// Errors from the optimizer and parameter transforms.
#[derive(Debug, Error)]
pub enum OptimError {
    #[error("optim: objective is not finite at start {start_index}")]
    NonFiniteObjective { start_index: usize },
    #[error("optim: no result converged within {max_iter} iterations across {starts} starts")]
    DidNotConverge { starts: usize, max_iter: usize },
    #[error("optim: problem needs at least one start point")]
    NoStarts,
    #[error("optim: start {start_index} has dimension {got}, expected {expected}")]
    DimensionMismatch { start_index: usize, got: usize, expected: usize },
    #[error("optim: {name} = {value} is on or outside the open domain {domain}")]
    Domain { name: &'static str, value: f64, domain: &'static str },
}

/// A minimization problem: an objective over `dim`-vectors, one or more
/// start points, and stopping controls.
pub struct OptimProblem<F: Fn(&[f64]) -> f64> {
    pub objective: F,
    pub dim: usize,
    pub starts: Vec<Vec<f64>>,
    /// Relative tolerance on both simplex diameter and value spread.
    pub tol_rel: f64,
    /// Iteration budget per start.
    pub max_iter: usize,
}

impl<F: Fn(&[f64]) -> f64> OptimProblem<F> {
    /// Problem with the default tolerances: `tol_rel = 1e-8`,
    /// `max_iter = 2000` per start.
    pub fn new(objective: F, starts: Vec<Vec<f64>>) -> Self {
        let dim = starts.first().map_or(0, Vec::len);
        OptimProblem { objective, dim, starts, tol_rel: 1e-8, max_iter: 2000 }
    }
}

/// Result of [`minimize`]: the best point found, its value, the total
/// iteration count across starts, and whether the winning start converged.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize by Nelder–Mead from every start and keep the best converged
/// result.
///
/// Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5;
/// the initial simplex perturbs each coordinate by `max(0.1, 0.1·|x₀ᵢ|)`.
/// A start counts as converged when both the simplex diameter and the
/// spread of vertex values fall below `tol_rel` on a relative scale. The
/// returned value never exceeds the objective at any start, and the outcome
/// does not depend on the order of the starts.
///
/// ```
/// use longmix::optim::{minimize, OptimProblem};
/// let r = minimize(&OptimProblem::new(|x: &[f64]| (x[0] - 2.0).powi(2), vec![vec![0.0]]))
///     .unwrap();
/// assert!((r.argmin[0] - 2.0).abs() < 1e-6);
/// ```
pub fn minimize<F: Fn(&[f64]) -> f64>(problem: &OptimProblem<F>) -> Result<OptimResult, OptimError> {
    if problem.starts.is_empty() {
        return Err(OptimError::NoStarts);
    }
    for (i, s) in problem.starts.iter().enumerate() {
        if s.len() != problem.dim {
            return Err(OptimError::DimensionMismatch {
                start_index: i,
                got: s.len(),
                expected: problem.dim,
            });
        }
        if !(problem.objective)(s).is_finite() {
            return Err(OptimError::NonFiniteObjective { start_index: i });
        }
    }
    let mut total_iterations = 0;
    let mut best: Option<OptimResult> = None;
    for start in &problem.starts {
        let run = nelder_mead(
            &problem.objective,
            start,
            problem.tol_rel,
            problem.max_iter,
        );
        total_iterations += run.iterations;
        // Converged runs outrank non-converged ones; then lower value; exact
        // ties break lexicographically so start order cannot affect the
        // outcome.
        let better = match &best {
            None => true,
            Some(cur) if run.converged != cur.converged => run.converged,
            Some(cur) if run.value != cur.value => run.value < cur.value,
            Some(cur) => run.argmin < cur.argmin,
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = total_iterations;
    if !best.converged {
        return Err(OptimError::DidNotConverge {
            starts: problem.starts.len(),
            max_iter: problem.max_iter,
        });
    }
    Ok(best)
}

/// One Nelder–Mead run from a single start.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    tol_rel: f64,
    max_iter: usize,
) -> OptimResult {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const BETA: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink
    let n = start.len();
    // Initial simplex: the start plus one perturbed vertex per coordinate.
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    verts.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += (0.1f64).max(0.1 * v[i].abs());
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // Order vertices best → worst.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        // Convergence: simplex diameter and value spread, relative scale.
        let x_scale = 1.0 + verts[best].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let f_scale = 1.0 + vals[best].abs();
        let diameter = verts
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&verts[best])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0f64, f64::max);
        let spread = vals[worst] - vals[best];
        if diameter <= tol_rel * x_scale && spread.abs() <= tol_rel * f_scale {
            converged = true;
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (vi, v) in verts.iter().enumerate() {
            if vi != worst {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x;
                }
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&verts[worst])
            .map(|(c, w)| c + ALPHA * (c - w))
            .collect();
        let f_reflect = f(&reflect);
        if f_reflect < vals[best] {
            // Try to expand past the reflection.
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&reflect)
                .map(|(c, r)| c + GAMMA * (r - c))
                .collect();
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                verts[worst] = expand;
                vals[worst] = f_expand;
            } else {
                verts[worst] = reflect;
                vals[worst] = f_reflect;
            }
        } else if f_reflect < vals[second_worst] {
            verts[worst] = reflect;
            vals[worst] = f_reflect;
        } else {
            // Contract toward the better of worst/reflection, else shrink.
            let (toward, f_toward) = if f_reflect < vals[worst] {
                (&reflect, f_reflect)
            } else {
                (&verts[worst], vals[worst])
            };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(toward)
                .map(|(c, t)| c + BETA * (t - c))
                .collect();
            let f_contract = f(&contract);
            if f_contract <= f_toward {
                verts[worst] = contract;
                vals[worst] = f_contract;
            } else {
                let best_v = verts[best].clone();
                for (vi, v) in verts.iter_mut().enumerate() {
                    if vi != best {
                        for (x, b) in v.iter_mut().zip(&best_v) {
                            *x = b + SIGMA * (*x - b);
                        }
                        vals[vi] = f(v);
                    }
                }
            }
        }
    }
    let best_idx = (0..=n)
        .min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap();
    OptimResult {
        argmin: verts[best_idx].clone(),
        value: vals[best_idx],
        iterations,
        converged,
    }
}

// ---------------------------------------------------------------------------
// Variance-parameter transforms
// ---------------------------------------------------------------------------

/// Map variance parameters to the unconstrained optimization scale:
/// `(log σ_b², log σ_ε², link(ρ))` with `atanh` for AR1 and a (0, 1) logit
/// for compound symmetry; the Independent family drops ρ.
///
/// Boundary values (zero variances, |ρ| at the domain edge) are rejected:
/// the transform is only a bijection on the open domain.
pub fn to_unconstrained(vp: &VarianceParams, family: CorrFamily) -> Result<Vec<f64>, OptimError> {
    if !(vp.sigma_b2 > 0.0) {
        return Err(OptimError::Domain {
            name: "sigma_b2",
            value: vp.sigma_b2,
            domain: "(0, inf)",
        });
    }
    if !(vp.sigma_e2 > 0.0) {
        return Err(OptimError::Domain {
            name: "sigma_e2",
            value: vp.sigma_e2,
            domain: "(0, inf)",
        });
    }
    let mut out = vec![vp.sigma_b2.ln(), vp.sigma_e2.ln()];
    match family {
        CorrFamily::Independent => {}
        CorrFamily::Ar1 => {
            let rho = vp.rho.ok_or(OptimError::Domain {
                name: "rho",
                value: f64::NAN,
                domain: "(-1, 1)",
            })?;
            if !(rho > -1.0 && rho < 1.0) {
                return Err(OptimError::Domain { name: "rho", value: rho, domain: "(-1, 1)" });
            }
            out.push(rho.atanh());
        }
        CorrFamily::CompoundSymmetric => {
            let rho = vp.rho.ok_or(OptimError::Domain {
                name: "rho",
                value: f64::NAN,
                domain: "(0, 1)",
            })?;
            if !(rho > 0.0 && rho < 1.0) {
                return Err(OptimError::Domain { name: "rho", value: rho, domain: "(0, 1)" });
            }
            out.push((rho / (1.0 - rho)).ln());
        }
    }
    Ok(out)
}

/// Inverse of [`to_unconstrained`]; total on all of ℝ^dim.
pub fn from_unconstrained(x: &[f64], family: CorrFamily) -> VarianceParams {
    let sigma_b2 = x[0].exp();
    let sigma_e2 = x[1].exp();
    match family {
        CorrFamily::Independent => VarianceParams::independent(sigma_b2, sigma_e2),
        CorrFamily::Ar1 => VarianceParams::with_rho(sigma_b2, sigma_e2, x[2].tanh()),
        CorrFamily::CompoundSymmetric => {
            // Logistic, evaluated stably for large |x|.
            let rho = if x[2] >= 0.0 {
                1.0 / (1.0 + (-x[2]).exp())
            } else {
                let e = x[2].exp();
                e / (1.0 + e)
            };
            VarianceParams::with_rho(sigma_b2, sigma_e2, rho)
        }
    }
}

/// Round-trip a parameter set through the transform; identity to ~1e-12 on
/// the open domain.
pub fn transform_roundtrip(
    vp: &VarianceParams,
    family: CorrFamily,
) -> Result<VarianceParams, OptimError> {
    Ok(from_unconstrained(&to_unconstrained(vp, family)?, family))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn quadratic_minimum() {
        let p = OptimProblem::new(|x: &[f64]| (x[0] - 2.0) * (x[0] - 2.0), vec![vec![0.0]]);
        let r = minimize(&p).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.argmin[0], 2.0, epsilon = 1e-6);
        assert!(r.value < 1e-12);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let rosen = |x: &[f64]| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let p = OptimProblem::new(rosen, vec![vec![-1.2, 1.0]]);
        let r = minimize(&p).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.argmin[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.argmin[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn multi_start_finds_global_branch() {
        // Two minima: value 0 near x = −1, value ≈ 1 near x = +1.
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.5 * (x[0] + 1.0);
        let p = OptimProblem::new(f, vec![vec![0.9], vec![-1.1]]);
        let r = minimize(&p).unwrap();
        assert!(r.argmin[0] < -0.9, "should settle in the −1 branch, got {}", r.argmin[0]);
        assert!(r.value < 0.01);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |x: &[f64]| x[0].ln(); // −inf/NaN for x ≤ 0
        let p = OptimProblem::new(f, vec![vec![1.0], vec![-1.0]]);
        match minimize(&p) {
            Err(OptimError::NonFiniteObjective { start_index }) => assert_eq!(start_index, 1),
            other => panic!("expected NonFiniteObjective, got {other:?}"),
        }
    }

    #[test]
    fn exhausted_budget_is_an_error() {
        let rosen = |x: &[f64]| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let mut p = OptimProblem::new(rosen, vec![vec![-1.2, 1.0]]);
        p.max_iter = 3;
        assert!(matches!(minimize(&p), Err(OptimError::DidNotConverge { .. })));
    }

    #[test]
    fn result_never_exceeds_best_start() {
        let f = |x: &[f64]| x[0].powi(4) - 3.0 * x[0] * x[0] + x[0];
        let starts = vec![vec![2.0], vec![-2.0], vec![0.3]];
        let best_start = starts.iter().map(|s| f(s)).fold(f64::INFINITY, f64::min);
        let r = minimize(&OptimProblem::new(f, starts)).unwrap();
        assert!(r.value <= best_start);
    }

    #[test]
    fn start_order_does_not_matter() {
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.5 * (x[0] + 1.0);
        let fwd = minimize(&OptimProblem::new(f, vec![vec![0.9], vec![-1.1]])).unwrap();
        let rev = minimize(&OptimProblem::new(f, vec![vec![-1.1], vec![0.9]])).unwrap();
        assert_eq!(fwd.argmin, rev.argmin);
        assert_eq!(fwd.value, rev.value);
    }

    #[test]
    fn more_budget_never_hurts() {
        let rosen = |x: &[f64]| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let mut short = OptimProblem::new(rosen, vec![vec![-1.2, 1.0], vec![2.0, 2.0]]);
        short.max_iter = 400;
        let mut long = OptimProblem::new(rosen, vec![vec![-1.2, 1.0], vec![2.0, 2.0]]);
        long.max_iter = 800;
        let (a, b) = (minimize(&short).unwrap(), minimize(&long).unwrap());
        assert!(b.value <= a.value);
    }

    // ---- transforms --------------------------------------------------------

    #[test]
    fn ar1_roundtrip_fixed_points() {
        let vp = VarianceParams::with_rho(1.0, 1.0, 0.0);
        let back = transform_roundtrip(&vp, CorrFamily::Ar1).unwrap();
        assert_eq!(back.rho, Some(0.0));
        let vp = VarianceParams::with_rho(0.04, 0.01, 0.5);
        let back = transform_roundtrip(&vp, CorrFamily::Ar1).unwrap();
        assert_abs_diff_eq!(back.sigma_b2, 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(back.sigma_e2, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(back.rho.unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cs_roundtrip_uses_logit() {
        let vp = VarianceParams::with_rho(0.5, 2.0, 0.85);
        let x = to_unconstrained(&vp, CorrFamily::CompoundSymmetric).unwrap();
        assert_abs_diff_eq!(x[2], (0.85f64 / 0.15).ln(), epsilon = 1e-12);
        let back = from_unconstrained(&x, CorrFamily::CompoundSymmetric);
        assert_abs_diff_eq!(back.rho.unwrap(), 0.85, epsilon = 1e-12);
        // The CS inverse always lands in (0, 1).
        let neg = from_unconstrained(&[0.0, 0.0, -40.0], CorrFamily::CompoundSymmetric);
        assert!(neg.rho.unwrap() > 0.0 && neg.rho.unwrap() < 1e-15);
    }

    #[test]
    fn independent_family_is_two_dimensional() {
        let vp = VarianceParams::independent(0.3, 0.7);
        let x = to_unconstrained(&vp, CorrFamily::Independent).unwrap();
        assert_eq!(x.len(), 2);
        let back = from_unconstrained(&x, CorrFamily::Independent);
        assert_eq!(back.rho, None);
    }

    #[test]
    fn boundary_values_rejected() {
        let vp = VarianceParams::with_rho(1.0, 1.0, 1.0);
        assert!(matches!(
            to_unconstrained(&vp, CorrFamily::Ar1),
            Err(OptimError::Domain { name: "rho", .. })
        ));
        let vp = VarianceParams::with_rho(0.0, 1.0, 0.5);
        assert!(matches!(
            to_unconstrained(&vp, CorrFamily::Ar1),
            Err(OptimError::Domain { name: "sigma_b2", .. })
        ));
        let vp = VarianceParams::with_rho(1.0, 1.0, 0.0);
        assert!(matches!(
            to_unconstrained(&vp, CorrFamily::CompoundSymmetric),
            Err(OptimError::Domain { name: "rho", .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(
            sb2 in 1e-6f64..100.0,
            se2 in 1e-6f64..100.0,
            rho in -0.999f64..0.999,
        ) {
            let vp = VarianceParams::with_rho(sb2, se2, rho);
            let back = transform_roundtrip(&vp, CorrFamily::Ar1).unwrap();
            prop_assert!((back.sigma_b2 - sb2).abs() <= 1e-12 * sb2.max(1.0));
            prop_assert!((back.sigma_e2 - se2).abs() <= 1e-12 * se2.max(1.0));
            prop_assert!((back.rho.unwrap() - rho).abs() <= 1e-12);
            if rho > 0.001 {
                let back = transform_roundtrip(&vp, CorrFamily::CompoundSymmetric).unwrap();
                prop_assert!((back.rho.unwrap() - rho).abs() <= 1e-12);
            }
        }
    }
}
