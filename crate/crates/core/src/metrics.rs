//! Consensus measures on recorded trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId};
use crate::passivity::log_grid;
use crate::sim::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("signal has no samples")]
    EmptySignal,
    #[error("horizon {horizon} lies outside the recorded span [{start}, {end}]")]
    HorizonOutOfRange { horizon: f64, start: f64, end: f64 },
    #[error("graph node {0} has no trajectory column")]
    UnknownNode(NodeId),
    #[error("times and samples differ in length")]
    LengthMismatch,
    #[error("need at least two horizons")]
    TooFewHorizons,
}

/// Running trapezoid integral of `f` over the sample times.
fn cumulative_trapezoid(times: &[f64], f: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; times.len()];
    for k in 1..times.len() {
        acc[k] = acc[k - 1] + 0.5 * (f[k] + f[k - 1]) * (times[k] - times[k - 1]);
    }
    acc
}

/// `∫_{t_0}^{T} f dt` from a cumulative table, interpolating linearly inside
/// the last interval.
fn integral_to(times: &[f64], f: &[f64], cum: &[f64], horizon: f64) -> f64 {
    let k = times.partition_point(|&t| t <= horizon);
    if k == 0 {
        return 0.0;
    }
    let k = k - 1;
    if k + 1 >= times.len() || horizon == times[k] {
        return cum[k];
    }
    let h = horizon - times[k];
    let slope = (f[k + 1] - f[k]) / (times[k + 1] - times[k]);
    cum[k] + h * f[k] + 0.5 * slope * h * h
}

/// `‖x‖_T = (∫_0^T |x(t)|² dt)^{1/2}` by the trapezoid rule on the sample grid.
pub fn truncated_norm<S: AsRef<[f64]>>(times: &[f64], samples: &[S], horizon: f64) -> Result<f64, MetricsError> {
    if times.is_empty() {
        return Err(MetricsError::EmptySignal);
    }
    if times.len() != samples.len() {
        return Err(MetricsError::LengthMismatch);
    }
    let sq: Vec<f64> = samples.iter().map(|s| s.as_ref().iter().map(|v| v * v).sum()).collect();
    norm_of_squares(times, &sq, horizon)
}

fn norm_of_squares(times: &[f64], sq: &[f64], horizon: f64) -> Result<f64, MetricsError> {
    let (start, end) = (times[0], *times.last().unwrap());
    if horizon < start || horizon > end * (1.0 + 1e-12) {
        return Err(MetricsError::HorizonOutOfRange { horizon, start, end });
    }
    let cum = cumulative_trapezoid(times, sq);
    Ok(integral_to(times, sq, &cum, horizon.min(end)).max(0.0).sqrt())
}

/// Per-sample edge differences `Dᵀz(t)` of a node signal.
fn edge_differences(traj: &TrajectoryRecord, graph: &Graph, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MetricsError> {
    let cols = graph
        .edges()
        .iter()
        .map(|e| {
            let p = traj.column(e.plus).ok_or(MetricsError::UnknownNode(e.plus))?;
            let m = traj.column(e.minus).ok_or(MetricsError::UnknownNode(e.minus))?;
            Ok((p, m))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows
        .iter()
        .map(|r| cols.iter().map(|&(p, m)| r[p] - r[m]).collect())
        .collect())
}

/// `|DᵀY(t)|` at every sample.
pub fn disagreement(traj: &TrajectoryRecord, graph: &Graph) -> Result<Vec<f64>, MetricsError> {
    Ok(edge_differences(traj, graph, &traj.y)?
        .iter()
        .map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

/// `50` log-spaced horizons over `[0.1, t_end]`.
pub fn default_horizons(t_end: f64) -> Vec<f64> {
    log_grid(0.1_f64.min(t_end), t_end, 50)
}

/// One horizon of the consensus inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSample {
    pub horizon: f64,
    /// `‖DᵀY‖_T`.
    pub disagreement_norm: f64,
    /// `‖DᵀW‖_T`.
    pub noise_norm: f64,
}

/// A feasible `(ρ, σ)` for `‖DᵀY‖_T ≤ ρ‖DᵀW‖_T + σ` on the sampled horizons.
///
/// This bounds the observed data only; it is not the system's worst-case gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEstimate {
    pub rho_hat: f64,
    pub sigma_hat: f64,
    pub samples: Vec<HorizonSample>,
    pub satisfied: bool,
}

/// Least-squares `ρ̂` (with `σ ≥ 0`, `ρ ≥ 0`), then `σ̂` raised just enough for
/// the inequality to hold at every sampled horizon.
pub fn estimate_io_gain(
    traj: &TrajectoryRecord,
    graph: &Graph,
    horizons: &[f64],
) -> Result<ConsensusEstimate, MetricsError> {
    if horizons.len() < 2 {
        return Err(MetricsError::TooFewHorizons);
    }
    if traj.is_empty() {
        return Err(MetricsError::EmptySignal);
    }
    let sq = |rows: Vec<Vec<f64>>| -> Vec<f64> { rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect() };
    let dy = sq(edge_differences(traj, graph, &traj.y)?);
    let dw = sq(edge_differences(traj, graph, &traj.w)?);
    let samples = horizons
        .iter()
        .map(|&h| {
            Ok(HorizonSample {
                horizon: h,
                disagreement_norm: norm_of_squares(&traj.times, &dy, h)?,
                noise_norm: norm_of_squares(&traj.times, &dw, h)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let (rho_hat, sigma_hat) = fit_gain(&samples);
    let satisfied = rho_hat.is_finite()
        && sigma_hat.is_finite()
        && samples
            .iter()
            .all(|s| s.disagreement_norm <= rho_hat * s.noise_norm + sigma_hat);
    Ok(ConsensusEstimate {
        rho_hat,
        sigma_hat,
        samples,
        satisfied,
    })
}

fn fit_gain(samples: &[HorizonSample]) -> (f64, f64) {
    let n = samples.len() as f64;
    let (a, b): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| (s.noise_norm, s.disagreement_norm)).unzip();
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let det = n * saa - sa * sa;

    let (mut rho, mut sigma) = if det > 1e-12 * (n * saa).max(f64::MIN_POSITIVE) {
        ((n * sab - sa * sb) / det, (saa * sb - sa * sab) / det)
    } else {
        (0.0, sb / n)
    };
    if sigma < 0.0 {
        sigma = 0.0;
        rho = if saa > 0.0 { sab / saa } else { 0.0 };
    }
    if rho < 0.0 {
        rho = 0.0;
        sigma = sb / n;
    }
    let worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| y - rho * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma = sigma.max(worst).max(0.0);
    // absorb rounding in the final comparison
    let slack = a.iter().zip(&b).map(|(x, y)| y - (rho * x + sigma)).fold(0.0, f64::max);
    (rho, sigma + slack)
}

/// Informational analytic gain `1/(κ α̲) + 1` from a certificate.
pub fn analytic_gain(kappa: f64, alpha_lower: f64) -> f64 {
    1.0 / (kappa * alpha_lower) + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(times: Vec<f64>, y: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> TrajectoryRecord {
        let n = y[0].len();
        TrajectoryRecord {
            node_ids: (1..=n as NodeId).collect(),
            u: vec![vec![0.0; n]; times.len()],
            phase: vec![0; times.len()],
            times,
            y,
            w,
        }
    }

    #[test]
    fn constant_signal_norms() {
        let t: Vec<f64> = (0..=40).map(|k| k as f64 * 0.1).collect();
        let ones = vec![[1.0]; t.len()];
        assert!((truncated_norm(&t, &ones, 4.0).unwrap() - 2.0).abs() < 1e-12);
        let pairs = vec![[1.0, 1.0]; t.len()];
        assert!((truncated_norm(&t, &pairs, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ramp_norm_within_trapezoid_bound() {
        let n = 1000;
        let h = 1.0 / n as f64;
        let t: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        let x: Vec<[f64; 1]> = t.iter().map(|&v| [v]).collect();
        let got = truncated_norm(&t, &x, 1.0).unwrap();
        // trapezoid error on ∫t² is h²/6
        let bound = (1.0 / 3.0 + h * h / 6.0).sqrt() - (1.0 / 3.0f64).sqrt();
        assert!((got - 1.0 / 3f64.sqrt()).abs() <= bound + 1e-15);
    }

    #[test]
    fn partial_interval_horizon() {
        let t = vec![0.0, 1.0, 2.0];
        let x = vec![[1.0], [1.0], [1.0]];
        assert!((truncated_norm(&t, &x, 1.5).unwrap() - 1.5f64.sqrt()).abs() < 1e-14);
        assert!(matches!(
            truncated_norm(&t, &x, 3.0),
            Err(MetricsError::HorizonOutOfRange { .. })
        ));
        let empty: Vec<[f64; 1]> = vec![];
        assert_eq!(truncated_norm(&[], &empty, 1.0), Err(MetricsError::EmptySignal));
    }

    #[test]
    fn disagreement_basics() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let r = record(vec![0.0, 1.0], vec![vec![1.0, 0.0]; 2], vec![vec![0.0; 2]; 2]);
        assert_eq!(disagreement(&r, &g).unwrap(), vec![1.0, 1.0]);
        let same = record(vec![0.0, 1.0], vec![vec![0.3, 0.3]; 2], vec![vec![0.0; 2]; 2]);
        assert_eq!(disagreement(&same, &g).unwrap(), vec![0.0, 0.0]);
        let g3 = Graph::new(&[1, 3], &[(1, 3)]).unwrap();
        assert_eq!(disagreement(&r, &g3), Err(MetricsError::UnknownNode(3)));
    }

    #[test]
    fn zero_noise_gives_offset_only() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let t: Vec<f64> = (0..=500).map(|k| k as f64 * 0.01).collect();
        let y = t.iter().map(|&s| vec![(-s).exp(), 0.0]).collect();
        let r = record(t, y, vec![vec![0.0; 2]; 501]);
        let est = estimate_io_gain(&r, &g, &default_horizons(5.0)).unwrap();
        assert_eq!(est.rho_hat, 0.0);
        let sup = est.samples.iter().map(|s| s.disagreement_norm).fold(0.0, f64::max);
        assert!((est.sigma_hat - sup).abs() < 1e-12);
        assert!(est.satisfied);
    }

    #[test]
    fn exact_linear_data_is_recovered() {
        let samples: Vec<HorizonSample> = (1..=10)
            .map(|k| {
                let a = k as f64 * 0.3;
                HorizonSample {
                    horizon: k as f64,
                    noise_norm: a,
                    disagreement_norm: 2.0 * a + 1.0,
                }
            })
            .collect();
        let (rho, sigma) = fit_gain(&samples);
        assert!((rho - 2.0).abs() < 1e-12);
        assert!((sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_horizons() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let r = record(vec![0.0, 1.0], vec![vec![1.0, 0.0]; 2], vec![vec![0.0; 2]; 2]);
        assert_eq!(estimate_io_gain(&r, &g, &[1.0]), Err(MetricsError::TooFewHorizons));
    }
}
