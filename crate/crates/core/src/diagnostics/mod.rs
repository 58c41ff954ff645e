//! Post-hoc analysis of training and test outcomes.

pub mod attribution;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attribution::{
    ig_summary, integrated_gradients, IgSummary, InputGradient, ProbeGrid, ProbePoint, QAttribution,
};

/// Position of an IS pair relative to a benchmark point. South-west means
/// both players did strictly better than the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    SW,
    SE,
    NW,
    NE,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::SW, Quadrant::SE, Quadrant::NW, Quadrant::NE];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::SW => "SW",
            Quadrant::SE => "SE",
            Quadrant::NW => "NW",
            Quadrant::NE => "NE",
        }
    }
}

impl std::fmt::Display for Quadrant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// West/south require a strict inequality; ties fall on the east/north side.
pub fn classify_quadrant(is_pair: [f64; 2], benchmark: [f64; 2]) -> Quadrant {
    let west = is_pair[0] < benchmark[0];
    let south = is_pair[1] < benchmark[1];
    match (west, south) {
        (true, true) => Quadrant::SW,
        (false, true) => Quadrant::SE,
        (true, false) => Quadrant::NW,
        (false, false) => Quadrant::NE,
    }
}

/// Share of SW labels in each trailing window; early entries use the available prefix.
pub fn rolling_share(series: &[Quadrant], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("rolling window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut count = 0usize;
    for (i, q) in series.iter().enumerate() {
        count += usize::from(*q == Quadrant::SW);
        if i >= window && series[i - window] == Quadrant::SW {
            count -= 1;
        }
        let len = (i + 1).min(window);
        out.push(count as f64 / len as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    /// Indexed by [`Quadrant::index`].
    pub occupancy: [f64; 4],
    /// Row-normalized transition frequencies; `None` for never-left quadrants.
    pub transitions: [Option<[f64; 4]>; 4],
    pub counts: [[usize; 4]; 4],
}

pub fn transition_stats(series: &[Quadrant]) -> Result<TransitionStats> {
    if series.len() < 2 {
        return Err(Error::Config(
            "transition statistics need at least two episodes".into(),
        ));
    }
    let mut occ = [0.0; 4];
    for q in series {
        occ[q.index()] += 1.0;
    }
    occ.iter_mut().for_each(|v| *v /= series.len() as f64);
    let mut counts = [[0usize; 4]; 4];
    for w in series.windows(2) {
        counts[w[0].index()][w[1].index()] += 1;
    }
    let mut transitions = [None; 4];
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total > 0 {
            let mut r = [0.0; 4];
            for j in 0..4 {
                r[j] = row[j] as f64 / total as f64;
            }
            transitions[i] = Some(r);
        }
    }
    Ok(TransitionStats {
        occupancy: occ,
        transitions,
        counts,
    })
}

/// Statistics over the last `tail` labels.
pub fn tail_transition_stats(series: &[Quadrant], tail: usize) -> Result<TransitionStats> {
    let start = series.len().saturating_sub(tail);
    transition_stats(&series[start..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidDistances {
    /// Per-run centroids in `(IS_0/N, IS_1/N)`.
    pub centroids: Vec<[f64; 2]>,
    pub d_nash: f64,
    pub d_twap: f64,
}

/// Per-player mean of `IS/N` over test episodes.
pub fn centroid(is_pairs: &[[f64; 2]], n_slices: usize) -> Result<[f64; 2]> {
    if is_pairs.is_empty() {
        return Err(Error::Config(
            "centroid needs at least one test episode".into(),
        ));
    }
    let m = is_pairs.len() as f64;
    let n = n_slices as f64;
    Ok([
        is_pairs.iter().map(|p| p[0]).sum::<f64>() / m / n,
        is_pairs.iter().map(|p| p[1]).sum::<f64>() / m / n,
    ])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Run-averaged Euclidean distances of the centroids to the benchmark points
/// (all in `IS/N` units).
pub fn centroid_distances(
    runs: &[Vec<[f64; 2]>],
    n_slices: usize,
    nash: [f64; 2],
    twap: [f64; 2],
) -> Result<CentroidDistances> {
    if runs.is_empty() {
        return Err(Error::Config("no runs to average".into()));
    }
    let centroids = runs
        .iter()
        .map(|r| centroid(r, n_slices))
        .collect::<Result<Vec<_>>>()?;
    let k = centroids.len() as f64;
    Ok(CentroidDistances {
        d_nash: centroids.iter().map(|c| dist(*c, nash)).sum::<f64>() / k,
        d_twap: centroids.iter().map(|c| dist(*c, twap)).sum::<f64>() / k,
        centroids,
    })
}

/// Mean inventory path `q_t, t = 0..=N` over episodes; each input is one
/// episode's path.
pub fn average_inventory_paths(paths: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Config("no paths to average".into()))?;
    if paths.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Shape("inventory paths differ in length".into()));
    }
    let m = paths.len() as f64;
    Ok((0..first.len())
        .map(|t| paths.iter().map(|p| p[t]).sum::<f64>() / m)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Quadrant::*;

    #[test]
    fn quadrant_labels_and_ties() {
        assert_eq!(classify_quadrant([1.0, 1.0], [2.0, 2.0]), SW);
        assert_eq!(classify_quadrant([3.0, 3.0], [2.0, 2.0]), NE);
        assert_eq!(classify_quadrant([3.0, 1.0], [2.0, 2.0]), SE);
        assert_eq!(classify_quadrant([1.0, 3.0], [2.0, 2.0]), NW);
        assert_ne!(classify_quadrant([2.0, 1.0], [2.0, 2.0]), SW);
        assert_ne!(classify_quadrant([1.0, 2.0], [2.0, 2.0]), SW);
    }

    #[test]
    fn rolling_share_cases() {
        assert!(rolling_share(&[SW; 50], 20)
            .unwrap()
            .iter()
            .all(|v| *v == 1.0));
        assert!(rolling_share(&[NE; 50], 20)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let alt: Vec<Quadrant> = (0..60).map(|i| if i % 2 == 0 { SW } else { NE }).collect();
        let r = rolling_share(&alt, 20).unwrap();
        assert!(r[19..].iter().all(|v| (*v - 0.5).abs() < 1e-15));
        assert_eq!(r[0], 1.0);
        assert!(rolling_share(&alt, 0).is_err());
    }

    #[test]
    fn transitions_of_constant_and_cycle() {
        let s = transition_stats(&[NW; 10]).unwrap();
        assert_eq!(s.occupancy, [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.transitions[NW.index()], Some([0.0, 0.0, 1.0, 0.0]));
        assert!(s.transitions[SW.index()].is_none());
        let cyc: Vec<Quadrant> = (0..10).map(|i| if i % 2 == 0 { SW } else { NE }).collect();
        let s = transition_stats(&cyc).unwrap();
        assert_eq!(s.occupancy, [0.5, 0.0, 0.0, 0.5]);
        assert_eq!(s.transitions[SW.index()], Some([0.0, 0.0, 0.0, 1.0]));
        assert_eq!(s.transitions[NE.index()], Some([1.0, 0.0, 0.0, 0.0]));
        assert!(transition_stats(&[SW]).is_err());
    }

    #[test]
    fn distances_and_centroids() {
        let pairs = vec![[130.0, 130.0]; 5];
        let c = centroid(&pairs, 10).unwrap();
        assert_eq!(c, [13.0, 13.0]);
        let d = centroid_distances(&[pairs.clone()], 10, [13.0, 13.0], [13.0, 14.0]).unwrap();
        assert_eq!(d.d_nash, 0.0);
        assert_eq!(d.d_twap, 1.0);
        let moved: Vec<[f64; 2]> = pairs.iter().map(|p| [p[0] + 7.0, p[1] - 3.0]).collect();
        let e = centroid_distances(&[moved], 10, [13.7, 12.7], [13.7, 13.7]).unwrap();
        assert!((e.d_nash - d.d_nash).abs() < 1e-12 && (e.d_twap - d.d_twap).abs() < 1e-12);
    }

    #[test]
    fn average_paths_cases() {
        let twap: Vec<f64> = (0..=10).map(|t| 100.0 - 10.0 * t as f64).collect();
        assert_eq!(
            average_inventory_paths(&[twap.clone(), twap.clone()]).unwrap(),
            twap
        );
        let other: Vec<f64> = (0..=10)
            .map(|t| if t == 10 { 0.0 } else { 100.0 - 5.0 * t as f64 })
            .collect();
        let avg = average_inventory_paths(&[twap, other]).unwrap();
        assert_eq!(avg[0], 100.0);
        assert_eq!(avg[10], 0.0);
    }
}
