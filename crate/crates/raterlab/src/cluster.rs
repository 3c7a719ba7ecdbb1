//! Clustering of raters in the (bias, consistency) plane, grouped by the
//! center that employs them, plus the Davies-Bouldin index of that grouping.
//!
//! Clusters come from the known center labels; nothing here fits a
//! clustering, it only summarises how separable the labelled groups are.
//! Coordinates are used as-is, without standardisation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rater's coordinates in style space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePoint {
    pub rater_id: String,
    pub center_id: String,
    /// (bias, consistency).
    pub coords: [f64; 2],
}

/// Per-center summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub center_id: String,
    pub n_members: usize,
    pub centroid: [f64; 2],
    /// Maximum member distance to the centroid; 0 for singletons.
    pub radius: f64,
}

/// Distance between two cluster centroids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentroidDistance {
    pub a: String,
    pub b: String,
    pub distance: f64,
}

/// Cluster geometry report, serialised as JSON by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterReport {
    pub n_clusters: usize,
    pub clusters: Vec<ClusterSummary>,
    pub centroid_distances: Vec<CentroidDistance>,
    /// `None` when undefined (fewer than two clusters, or coincident
    /// centroids); `notes` then says why.
    pub db_index: Option<f64>,
    pub notes: Vec<String>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Davies-Bouldin index of clusters given as member coordinate lists.
///
/// `S_i` is the mean member distance to the cluster centroid, `M_ij` the
/// centroid distance; the index is the mean over clusters of
/// `max_{j != i} (S_i + S_j) / M_ij`. Lower is better. Errors with
/// [`Error::Undefined`] when fewer than two clusters are given or any two
/// centroids coincide.
pub fn davies_bouldin(clusters: &[Vec<[f64; 2]>]) -> Result<f64> {
    if clusters.len() < 2 {
        return Err(Error::Undefined(
            "davies-bouldin needs at least two clusters".into(),
        ));
    }
    if clusters.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("empty cluster".into()));
    }
    let centroids: Vec<[f64; 2]> = clusters.iter().map(|c| centroid(c)).collect();
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&centroids)
        .map(|(members, &c)| members.iter().map(|&m| dist(m, c)).sum::<f64>() / members.len() as f64)
        .collect();

    let k = clusters.len();
    let mut total = 0.0f64;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = dist(centroids[i], centroids[j]);
            if m == 0.0 {
                return Err(Error::Undefined(
                    "coincident cluster centroids".into(),
                ));
            }
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

fn centroid(members: &[[f64; 2]]) -> [f64; 2] {
    let n = members.len() as f64;
    let sx = members.iter().map(|m| m[0]).sum::<f64>();
    let sy = members.iter().map(|m| m[1]).sum::<f64>();
    [sx / n, sy / n]
}

/// Groups points by center and reports centroids, radii, pairwise centroid
/// distances and the Davies-Bouldin index. Cluster order is sorted center id.
pub fn cluster_report(points: &[StylePoint]) -> Result<ClusterReport> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no style points".into()));
    }
    for p in points {
        if p.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinates for rater \"{}\"",
                p.rater_id
            )));
        }
    }
    let mut by_center: BTreeMap<&str, Vec<[f64; 2]>> = BTreeMap::new();
    for p in points {
        by_center.entry(&p.center_id).or_default().push(p.coords);
    }

    let mut clusters = Vec::with_capacity(by_center.len());
    for (center_id, members) in &by_center {
        let c = centroid(members);
        let radius = members
            .iter()
            .map(|&m| dist(m, c))
            .fold(0.0f64, f64::max);
        clusters.push(ClusterSummary {
            center_id: (*center_id).to_string(),
            n_members: members.len(),
            centroid: c,
            radius,
        });
    }

    let mut centroid_distances = Vec::new();
    for i in 0..clusters.len() {
        for j in (i + 1)..clusters.len() {
            centroid_distances.push(CentroidDistance {
                a: clusters[i].center_id.clone(),
                b: clusters[j].center_id.clone(),
                distance: dist(clusters[i].centroid, clusters[j].centroid),
            });
        }
    }

    let member_lists: Vec<Vec<[f64; 2]>> = by_center.into_values().collect();
    let mut notes = Vec::new();
    let db_index = match davies_bouldin(&member_lists) {
        Ok(v) => Some(v),
        Err(Error::Undefined(msg)) => {
            notes.push(format!("db_index undefined: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };

    Ok(ClusterReport {
        n_clusters: clusters.len(),
        clusters,
        centroid_distances,
        db_index,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(r: &str, c: &str, x: f64, y: f64) -> StylePoint {
        StylePoint {
            rater_id: r.into(),
            center_id: c.into(),
            coords: [x, y],
        }
    }

    #[test]
    fn db_two_cluster_hand_example() {
        // {(0,0),(2,0)} and {(10,0),(12,0)}: S = 1 each, M = 10, DB = 0.2.
        let clusters = vec![
            vec![[0.0, 0.0], [2.0, 0.0]],
            vec![[10.0, 0.0], [12.0, 0.0]],
        ];
        let db = davies_bouldin(&clusters).unwrap();
        assert!((db - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_undefined() {
        let clusters = vec![vec![[0.0, 0.0], [1.0, 0.0]]];
        assert!(matches!(
            davies_bouldin(&clusters),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn coincident_centroids_are_undefined() {
        // Identical member multisets give identical centroids.
        let clusters = vec![
            vec![[0.0, 0.0], [2.0, 0.0]],
            vec![[0.0, 0.0], [2.0, 0.0]],
        ];
        assert!(matches!(
            davies_bouldin(&clusters),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn report_groups_by_center_with_radii() {
        let points = vec![
            point("r1", "c1", 0.0, 0.0),
            point("r2", "c1", 2.0, 0.0),
            point("r3", "c2", 10.0, 0.0),
            point("r4", "c2", 12.0, 0.0),
            point("r5", "c3", 100.0, 5.0),
        ];
        let rep = cluster_report(&points).unwrap();
        assert_eq!(rep.n_clusters, 3);
        assert_eq!(rep.clusters[0].center_id, "c1");
        assert_eq!(rep.clusters[0].centroid, [1.0, 0.0]);
        assert_eq!(rep.clusters[0].radius, 1.0);
        // Singleton cluster has radius exactly 0.
        assert_eq!(rep.clusters[2].radius, 0.0);
        assert_eq!(rep.centroid_distances.len(), 3);
        assert!(rep.db_index.is_some());
        assert!(rep.notes.is_empty());
    }

    #[test]
    fn report_with_one_center_flags_db() {
        let points = vec![point("r1", "c1", 0.0, 0.0), point("r2", "c1", 1.0, 1.0)];
        let rep = cluster_report(&points).unwrap();
        assert_eq!(rep.db_index, None);
        assert_eq!(rep.notes.len(), 1);
    }

    #[test]
    fn rejects_non_finite_coordinates() {
        let points = vec![point("r1", "c1", f64::NAN, 0.0)];
        assert!(cluster_report(&points).is_err());
    }
}
