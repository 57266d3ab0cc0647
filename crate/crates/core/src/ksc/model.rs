use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{centroid_growth, Init, ksc_cluster, Clustering, KscError, KscParams, Result};
use crate::ingest::RepoName;
use crate::timeseries::WindowedSeries;

pub const CLUSTER_MODEL_FORMAT: &str = "stargaze-clusters/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub repo: RepoName,
    pub cluster: usize,
}

/// A KSC clustering of named repositories, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub format: String,
    pub k: usize,
    pub seed: u64,
    pub q_max: usize,
    pub max_iter: usize,
    pub restarts: usize,
    #[serde(default)]
    pub init: Init,
    pub window: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<ClusterAssignment>,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn new(repos: &[RepoName], clustering: Clustering) -> Self {
        assert_eq!(repos.len(), clustering.assignment.len());
        let window = clustering.centroids.first().map_or(0, Vec::len);
        ClusterModel {
            format: CLUSTER_MODEL_FORMAT.to_string(),
            k: clustering.k(),
            seed: clustering.params.seed,
            q_max: clustering.params.q_max,
            max_iter: clustering.params.max_iter,
            restarts: clustering.params.restarts,
            init: clustering.params.init,
            window,
            assignment: repos
                .iter()
                .zip(&clustering.assignment)
                .map(|(r, &c)| ClusterAssignment {
                    repo: r.clone(),
                    cluster: c,
                })
                .collect(),
            centroids: clustering.centroids,
            objective: clustering.objective,
            objective_trace: clustering.trace,
            iterations: clustering.iterations,
            converged: clustering.converged,
        }
    }

    pub fn lookup(&self) -> HashMap<&RepoName, usize> {
        self.assignment.iter().map(|a| (&a.repo, a.cluster)).collect()
    }

    pub fn cluster_of(&self, repo: &RepoName) -> Option<usize> {
        self.assignment
            .iter()
            .find(|a| &a.repo == repo)
            .map(|a| a.cluster)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for a in &self.assignment {
            s[a.cluster] += 1;
        }
        s
    }

    /// Percentage growth of each centroid from the first to the last week.
    pub fn growth_pct(&self) -> Vec<f64> {
        self.centroids
            .iter()
            .map(|c| 100.0 * centroid_growth(c))
            .collect()
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn read_json<R: Read>(r: R) -> std::result::Result<Self, String> {
        let m: ClusterModel = serde_json::from_reader(r).map_err(|e| e.to_string())?;
        if m.format != CLUSTER_MODEL_FORMAT {
            return Err(format!(
                "unsupported cluster model format {:?}, expected {CLUSTER_MODEL_FORMAT:?}",
                m.format
            ));
        }
        if m.centroids.len() != m.k || m.assignment.iter().any(|a| a.cluster >= m.k) {
            return Err("cluster model is internally inconsistent".into());
        }
        Ok(m)
    }
}

/// Clusters windowed series by the shape of their star totals across the
/// window.
pub fn cluster_dataset(series: &[WindowedSeries], params: &KscParams) -> Result<ClusterModel> {
    let vectors: Vec<Vec<f64>> = series.iter().map(WindowedSeries::totals).collect();
    let clustering = ksc_cluster(&vectors, params).map_err(|e| match e {
        KscError::ZeroVector { index } => KscError::InvalidParameter(format!(
            "{} has no stars in the window",
            series[index].repo
        )),
        other => other,
    })?;
    let repos: Vec<RepoName> = series.iter().map(|s| s.repo.clone()).collect();
    Ok(ClusterModel::new(&repos, clustering))
}
