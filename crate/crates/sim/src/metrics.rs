//! Per-task outcomes and the three run-level metrics.

use serde::{Deserialize, Serialize};

/// Five-number summary for a boxplot. Quartiles interpolate linearly
/// between order statistics; whiskers reach the most extreme samples within
/// 1.5 IQR of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl BoxSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
        let iqr = q3 - q1;
        let whisker_low = v.iter().copied().find(|x| *x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let whisker_high = v.iter().rev().copied().find(|x| *x <= q3 + 1.5 * iqr).unwrap_or(q3);
        Some(Self {
            n: v.len(),
            median,
            q1,
            q3,
            whisker_low,
            whisker_high,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// What happened to one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub arrival: f64,
    /// Every MB was placed and processed to completion.
    pub completed: bool,
    pub success: bool,
    pub data_size_mb: f64,
    /// MB in subtasks that reached the completed state.
    pub completed_mb: f64,
    /// MB processed by subtasks that were later terminated.
    pub kept_mb: f64,
    /// Accuracy over all processed MB, weighted by MB.
    pub realized_accuracy: Option<f64>,
    pub completion_time: Option<f64>,
    pub involved: Vec<String>,
    pub executors: Vec<String>,
    /// Task-tagged connections still open after reclaim.
    pub open_connections: usize,
}

impl TaskOutcome {
    pub fn utilization(&self) -> Option<f64> {
        (!self.involved.is_empty()).then(|| self.executors.len() as f64 / self.involved.len() as f64)
    }

    pub fn conserved(&self) -> bool {
        (self.completed_mb + self.kept_mb - self.data_size_mb).abs() <= 1e-6 * self.data_size_mb.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub success_rate: f64,
    /// Mean over tasks with at least one involved device; absent when there
    /// are none.
    pub device_utilization: Option<f64>,
    pub completion_times: Vec<f64>,
    pub completion_summary: Option<BoxSummary>,
}

impl RunMetrics {
    pub fn from_outcomes(tasks: &[TaskOutcome]) -> Self {
        let success_rate = if tasks.is_empty() {
            1.0
        } else {
            tasks.iter().filter(|t| t.success).count() as f64 / tasks.len() as f64
        };
        let utils: Vec<f64> = tasks.iter().filter_map(TaskOutcome::utilization).collect();
        let device_utilization = (!utils.is_empty()).then(|| utils.iter().sum::<f64>() / utils.len() as f64);
        let completion_times: Vec<f64> = tasks.iter().filter_map(|t| t.completion_time).collect();
        Self {
            success_rate,
            device_utilization,
            completion_summary: BoxSummary::of(&completion_times),
            completion_times,
        }
    }

    /// Median completion time of the run's completed tasks.
    pub fn median_completion_time(&self) -> Option<f64> {
        self.completion_summary.as_ref().map(|s| s.median)
    }
}
