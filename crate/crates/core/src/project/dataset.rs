use std::io::Write;
use std::path::Path;

use crate::dsl::PidContext;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub obs: Vec<f64>,
    /// Learner PID context at this step, one entry per PID slot.
    pub ctx: Vec<PidContext<f64>>,
    /// Expert label.
    pub action: Vec<f64>,
    /// Aggregation round that produced the row (1-based).
    pub round: usize,
}

/// Aggregated imitation data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationDataset {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n_slots: usize,
    pub rows: Vec<DatasetRow>,
}

impl ImitationDataset {
    pub fn new(obs_dim: usize, act_dim: usize, n_slots: usize) -> Self {
        ImitationDataset {
            obs_dim,
            act_dim,
            n_slots,
            rows: Vec::new(),
        }
    }

    /// Rows without PID context, e.g. for fitting trees.
    pub fn from_pairs(obs: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        let obs_dim = obs.first().map_or(0, |o| o.len());
        let act_dim = actions.first().map_or(0, |a| a.len());
        let mut ds = ImitationDataset::new(obs_dim, act_dim, 0);
        if obs.len() != actions.len() {
            return Err(Error::Contract("observation and action counts differ".into()));
        }
        for (o, a) in obs.into_iter().zip(actions) {
            ds.push(DatasetRow {
                obs: o,
                ctx: Vec::new(),
                action: a,
                round: 1,
            })?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, row: DatasetRow) -> Result<()> {
        if row.obs.len() != self.obs_dim || row.action.len() != self.act_dim || row.ctx.len() != self.n_slots {
            return Err(Error::Contract(format!(
                "row shape (obs {}, ctx {}, act {}) does not match dataset (obs {}, ctx {}, act {})",
                row.obs.len(),
                row.ctx.len(),
                row.action.len(),
                self.obs_dim,
                self.n_slots,
                self.act_dim
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// A dataset holding the given rows (by index).
    pub fn subset(&self, idx: &[usize]) -> Self {
        ImitationDataset {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            ..ImitationDataset::new(self.obs_dim, self.act_dim, self.n_slots)
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.obs_dim).map(|i| format!("obs_{i}")).collect();
        for k in 0..self.n_slots {
            h.extend([format!("pid{k}_err"), format!("pid{k}_int"), format!("pid{k}_der")]);
        }
        h.extend((0..self.act_dim).map(|j| format!("act_{j}")));
        h.push("round".into());
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# schema=1\n{}", self.header().join(","));
        s.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = r.obs.iter().map(|v| format!("{v:?}")).collect();
            for c in &r.ctx {
                cells.extend([c.error, c.integral, c.derivative].iter().map(|v| format!("{v:?}")));
            }
            cells.extend(r.action.iter().map(|v| format!("{v:?}")));
            cells.push(r.round.to_string());
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}
