use std::fmt::Write as _;

use crate::contexts::ContextBundle;
use crate::error::{KalmError, Result};
use crate::model::DocResult;

/// Bin edges `e1 < … < ek` give the bins `(-inf, e1), [e1, e2), …, [ek, inf)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bins {
    edges: Vec<usize>,
}

impl Bins {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KalmError::Config(format!("bin edges {edges:?} are not strictly increasing")));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, v: usize) -> usize {
        self.edges.partition_point(|&e| e <= v)
    }

    pub fn label(&self, i: usize) -> String {
        let lo = if i == 0 { "-inf".to_string() } else { self.edges[i - 1].to_string() };
        let hi = if i == self.edges.len() { "inf".to_string() } else { self.edges[i].to_string() };
        format!("[{lo};{hi})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cell {
    pub support: usize,
    pub correct: usize,
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        (self.support > 0).then(|| self.correct as f64 / self.support as f64)
    }
}

/// Accuracy binned by paragraph count (rows) and mentioned-entity count (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub length_bins: Bins,
    pub entity_bins: Bins,
    pub cells: Vec<Vec<Cell>>,
}

pub fn error_grid(results: &[DocResult], bundles: &[ContextBundle], length_bins: Bins, entity_bins: Bins) -> Result<ErrorGrid> {
    let mut cells = vec![vec![Cell::default(); entity_bins.len()]; length_bins.len()];
    for r in results {
        let b = bundles
            .get(r.index)
            .ok_or_else(|| KalmError::Input(format!("document index {} out of range", r.index)))?;
        let cell = &mut cells[length_bins.index(b.n_paragraphs)][entity_bins.index(b.n_mentioned)];
        cell.support += 1;
        if r.prediction.class == r.label {
            cell.correct += 1;
        }
    }
    Ok(ErrorGrid {
        length_bins,
        entity_bins,
        cells,
    })
}

impl ErrorGrid {
    pub fn total_support(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.support).sum()
    }

    /// Support-weighted mean of the bin accuracies.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total_support();
        (total > 0).then(|| {
            self.cells
                .iter()
                .flatten()
                .filter_map(|c| c.accuracy().map(|a| a * c.support as f64))
                .sum::<f64>()
                / total as f64
        })
    }

    /// `length_bin,entity_bin,support,accuracy`; empty bins leave accuracy blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length_bin,entity_bin,support,accuracy\n");
        for (i, row) in self.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let acc = c.accuracy().map(|a| a.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{acc}",
                    self.length_bins.label(i),
                    self.entity_bins.label(j),
                    c.support
                );
            }
        }
        out
    }
}
