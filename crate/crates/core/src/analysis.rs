//! Cosine similarity between slots' aggregated key prefixes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Schema, Vocab};
use crate::error::{contract_err, Error, Result};
use crate::prompter::{aggregate_key_prefixes, slot_prefixes};
use crate::transformer::Model;

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Undefined("cosine of a zero vector".into()));
    }
    Ok(dot / (nu * nv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major, `rows.len() × cols.len()`.
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Pairwise cosine between labelled vectors.
    pub fn from_vectors(rows: &[(String, Vec<f64>)], cols: &[(String, Vec<f64>)]) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() {
            return Err(contract_err!("similarity needs nonempty target and source lists"));
        }
        let values = rows
            .iter()
            .map(|(_, u)| cols.iter().map(|(_, v)| cosine(u, v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows: rows.iter().map(|(n, _)| n.clone()).collect(),
            cols: cols.iter().map(|(n, _)| n.clone()).collect(),
            values,
        })
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|c| c == col)?;
        Some(self.values[i][j])
    }

    /// Column labels of the `k` largest entries of a row, largest first;
    /// ties go to the earlier column.
    pub fn top_k_in_row(&self, row: &str, k: usize) -> Vec<&str> {
        let Some(i) = self.rows.iter().position(|r| r == row) else { return Vec::new() };
        let mut idx: Vec<usize> = (0..self.cols.len()).collect();
        idx.sort_by(|&a, &b| self.values[i][b].total_cmp(&self.values[i][a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|j| self.cols[j].as_str()).collect()
    }

    /// Row labels of the `k` largest entries of a column.
    pub fn top_k_in_col(&self, col: &str, k: usize) -> Vec<&str> {
        let Some(j) = self.cols.iter().position(|c| c == col) else { return Vec::new() };
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.values[b][j].total_cmp(&self.values[a][j]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| self.rows[i].as_str()).collect()
    }

    /// Each side ranks the other among its `k` most similar.
    pub fn mutual_top_k(&self, row: &str, col: &str, k: usize) -> bool {
        self.top_k_in_row(row, k).contains(&col) && self.top_k_in_col(col, k).contains(&row)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot");
        for c in &self.cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, vals) in self.rows.iter().zip(&self.values) {
            out.push_str(r);
            for v in vals {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse { path: "<csv>".into(), line, msg: msg.into() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let cols: Vec<String> = header.split(',').skip(1).map(String::from).collect();
        let (mut rows, mut values) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            rows.push(cells.next().unwrap_or_default().to_string());
            let vals = cells.map(|c| c.parse::<f64>()).collect::<Result<Vec<_>, _>>();
            let vals = vals.map_err(|_| bad(i + 2, "non-numeric cell"))?;
            if vals.len() != cols.len() {
                return Err(bad(i + 2, "row width differs from header"));
            }
            values.push(vals);
        }
        Ok(Self { rows, cols, values })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes") + "\n"
    }
}

pub fn export_similarity_csv(matrix: &SimilarityMatrix, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, matrix.to_csv().as_bytes())
}

pub fn export_similarity_json(matrix: &SimilarityMatrix, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, matrix.to_json().as_bytes())
}

/// Aggregated key-prefix vector of every listed slot.
pub fn slot_vectors(model: &Model<f32>, schema: &Schema, vocab: &Vocab, slots: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    slots
        .par_iter()
        .map(|id| {
            let s = schema.get(id).ok_or_else(|| contract_err!("unknown slot {id}"))?;
            let set = slot_prefixes(model, id, &vocab.tokenize(&s.description))?;
            Ok((id.clone(), aggregate_key_prefixes(&set)?))
        })
        .collect()
}

/// Cosine similarity of aggregated key prefixes, targets × sources.
pub fn prefix_similarity_matrix(
    model: &Model<f32>,
    schema: &Schema,
    vocab: &Vocab,
    targets: &[String],
    sources: &[String],
) -> Result<SimilarityMatrix> {
    if targets.is_empty() || sources.is_empty() {
        return Err(contract_err!("similarity needs nonempty target and source lists"));
    }
    let rows = slot_vectors(model, schema, vocab, targets)?;
    let cols = slot_vectors(model, schema, vocab, sources)?;
    SimilarityMatrix::from_vectors(&rows, &cols)
}
