//! Dense three-component vector index over a corpus.
//!
//! Directory layout:
//!
//! ```text
//! meta.json      {"dim": D, "count": N, "embed_model": "...", "format_version": 1}
//! hl.f32         N x D row-major little-endian f32, row i = record i
//! ll.f32
//! mh.f32
//! records.jsonl  the corpus the index was built from
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, CorpusRecord};
use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::hdl_extract::KeyComponents;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BATCH: usize = 64;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("embedding failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid index {path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Hl,
    Ll,
    Mh,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Hl, Component::Ll, Component::Mh];

    pub fn file_name(self) -> &'static str {
        match self {
            Component::Hl => "hl.f32",
            Component::Ll => "ll.f32",
            Component::Mh => "mh.f32",
        }
    }

    pub fn text(self, c: &KeyComponents) -> &str {
        match self {
            Component::Hl => &c.high_level,
            Component::Ll => &c.low_level,
            Component::Mh => &c.module_header,
        }
    }
}

/// Row-major `count x dim` matrix of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    fn from_rows(dim: usize, rows: &[EmbeddingVector]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            data.extend_from_slice(row.values());
        }
        Self { dim, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes(dim: usize, bytes: &[u8]) -> Self {
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self { dim, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub record_id: usize,
    pub s_hl: f64,
    pub s_ll: f64,
    pub s_mh: f64,
}

impl ComponentScore {
    pub fn get(&self, component: Component) -> f64 {
        match component {
            Component::Hl => self.s_hl,
            Component::Ll => self.s_ll,
            Component::Mh => self.s_mh,
        }
    }

    pub fn max(&self) -> f64 {
        self.s_hl.max(self.s_ll).max(self.s_mh)
    }
}

/// The three query embeddings for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryComponents {
    pub hl: EmbeddingVector,
    pub ll: EmbeddingVector,
    pub mh: EmbeddingVector,
}

impl QueryComponents {
    pub fn get(&self, component: Component) -> &EmbeddingVector {
        match component {
            Component::Hl => &self.hl,
            Component::Ll => &self.ll,
            Component::Mh => &self.mh,
        }
    }

    /// Embeds the three components in one batch.
    pub fn embed(components: &KeyComponents, gateway: &Gateway) -> Result<Self, GatewayError> {
        let texts: Vec<String> = Component::ALL.iter().map(|c| c.text(components).to_string()).collect();
        let mut v = gateway.embed(&texts)?.into_iter();
        Ok(Self {
            hl: v.next().unwrap(),
            ll: v.next().unwrap(),
            mh: v.next().unwrap(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub dim: usize,
    pub count: usize,
    pub embed_model: String,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    meta: IndexMeta,
    hl: Matrix,
    ll: Matrix,
    mh: Matrix,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl VectorIndex {
    /// Embeds all three components of every record, `batch` texts at a time.
    pub fn build(corpus: &[CorpusRecord], gateway: &Gateway, batch: usize) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let batch = batch.max(1);
        let mut matrices = Vec::with_capacity(3);
        let mut dim = None;
        for component in Component::ALL {
            let texts: Vec<String> = corpus
                .iter()
                .map(|r| component.text(&r.components).to_string())
                .collect();
            let mut rows = Vec::with_capacity(texts.len());
            for chunk in texts.chunks(batch) {
                rows.extend(gateway.embed(chunk)?);
            }
            let d = *dim.get_or_insert(rows[0].dim());
            if let Some(bad) = rows.iter().find(|r| r.dim() != d) {
                return Err(GatewayError::InconsistentDimension { expected: d, got: bad.dim() }.into());
            }
            matrices.push(Matrix::from_rows(d, &rows));
        }
        let mh = matrices.pop().unwrap();
        let ll = matrices.pop().unwrap();
        let hl = matrices.pop().unwrap();
        Ok(Self {
            meta: IndexMeta {
                dim: dim.unwrap(),
                count: corpus.len(),
                embed_model: gateway.embed_model().to_string(),
                format_version: FORMAT_VERSION,
            },
            hl,
            ll,
            mh,
        })
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn count(&self) -> usize {
        self.meta.count
    }

    pub fn matrix(&self, component: Component) -> &Matrix {
        match component {
            Component::Hl => &self.hl,
            Component::Ll => &self.ll,
            Component::Mh => &self.mh,
        }
    }

    /// Cosine scores of every record against the query, ordered by record id.
    pub fn score_all(&self, query: &QueryComponents) -> Result<Vec<ComponentScore>, IndexError> {
        for c in Component::ALL {
            let got = query.get(c).dim();
            if got != self.dim() {
                return Err(IndexError::DimMismatch {
                    expected: self.dim(),
                    got,
                });
            }
        }
        Ok((0..self.count())
            .map(|i| ComponentScore {
                record_id: i,
                s_hl: dot(query.hl.values(), self.hl.row(i)),
                s_ll: dot(query.ll.values(), self.ll.row(i)),
                s_mh: dot(query.mh.values(), self.mh.row(i)),
            })
            .collect())
    }

    /// Writes the index and a copy of `corpus` into `dir`.
    pub fn save(&self, dir: &Path, corpus: &[CorpusRecord]) -> Result<(), IndexError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IndexError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let meta_path = dir.join("meta.json");
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, meta + "\n").map_err(io(&meta_path))?;
        for c in Component::ALL {
            let p = dir.join(c.file_name());
            fs::write(&p, self.matrix(c).to_le_bytes()).map_err(io(&p))?;
        }
        corpus::save_corpus(corpus, &dir.join("records.jsonl"))?;
        Ok(())
    }

    /// Loads an index directory, returning the index and its corpus.
    pub fn load(dir: &Path) -> Result<(Self, Vec<CorpusRecord>), IndexError> {
        let invalid = |detail: String| IndexError::Invalid {
            path: dir.to_path_buf(),
            detail,
        };
        let meta_path = dir.join("meta.json");
        let meta_text = fs::read_to_string(&meta_path).map_err(|source| IndexError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: IndexMeta = serde_json::from_str(&meta_text).map_err(|e| invalid(format!("meta.json: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(invalid(format!("unsupported format_version {}", meta.format_version)));
        }
        if meta.dim == 0 || meta.count == 0 {
            return Err(invalid("dim and count must be positive".into()));
        }
        let mut matrices = Vec::with_capacity(3);
        for c in Component::ALL {
            let p = dir.join(c.file_name());
            let bytes = fs::read(&p).map_err(|source| IndexError::Io { path: p.clone(), source })?;
            if bytes.len() != meta.count * meta.dim * 4 {
                return Err(invalid(format!(
                    "{} has {} bytes, expected {}",
                    c.file_name(),
                    bytes.len(),
                    meta.count * meta.dim * 4
                )));
            }
            let m = Matrix::from_le_bytes(meta.dim, &bytes);
            for i in 0..m.rows() {
                let norm = dot(m.row(i), m.row(i)).sqrt();
                if (norm - 1.0).abs() > NORM_TOLERANCE * 10.0 {
                    return Err(invalid(format!("{} row {i} has norm {norm}", c.file_name())));
                }
            }
            matrices.push(m);
        }
        let records = corpus::load_corpus(&dir.join("records.jsonl"))?;
        if records.len() != meta.count {
            return Err(invalid(format!(
                "records.jsonl has {} records, meta says {}",
                records.len(),
                meta.count
            )));
        }
        let mh = matrices.pop().unwrap();
        let ll = matrices.pop().unwrap();
        let hl = matrices.pop().unwrap();
        Ok((Self { meta, hl, ll, mh }, records))
    }
}

/// Ids of the `k` best records for `component`: descending score, ties by
/// ascending id. Returns all ids when `k` exceeds the record count.
pub fn top_k(scores: &[ComponentScore], component: Component, k: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = scores.iter().map(|s| (s.get(component), s.record_id)).collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k, by_rank);
        ranked.truncate(k);
    }
    ranked.sort_by(by_rank);
    ranked.into_iter().map(|(_, id)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(v).unwrap()
    }

    fn index_from(rows: &[[f64; 2]]) -> VectorIndex {
        let vecs: Vec<_> = rows.iter().map(|r| unit(r)).collect();
        let m = Matrix::from_rows(2, &vecs);
        VectorIndex {
            meta: IndexMeta {
                dim: 2,
                count: rows.len(),
                embed_model: "test".into(),
                format_version: FORMAT_VERSION,
            },
            hl: m.clone(),
            ll: m.clone(),
            mh: m,
        }
    }

    fn query(v: &[f64]) -> QueryComponents {
        QueryComponents {
            hl: unit(v),
            ll: unit(v),
            mh: unit(v),
        }
    }

    #[test]
    fn hand_computed_dot_products() {
        let idx = index_from(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]);
        let s = idx.score_all(&query(&[1.0, 0.0])).unwrap();
        let hl: Vec<f64> = s.iter().map(|c| c.s_hl).collect();
        for (got, want) in hl.iter().zip([1.0, 0.0, 0.6]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert_eq!(top_k(&s, Component::Hl, 2), vec![0, 2]);
        assert_eq!(top_k(&s, Component::Hl, 10), vec![0, 2, 1]);
    }

    #[test]
    fn self_similarity_is_one() {
        let idx = index_from(&[[0.3, 0.1], [1.0, 2.0], [5.0, -1.0]]);
        let row2 = idx.hl.row(2).iter().map(|&v| v as f64).collect::<Vec<_>>();
        let s = idx.score_all(&query(&row2)).unwrap();
        assert!((s[2].s_hl - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn ties_break_by_lower_id() {
        let scores: Vec<ComponentScore> = [0.5, 0.9, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &v)| ComponentScore {
                record_id: i,
                s_hl: v,
                s_ll: 0.0,
                s_mh: 0.0,
            })
            .collect();
        assert_eq!(top_k(&scores, Component::Hl, 3), vec![1, 0, 2]);
        assert_eq!(top_k(&scores, Component::Hl, 2), vec![1, 0]);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let idx = index_from(&[[1.0, 0.0]]);
        let q = QueryComponents {
            hl: unit(&[1.0, 0.0, 0.0]),
            ll: unit(&[1.0, 0.0]),
            mh: unit(&[1.0, 0.0]),
        };
        assert!(matches!(idx.score_all(&q), Err(IndexError::DimMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn empty_corpus_rejected() {
        let gw = Gateway::new(MockBackend::new(4));
        assert!(matches!(VectorIndex::build(&[], &gw, 64), Err(IndexError::EmptyCorpus)));
    }
}
