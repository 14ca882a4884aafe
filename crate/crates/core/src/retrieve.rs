//! Two-stage exemplar retrieval.
//!
//! Stage 1 takes the top-k records per key component (high-level overview,
//! low-level details, module header) and unions them into at most 3k
//! candidates. Stage 2 re-scores the candidates' full instructions against
//! the task with a cross-encoder and keeps the best n.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusRecord;
use crate::gateway::{Gateway, GatewayError};
use crate::hdl_extract::{extract_components, KeyComponents};
use crate::vindex::{top_k, Component, ComponentScore, IndexError, QueryComponents, VectorIndex};

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("invalid retrieval parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("index has {index} rows but corpus has {corpus} records")]
    Misaligned { index: usize, corpus: usize },
    #[error("no candidates to re-rank")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalParams {
    /// Per-component stage-1 size.
    pub k: usize,
    /// Final exemplar count.
    pub n: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self { k: 10, n: 2 }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k == 0 || self.n == 0 {
            return Err(RetrieveError::Params("k and n must be positive".into()));
        }
        if self.n > 3 * self.k {
            return Err(RetrieveError::Params(format!("n = {} exceeds 3k = {}", self.n, 3 * self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub record_id: usize,
    pub instruction: String,
    pub code: String,
    pub stage1_scores: ComponentScore,
    pub rerank_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub exemplars: Vec<Exemplar>,
    /// Size of the stage-1 candidate set.
    pub candidates: usize,
    /// False when stage 2 fell back to stage-1 ordering.
    pub reranked: bool,
}

/// Union of the per-component top-k lists, ordered by descending best
/// component score with ties by ascending id.
pub fn union_top_k(scores: &[ComponentScore], k: usize) -> Vec<ComponentScore> {
    let mut seen = HashSet::new();
    let mut out: Vec<ComponentScore> = Component::ALL
        .iter()
        .flat_map(|&c| top_k(scores, c, k))
        .filter(|id| seen.insert(*id))
        .map(|id| scores[id])
        .collect();
    out.sort_by(|a, b| b.max().total_cmp(&a.max()).then(a.record_id.cmp(&b.record_id)));
    out
}

pub fn stage1_filter(
    index: &VectorIndex,
    task_components: &KeyComponents,
    params: &RetrievalParams,
    gateway: &Gateway,
) -> Result<Vec<ComponentScore>, RetrieveError> {
    params.validate()?;
    let query = QueryComponents::embed(task_components, gateway)?;
    let scores = index.score_all(&query)?;
    Ok(union_top_k(&scores, params.k))
}

/// Re-ranks candidates by cross-encoder score over their instructions.
///
/// Without a configured reranker the candidates keep their stage-1 order and
/// carry their best stage-1 score as `rerank_score`.
pub fn stage2_rerank(
    candidates: &[ComponentScore],
    corpus: &[CorpusRecord],
    task_instruction: &str,
    params: &RetrievalParams,
    gateway: &Gateway,
) -> Result<Retrieval, RetrieveError> {
    if candidates.is_empty() {
        return Err(RetrieveError::NoCandidates);
    }
    let exemplar = |c: &ComponentScore, rerank_score: f64| {
        let r = &corpus[c.record_id];
        Exemplar {
            record_id: r.id,
            instruction: r.instruction.clone(),
            code: r.code.clone(),
            stage1_scores: *c,
            rerank_score,
        }
    };

    if !gateway.has_reranker() {
        let exemplars = candidates.iter().take(params.n).map(|c| exemplar(c, c.max())).collect();
        return Ok(Retrieval {
            exemplars,
            candidates: candidates.len(),
            reranked: false,
        });
    }

    let passages: Vec<String> = candidates
        .iter()
        .map(|c| corpus[c.record_id].instruction.clone())
        .collect();
    let mut scored: Vec<(f64, &ComponentScore)> = gateway
        .rerank(task_instruction, &passages)?
        .into_iter()
        .map(|s| (s.score, &candidates[s.candidate_index]))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.record_id.cmp(&b.1.record_id)));
    Ok(Retrieval {
        exemplars: scored.into_iter().take(params.n).map(|(s, c)| exemplar(c, s)).collect(),
        candidates: candidates.len(),
        reranked: true,
    })
}

/// Full two-stage retrieval for a task description.
pub fn retrieve(
    index: &VectorIndex,
    corpus: &[CorpusRecord],
    task_text: &str,
    params: &RetrievalParams,
    gateway: &Gateway,
) -> Result<Retrieval, RetrieveError> {
    if index.count() != corpus.len() {
        return Err(RetrieveError::Misaligned {
            index: index.count(),
            corpus: corpus.len(),
        });
    }
    let components = extract_components(task_text, None);
    let candidates = stage1_filter(index, &components, params, gateway)?;
    stage2_rerank(&candidates, corpus, task_text, params, gateway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, ModelBackend};

    fn score(id: usize, hl: f64, ll: f64, mh: f64) -> ComponentScore {
        ComponentScore {
            record_id: id,
            s_hl: hl,
            s_ll: ll,
            s_mh: mh,
        }
    }

    fn ids(v: &[ComponentScore]) -> Vec<usize> {
        v.iter().map(|c| c.record_id).collect()
    }

    #[test]
    fn disjoint_winners_give_three() {
        let mut scores: Vec<_> = (0..10).map(|i| score(i, 0.0, 0.0, 0.0)).collect();
        scores[4].s_hl = 0.9;
        scores[9].s_ll = 0.8;
        scores[1].s_mh = 0.7;
        assert_eq!(ids(&union_top_k(&scores, 1)), vec![4, 9, 1]);
    }

    #[test]
    fn shared_winner_gives_one() {
        let mut scores: Vec<_> = (0..5).map(|i| score(i, 0.1, 0.1, 0.1)).collect();
        scores[3] = score(3, 0.9, 0.9, 0.9);
        assert_eq!(ids(&union_top_k(&scores, 1)), vec![3]);
    }

    #[test]
    fn five_record_hand_oracle() {
        // hl ranking: 2,0,4,... ll ranking: 1,2,... mh ranking: 4,3,...
        let scores = vec![
            score(0, 0.8, 0.1, 0.2),
            score(1, 0.1, 0.9, 0.3),
            score(2, 0.9, 0.7, 0.1),
            score(3, 0.2, 0.3, 0.6),
            score(4, 0.5, 0.2, 0.95),
        ];
        // k=2 prefixes: hl {2,0}, ll {1,2}, mh {4,3} -> union {0,1,2,3,4}
        // ordered by max: 4(.95) 1(.9) 2(.9) 0(.8) 3(.6)
        assert_eq!(ids(&union_top_k(&scores, 2)), vec![4, 1, 2, 0, 3]);
        // k=1: {2, 1, 4} ordered by max: 4(.95), 1(.9), 2(.9)
        assert_eq!(ids(&union_top_k(&scores, 1)), vec![4, 1, 2]);
    }

    fn corpus(instructions: &[&str]) -> Vec<CorpusRecord> {
        instructions
            .iter()
            .enumerate()
            .map(|(i, s)| CorpusRecord {
                id: i,
                instruction: s.to_string(),
                code: format!("module m{i}; endmodule"),
                source_tag: "t".into(),
                components: extract_components(s, None),
            })
            .collect()
    }

    /// Reranker with scripted scores per passage text.
    struct Scripted(Vec<(String, f64)>);

    impl ModelBackend for Scripted {
        fn chat(&self, _: &crate::gateway::ChatRequest) -> Result<String, GatewayError> {
            unreachable!()
        }
        fn embed_raw(&self, _: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            unreachable!()
        }
        fn rerank_raw(&self, _: &str, passages: &[String]) -> Result<Vec<(usize, f64)>, GatewayError> {
            Ok(passages
                .iter()
                .enumerate()
                .map(|(i, p)| (i, self.0.iter().find(|(t, _)| t == p).unwrap().1))
                .collect())
        }
        fn has_reranker(&self) -> bool {
            true
        }
        fn chat_model(&self) -> &str {
            "s"
        }
        fn embed_model(&self) -> &str {
            "s"
        }
    }

    #[test]
    fn stage2_orders_by_rerank_score() {
        let c = corpus(&["alpha", "beta", "gamma"]);
        let gw = Gateway::new(Scripted(vec![("alpha".into(), 0.2), ("beta".into(), 0.9), ("gamma".into(), 0.5)]));
        let cands = vec![score(0, 0.9, 0.0, 0.0), score(1, 0.5, 0.0, 0.0), score(2, 0.1, 0.0, 0.0)];
        let r = stage2_rerank(&cands, &c, "task", &RetrievalParams { k: 1, n: 2 }, &gw).unwrap();
        assert_eq!(r.exemplars.iter().map(|e| e.record_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(r.exemplars[0].rerank_score, 0.9);
        assert_eq!(r.exemplars[0].stage1_scores.s_hl, 0.5);
        assert!(r.reranked);
    }

    #[test]
    fn stage2_truncates_and_breaks_ties_by_id() {
        let c = corpus(&["a", "b", "c"]);
        let gw = Gateway::new(Scripted(vec![("a".into(), 0.5), ("b".into(), 0.5), ("c".into(), 0.5)]));
        let cands = vec![score(2, 0.9, 0.0, 0.0), score(0, 0.5, 0.0, 0.0)];
        let r = stage2_rerank(&cands, &c, "t", &RetrievalParams { k: 2, n: 5 }, &gw).unwrap();
        assert_eq!(r.exemplars.iter().map(|e| e.record_id).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn stage2_without_reranker_keeps_stage1_order() {
        let c = corpus(&["a", "b", "c"]);
        let gw = Gateway::new(MockBackend::new(8).without_reranker());
        let cands = vec![score(2, 0.9, 0.0, 0.0), score(0, 0.5, 0.0, 0.0)];
        let r = stage2_rerank(&cands, &c, "t", &RetrievalParams { k: 2, n: 1 }, &gw).unwrap();
        assert!(!r.reranked);
        assert_eq!(r.exemplars[0].record_id, 2);
        assert_eq!(r.exemplars[0].rerank_score, 0.9);
    }

    #[test]
    fn params_validation() {
        assert!(RetrievalParams { k: 1, n: 3 }.validate().is_ok());
        assert!(RetrievalParams { k: 1, n: 4 }.validate().is_err());
        assert!(RetrievalParams { k: 0, n: 1 }.validate().is_err());
    }

    #[test]
    fn single_record_corpus() {
        let c = corpus(&["Design a 2-to-1 multiplexer with select input."]);
        let gw = Gateway::new(MockBackend::new(8));
        let idx = VectorIndex::build(&c, &gw, 64).unwrap();
        let r = retrieve(&idx, &c, "Completely unrelated FIFO text.", &RetrievalParams::default(), &gw).unwrap();
        assert_eq!(r.exemplars.len(), 1);
        assert_eq!(r.exemplars[0].record_id, 0);
    }

    #[test]
    fn identical_task_ranks_its_record_first() {
        let c = corpus(&[
            "Design an 8-bit ripple carry adder with carry in and carry out.",
            "Implement a synchronous FIFO with depth 16 and full and empty flags.",
            "Create a 4-bit up/down counter with synchronous reset.",
        ]);
        let gw = Gateway::new(MockBackend::new(16));
        let idx = VectorIndex::build(&c, &gw, 2).unwrap();
        let r = retrieve(&idx, &c, &c[1].instruction, &RetrievalParams { k: 3, n: 2 }, &gw).unwrap();
        assert_eq!(r.exemplars[0].record_id, 1);
    }
}
