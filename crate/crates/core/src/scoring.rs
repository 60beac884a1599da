//! Teacher-forced candidate scoring.
//!
//! Each candidate label is separately teacher-forced through the decoder; its
//! score is the mean of its token log-probabilities, and the scores are
//! softmax-normalized into a distribution over the candidate set. Greedy
//! generation can emit strings outside the label set, so classification
//! always goes through this path instead.

use crate::error::{Error, Result};
use crate::model::{
    build_bottleneck_mask, DecoderOutput, EncoderOutput, Forward, Segment, TransformerModel,
};
use crate::tensor::{Graph, TensorId};
use crate::tokens::{TokenId, PAD_ID, SEP_ID, START_ID};

/// Per-candidate scores for one instance.
#[derive(Debug, Clone)]
pub struct LabelScore {
    /// Mean token log-probability per candidate.
    pub rho: Vec<f64>,
    /// Softmax of `rho` over the candidate set.
    pub prob: Vec<f64>,
    /// Argmax of `rho` (ties broken by lowest index).
    pub predicted_index: usize,
}

/// One-hot target over the candidate set.
#[derive(Debug, Clone)]
pub struct TargetDistribution {
    pub one_hot: Vec<f64>,
}

impl TargetDistribution {
    pub fn new(gold_index: usize, n_candidates: usize) -> Result<Self> {
        if gold_index >= n_candidates {
            return Err(Error::Label(format!(
                "gold index {gold_index} out of range for {n_candidates} candidates"
            )));
        }
        let mut one_hot = vec![0.0; n_candidates];
        one_hot[gold_index] = 1.0;
        Ok(Self { one_hot })
    }

    pub fn gold_index(&self) -> usize {
        self.one_hot
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot")
    }
}

/// How logits are produced from decoder states.
#[derive(Debug, Clone, Copy)]
pub enum ScoreHead {
    /// The model's own embedding-tied head.
    Tied,
    /// Project decoder states into another width, then apply a frozen
    /// borrowed head. Values are parameter slots in the model's `ParamSet`.
    Projected { w: usize, b: usize, table: usize },
}

/// Resolve the head a model scores with, from its parameter names.
pub fn head_for(model: &TransformerModel) -> ScoreHead {
    match (
        model.params.index_of("proj.dec.w"),
        model.params.index_of("proj.dec.b"),
        model.params.index_of("head.teacher"),
    ) {
        (Some(w), Some(b), Some(table)) => ScoreHead::Projected { w, b, table },
        _ => ScoreHead::Tied,
    }
}

/// Strip trailing padding from a candidate's tokens.
fn effective_label(y_tokens: &[TokenId]) -> &[TokenId] {
    let end = y_tokens
        .iter()
        .rposition(|&t| t != PAD_ID)
        .map_or(0, |p| p + 1);
    &y_tokens[..end]
}

/// Mean label-token log-probability from logits of a teacher-forced decode.
/// Start and end markers are excluded: only the `n_y` label tokens count.
pub fn rho_from_logits(g: &mut Graph, logits: TensorId, y_tokens: &[TokenId]) -> Result<TensorId> {
    let y = effective_label(y_tokens);
    if y.is_empty() {
        return Err(Error::Label("candidate label has no tokens".into()));
    }
    let rows = g.shape(logits)[0];
    if rows != y.len() + 1 {
        return Err(Error::Alignment(format!(
            "decoder produced {rows} logit rows but label has {} tokens (expected {})",
            y.len(),
            y.len() + 1
        )));
    }
    let label_rows = g.slice_rows(logits, 0, y.len())?;
    let lp = g.gather_logprob(label_rows, y)?;
    Ok(g.mean_all(lp))
}

/// Score a candidate from its teacher-forced decode output.
pub fn score_label(g: &mut Graph, dec: &DecoderOutput, y_tokens: &[TokenId]) -> Result<TensorId> {
    rho_from_logits(g, dec.logits, y_tokens)
}

/// Softmax-normalize per-candidate scores. Returns the stacked score vector
/// and the probability vector.
pub fn normalize(g: &mut Graph, rho_ids: &[TensorId]) -> Result<(TensorId, TensorId)> {
    if rho_ids.len() < 2 {
        return Err(Error::Label(format!(
            "need at least 2 candidates, got {}",
            rho_ids.len()
        )));
    }
    let rho_vec = g.stack_scalars(rho_ids)?;
    if g.value(rho_vec).iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite candidate score".into()));
    }
    let prob = g.softmax_last(rho_vec, None)?;
    Ok((rho_vec, prob))
}

/// Cross-entropy against a one-hot target: `-log prob[gold]`.
pub fn task_loss(g: &mut Graph, prob: TensorId, target: &TargetDistribution) -> Result<TensorId> {
    let k = g.value(prob).len();
    if target.one_hot.len() != k {
        return Err(Error::Label(format!(
            "target covers {} candidates, probabilities cover {k}",
            target.one_hot.len()
        )));
    }
    let gold = target.gold_index();
    let picked = g.pick_index(prob, gold)?;
    let lg = g.log(picked)?;
    Ok(g.scale(lg, -1.0))
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Encoder input for a task input optionally joined with a rationale:
/// `[x, SEP, r]`, the separator tagged as part of the rationale segment.
pub fn joined_input(x: &[TokenId], ftr: Option<&[TokenId]>) -> (Vec<TokenId>, Vec<Segment>) {
    let mut ids = x.to_vec();
    let mut segment = vec![Segment::TaskInput; x.len()];
    if let Some(r) = ftr {
        ids.push(SEP_ID);
        segment.push(Segment::Ftr);
        ids.extend_from_slice(r);
        segment.extend(std::iter::repeat_n(Segment::Ftr, r.len()));
    }
    (ids, segment)
}

/// Everything produced while scoring one instance, with live graph handles
/// so losses can be built on top.
pub struct ScoredInstance {
    pub enc: EncoderOutput,
    pub decs: Vec<DecoderOutput>,
    pub rho_ids: Vec<TensorId>,
    pub rho_vec: TensorId,
    pub prob: TensorId,
    pub score: LabelScore,
}

/// One encode, then one teacher-forced decode per candidate sharing the same
/// encoder output and cross-attention mask.
pub fn score_candidates(
    f: &mut Forward,
    head: ScoreHead,
    x_tokens: &[TokenId],
    candidates: &[Vec<TokenId>],
    ftr_tokens: Option<&[TokenId]>,
    bottleneck_on: bool,
) -> Result<ScoredInstance> {
    let (ids, segment) = joined_input(x_tokens, ftr_tokens);
    let enc = f.encode(&ids, &segment)?;
    let mask = build_bottleneck_mask(&enc.segment, bottleneck_on)?;
    score_with_encoder(f, head, enc, &mask, candidates)
}

/// Score candidates against an already-encoded input.
pub fn score_with_encoder(
    f: &mut Forward,
    head: ScoreHead,
    enc: EncoderOutput,
    mask: &crate::model::CrossAttnMask,
    candidates: &[Vec<TokenId>],
) -> Result<ScoredInstance> {
    if candidates.len() < 2 {
        return Err(Error::Label(format!(
            "need at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    // For a projected head, build the transposed table once per pass.
    let projected = match head {
        ScoreHead::Tied => None,
        ScoreHead::Projected { w, b, table } => {
            let w = f.bind_param(w);
            let b = f.bind_param(b);
            let table = f.bind_param(table);
            let table_t = f.graph.transpose(table)?;
            Some((w, b, table_t))
        }
    };

    let mut decs = Vec::with_capacity(candidates.len());
    let mut rho_ids = Vec::with_capacity(candidates.len());
    for y in candidates {
        let y_eff = effective_label(y);
        if y_eff.is_empty() {
            return Err(Error::Label("candidate label has no tokens".into()));
        }
        let mut target = Vec::with_capacity(y_eff.len() + 1);
        target.push(START_ID);
        target.extend_from_slice(y_eff);
        let dec = f.decode(&target, &enc, mask)?;
        let logits = match projected {
            None => dec.logits,
            Some((w, b, table_t)) => {
                let proj = f.graph.matmul(dec.states, w)?;
                let proj = f.graph.add_row_vec(proj, b)?;
                f.graph.matmul(proj, table_t)?
            }
        };
        rho_ids.push(rho_from_logits(&mut f.graph, logits, y_eff)?);
        decs.push(dec);
    }
    let (rho_vec, prob) = normalize(&mut f.graph, &rho_ids)?;
    let rho = f.graph.value(rho_vec).to_vec();
    let prob_values = f.graph.value(prob).to_vec();
    let predicted_index = argmax_lowest(&rho);
    Ok(ScoredInstance {
        enc,
        decs,
        rho_ids,
        rho_vec,
        prob,
        score: LabelScore {
            rho,
            prob: prob_values,
            predicted_index,
        },
    })
}

/// Score an instance with a frozen model and return just the label scores.
pub fn classify(
    model: &TransformerModel,
    x_tokens: &[TokenId],
    candidates: &[Vec<TokenId>],
    ftr_tokens: Option<&[TokenId]>,
    bottleneck_on: bool,
) -> Result<LabelScore> {
    let mut f = model.forward_frozen();
    let head = head_for(model);
    let scored = score_candidates(
        &mut f,
        head,
        x_tokens,
        candidates,
        ftr_tokens,
        bottleneck_on,
    )?;
    Ok(scored.score)
}

/// Independent per-token re-scoring: decode each prefix separately and read
/// the next-token log-probability off the final row. Used as an oracle
/// against [`score_candidates`].
pub fn brute_force_rho(
    model: &TransformerModel,
    x_tokens: &[TokenId],
    candidate: &[TokenId],
    ftr_tokens: Option<&[TokenId]>,
    bottleneck_on: bool,
) -> Result<f64> {
    let y = effective_label(candidate);
    if y.is_empty() {
        return Err(Error::Label("candidate label has no tokens".into()));
    }
    let head = head_for(model);
    let mut total = 0.0;
    for j in 0..y.len() {
        let mut f = model.forward_frozen();
        let (ids, segment) = joined_input(x_tokens, ftr_tokens);
        let enc = f.encode(&ids, &segment)?;
        let mask = build_bottleneck_mask(&enc.segment, bottleneck_on)?;
        let mut prefix = Vec::with_capacity(j + 1);
        prefix.push(START_ID);
        prefix.extend_from_slice(&y[..j]);
        let dec = f.decode(&prefix, &enc, &mask)?;
        let logits_id = match head {
            ScoreHead::Tied => dec.logits,
            ScoreHead::Projected { w, b, table } => {
                let w = f.bind_param(w);
                let b = f.bind_param(b);
                let table = f.bind_param(table);
                let table_t = f.graph.transpose(table)?;
                let proj = f.graph.matmul(dec.states, w)?;
                let proj = f.graph.add_row_vec(proj, b)?;
                f.graph.matmul(proj, table_t)?
            }
        };
        let vocab = f.graph.shape(logits_id)[1];
        let logits = f.graph.value(logits_id);
        let row = &logits[(prefix.len() - 1) * vocab..prefix.len() * vocab];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += row[y[j]] - lse;
    }
    Ok(total / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fake_dec(g: &mut Graph, logits_rows: &[Vec<f64>]) -> DecoderOutput {
        let cols = logits_rows[0].len();
        let flat: Vec<f64> = logits_rows.iter().flatten().copied().collect();
        let logits = g.constant(&[logits_rows.len(), cols], &flat).unwrap();
        // States are unused by scoring; reuse the logits node.
        DecoderOutput {
            states: logits,
            logits,
        }
    }

    #[test]
    fn certain_single_token_label_scores_zero() {
        let mut g = Graph::new();
        let dec = fake_dec(&mut g, &[vec![f64::NEG_INFINITY, 7.0], vec![0.0, 0.0]]);
        let rho = score_label(&mut g, &dec, &[1]).unwrap();
        assert_eq!(g.value(rho), &[0.0]);
    }

    #[test]
    fn uniform_logits_scores_log_quarter() {
        let mut g = Graph::new();
        let dec = fake_dec(&mut g, &[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]);
        let rho = score_label(&mut g, &dec, &[1, 2]).unwrap();
        assert!((g.value(rho)[0] - (0.25_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn rho_is_mean_of_token_log_probs() {
        // Rows engineered so the gathered log-probs are -0.5 and -1.5.
        let c1 = ((0.5_f64).exp() - 1.0).ln();
        let c2 = ((1.5_f64).exp() - 1.0).ln();
        let mut g = Graph::new();
        let dec = fake_dec(&mut g, &[vec![c1, 0.0], vec![c2, 0.0], vec![0.0, 0.0]]);
        let rho = score_label(&mut g, &dec, &[1, 1]).unwrap();
        assert!((g.value(rho)[0] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn score_label_checks_row_alignment() {
        let mut g = Graph::new();
        let dec = fake_dec(&mut g, &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            score_label(&mut g, &dec, &[1, 1]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn trailing_pad_tokens_are_excluded() {
        let mut g = Graph::new();
        let dec = fake_dec(&mut g, &[vec![0.0; 4], vec![0.0; 4]]);
        let rho = score_label(&mut g, &dec, &[3, PAD_ID, PAD_ID]).unwrap();
        assert!((g.value(rho)[0] - (0.25_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn normalize_symmetry_and_hand_value() {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = [0.7, 0.7, 0.7, 0.7].iter().map(|&v| g.scalar(v)).collect();
        let (_, prob) = normalize(&mut g, &ids).unwrap();
        for &p in g.value(prob) {
            assert!((p - 0.25).abs() < 1e-12);
        }

        let ids = vec![g.scalar(3.0_f64.ln()), g.scalar(0.0)];
        let (_, prob) = normalize(&mut g, &ids).unwrap();
        assert!((g.value(prob)[0] - 0.75).abs() < 1e-12);
        assert!((g.value(prob)[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_shift_invariant() {
        let mut g = Graph::new();
        let a = vec![g.scalar(-1.2), g.scalar(0.4), g.scalar(2.0)];
        let b = vec![
            g.scalar(-1.2 + 7.0),
            g.scalar(0.4 + 7.0),
            g.scalar(2.0 + 7.0),
        ];
        let (_, pa) = normalize(&mut g, &a).unwrap();
        let (_, pb) = normalize(&mut g, &b).unwrap();
        for (x, y) in g.value(pa).iter().zip(g.value(pb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_degenerate_inputs() {
        let mut g = Graph::new();
        let one = vec![g.scalar(0.0)];
        assert!(matches!(normalize(&mut g, &one), Err(Error::Label(_))));
        let bad = vec![g.scalar(f64::NAN), g.scalar(0.0)];
        assert!(matches!(normalize(&mut g, &bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn task_loss_hand_values() {
        let mut g = Graph::new();
        let p = g.constant(&[3], &[1.0, 0.0, 0.0]).unwrap();
        let t = TargetDistribution::new(0, 3).unwrap();
        let l = task_loss(&mut g, p, &t).unwrap();
        assert_eq!(g.value(l), &[0.0]);

        let p = g.constant(&[4], &[0.25; 4]).unwrap();
        let t = TargetDistribution::new(2, 4).unwrap();
        let l = task_loss(&mut g, p, &t).unwrap();
        assert!((g.value(l)[0] - 4.0_f64.ln()).abs() < 1e-12);

        let p = g.constant(&[2], &[0.75, 0.25]).unwrap();
        let t = TargetDistribution::new(0, 2).unwrap();
        let l = task_loss(&mut g, p, &t).unwrap();
        assert!((g.value(l)[0] + 0.75_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_distribution_validates_gold_index() {
        assert!(matches!(
            TargetDistribution::new(4, 4),
            Err(Error::Label(_))
        ));
    }

    fn test_model() -> TransformerModel {
        let cfg = ModelConfig {
            vocab_size: 14,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            max_seq_len: 16,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        TransformerModel::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn identical_candidates_get_identical_scores() {
        let model = test_model();
        let cands = vec![vec![5, 6], vec![5, 6], vec![7]];
        let score = classify(&model, &[8, 9], &cands, None, false).unwrap();
        assert_eq!(score.rho[0].to_bits(), score.rho[1].to_bits());
    }

    #[test]
    fn classify_is_permutation_equivariant() {
        let model = test_model();
        let cands = vec![vec![5], vec![6], vec![7], vec![8]];
        let base = classify(&model, &[9, 10], &cands, None, false).unwrap();
        let permuted: Vec<Vec<TokenId>> = vec![vec![7], vec![5], vec![8], vec![6]];
        let perm = classify(&model, &[9, 10], &permuted, None, false).unwrap();
        // mapping[i] = where cands[i] landed in `permuted`
        let mapping = [1usize, 3, 0, 2];
        for (i, &to) in mapping.iter().enumerate() {
            assert_eq!(base.rho[i].to_bits(), perm.rho[to].to_bits());
            assert_eq!(base.prob[i].to_bits(), perm.prob[to].to_bits());
        }
        assert_eq!(mapping[base.predicted_index], perm.predicted_index);
    }

    #[test]
    fn classify_matches_brute_force_oracle() {
        let model = test_model();
        let cands = vec![vec![5, 6], vec![7], vec![8, 9, 10]];
        let x = [11, 12];
        let ftr = [6, 7];
        let score = classify(&model, &x, &cands, Some(&ftr), true).unwrap();
        for (i, y) in cands.iter().enumerate() {
            let oracle = brute_force_rho(&model, &x, y, Some(&ftr), true).unwrap();
            assert!(
                (score.rho[i] - oracle).abs() < 1e-10,
                "candidate {i}: {} vs {}",
                score.rho[i],
                oracle
            );
        }
    }

    #[test]
    fn prob_sums_to_one_and_argmax_agrees() {
        let model = test_model();
        let cands = vec![vec![5], vec![6, 7], vec![8]];
        let score = classify(&model, &[9, 10, 11], &cands, None, false).unwrap();
        let s: f64 = score.prob.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        let rho_argmax = argmax_lowest(&score.rho);
        let prob_argmax = argmax_lowest(&score.prob);
        assert_eq!(rho_argmax, prob_argmax);
        assert_eq!(score.predicted_index, rho_argmax);
    }

    #[test]
    fn duplicated_tokens_with_equal_log_probs_keep_rho() {
        // Length normalization: k identical rows gathering the same token id
        // produce the same mean as one row.
        let mut g = Graph::new();
        let row = vec![0.4, -1.0, 0.2];
        let dec1 = fake_dec(&mut g, &[row.clone(), row.clone()]);
        let rho1 = score_label(&mut g, &dec1, &[2]).unwrap();
        let dec3 = fake_dec(
            &mut g,
            &[row.clone(), row.clone(), row.clone(), row.clone()],
        );
        let rho3 = score_label(&mut g, &dec3, &[2, 2, 2]).unwrap();
        assert!((g.value(rho1)[0] - g.value(rho3)[0]).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_output_is_distribution(
                rho in proptest::collection::vec(-15.0f64..5.0, 2..8)
            ) {
                let mut g = Graph::new();
                let ids: Vec<TensorId> = rho.iter().map(|&v| g.scalar(v)).collect();
                let (_, prob) = normalize(&mut g, &ids).unwrap();
                let s: f64 = g.value(prob).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert_eq!(argmax_lowest(&rho), argmax_lowest(g.value(prob)));
            }
        }
    }
}
