//! Token-level Levenshtein edit scripts and the dual-tag encoding used by
//! the editor.
//!
//! A script aligns a source sequence to a target under unit costs
//! (insert = delete = replace = 1, keep = 0). The coarse structure is
//! re-encoded as two tags per source position — an insert-before flag and
//! a keep/delete/replace label — plus an end sentinel for trailing
//! insertions. Applying the coarse tags to the source yields a masked
//! skeleton in which each contiguous rewritten region collapses to one
//! `<MASK>`; the fine-grain fills then restore the target.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Special, TokenSeq};

#[derive(Debug, Error)]
pub enum EditError {
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("malformed edit script: {0}")]
    InvalidScript(String),
    #[error("tags cover {tags} positions but source has {src} tokens")]
    TagMismatch { tags: usize, src: usize },
    #[error("expected {expected} fills, got {got}")]
    FillMismatch { expected: usize, got: usize },
}

/// One unit edit operation, positioned against the source walk.
/// Keep/Delete/Replace consume one source token; Insert consumes none.
/// Fills are single target tokens here; spans arise from merging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Keep,
    Delete,
    Replace { fill: String },
    Insert { fill: String },
}

impl EditOp {
    pub fn consumes_source(&self) -> bool {
        !matches!(self, EditOp::Insert { .. })
    }

    fn kind(&self) -> OpKind {
        match self {
            EditOp::Keep => OpKind::Keep,
            EditOp::Delete => OpKind::Delete,
            EditOp::Replace { .. } => OpKind::Replace,
            EditOp::Insert { .. } => OpKind::Insert,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Keep,
    Delete,
    Replace,
    Insert,
}

impl OpKind {
    pub fn letter(self) -> char {
        match self {
            OpKind::Keep => 'K',
            OpKind::Delete => 'D',
            OpKind::Replace => 'R',
            OpKind::Insert => 'I',
        }
    }
}

/// A minimal-cost unit edit script together with the source it aligns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditScript {
    ops: Vec<EditOp>,
    source_len: usize,
    cost: usize,
}

impl EditScript {
    /// Wraps a raw op list, validating that it consumes exactly
    /// `source_len` tokens. Cost is the number of non-keep unit ops.
    pub fn from_ops(ops: Vec<EditOp>, source_len: usize) -> Result<EditScript, EditError> {
        let consumed = ops.iter().filter(|op| op.consumes_source()).count();
        if consumed != source_len {
            return Err(EditError::InvalidScript(format!(
                "ops consume {consumed} source tokens, source has {source_len}"
            )));
        }
        let cost = ops.iter().filter(|op| !matches!(op, EditOp::Keep)).count();
        Ok(EditScript {
            ops,
            source_len,
            cost,
        })
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn cost(&self) -> usize {
        self.cost
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Applies the script (with its gold fills) to the source.
    pub fn apply(&self, src: &TokenSeq) -> Result<TokenSeq, EditError> {
        if src.len() != self.source_len {
            return Err(EditError::InvalidScript(format!(
                "script aligned to {} tokens, source has {}",
                self.source_len,
                src.len()
            )));
        }
        let mut out = Vec::new();
        let mut i = 0;
        for op in &self.ops {
            match op {
                EditOp::Keep => {
                    out.push(src.tokens()[i].clone());
                    i += 1;
                }
                EditOp::Delete => i += 1,
                EditOp::Replace { fill } => {
                    out.push(fill.clone());
                    i += 1;
                }
                EditOp::Insert { fill } => out.push(fill.clone()),
            }
        }
        TokenSeq::new(out).map_err(|_| EditError::InvalidScript("script deletes everything".into()))
    }
}

/// Computes the minimal unit-cost edit script from `src` to `tgt`.
///
/// Tie-breaking is fixed: walking left to right, prefer keep, then
/// replace, then delete, then insert among cost-equal choices. This
/// maximizes kept tokens and makes the output unique.
pub fn levenshtein_script(src: &TokenSeq, tgt: &TokenSeq) -> Result<EditScript, EditError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(EditError::EmptyInput);
    }
    let s = src.tokens();
    let t = tgt.tokens();
    let n = s.len();
    let m = t.len();

    // dist[i][j] = edit distance between src[i..] and tgt[j..].
    let mut dist = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        dist[i][m] = n - i;
    }
    for j in 0..=m {
        dist[n][j] = m - j;
    }
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let diag = dist[i + 1][j + 1] + usize::from(s[i] != t[j]);
            let del = dist[i + 1][j] + 1;
            let ins = dist[i][j + 1] + 1;
            dist[i][j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = dist[i][j];
        if i < n && j < m && s[i] == t[j] && here == dist[i + 1][j + 1] {
            ops.push(EditOp::Keep);
            i += 1;
            j += 1;
        } else if i < n && j < m && s[i] != t[j] && here == dist[i + 1][j + 1] + 1 {
            ops.push(EditOp::Replace {
                fill: t[j].clone(),
            });
            i += 1;
            j += 1;
        } else if i < n && here == dist[i + 1][j] + 1 {
            ops.push(EditOp::Delete);
            i += 1;
        } else {
            debug_assert!(j < m && here == dist[i][j + 1] + 1);
            ops.push(EditOp::Insert {
                fill: t[j].clone(),
            });
            j += 1;
        }
    }
    EditScript::from_ops(ops, n)
}

/// Per-position op label for [`DualTags`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagOp {
    Keep,
    Delete,
    Replace,
}

impl TagOp {
    pub fn index(self) -> usize {
        match self {
            TagOp::Keep => 0,
            TagOp::Delete => 1,
            TagOp::Replace => 2,
        }
    }

    pub fn from_index(i: usize) -> TagOp {
        match i {
            0 => TagOp::Keep,
            1 => TagOp::Delete,
            _ => TagOp::Replace,
        }
    }
}

/// The two-tag encoding of a fill-free edit script: for each source
/// position, whether a phrase is inserted before it, and the non-insert
/// op on the token itself. Position N is a virtual end sentinel that only
/// carries the insert flag (its op is fixed to keep).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualTags {
    /// Length N+1: insert-before flags, last entry is the end sentinel.
    pub insert_before: Vec<bool>,
    /// Length N: keep/delete/replace per source token.
    pub ops: Vec<TagOp>,
}

impl DualTags {
    pub fn source_len(&self) -> usize {
        self.ops.len()
    }

    pub fn validate(&self) -> Result<(), EditError> {
        if self.insert_before.len() != self.ops.len() + 1 {
            return Err(EditError::InvalidScript(format!(
                "insert flags cover {} positions for {} ops",
                self.insert_before.len(),
                self.ops.len()
            )));
        }
        Ok(())
    }

    pub fn all_keep(&self) -> bool {
        self.ops.iter().all(|op| *op == TagOp::Keep)
            && self.insert_before.iter().all(|flag| !flag)
    }
}

/// Projects a script onto its dual-tag encoding (fills are dropped).
pub fn to_dual_tags(script: &EditScript) -> Result<DualTags, EditError> {
    let n = script.source_len();
    let mut insert_before = vec![false; n + 1];
    let mut ops = Vec::with_capacity(n);
    let mut pos = 0usize;
    for op in script.ops() {
        match op {
            EditOp::Insert { .. } => insert_before[pos] = true,
            EditOp::Keep => {
                ops.push(TagOp::Keep);
                pos += 1;
            }
            EditOp::Delete => {
                ops.push(TagOp::Delete);
                pos += 1;
            }
            EditOp::Replace { .. } => {
                ops.push(TagOp::Replace);
                pos += 1;
            }
        }
    }
    if ops.len() != n {
        return Err(EditError::InvalidScript(format!(
            "ops consume {} source tokens, source has {n}",
            ops.len()
        )));
    }
    Ok(DualTags { insert_before, ops })
}

/// Rebuilds the fill-free unit script encoded by dual tags. Replaced and
/// inserted positions get empty placeholder fills (one inserted token per
/// flagged position).
pub fn from_dual_tags(tags: &DualTags) -> Result<EditScript, EditError> {
    tags.validate()?;
    let mut ops = Vec::new();
    for (i, op) in tags.ops.iter().enumerate() {
        if tags.insert_before[i] {
            ops.push(EditOp::Insert { fill: String::new() });
        }
        ops.push(match op {
            TagOp::Keep => EditOp::Keep,
            TagOp::Delete => EditOp::Delete,
            TagOp::Replace => EditOp::Replace { fill: String::new() },
        });
    }
    if *tags.insert_before.last().unwrap() {
        ops.push(EditOp::Insert { fill: String::new() });
    }
    EditScript::from_ops(ops, tags.ops.len())
}

/// The source with coarse edits applied: kept tokens plus one `<MASK>`
/// per contiguous rewritten region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTarget {
    pub tokens: TokenSeq,
    pub slot_count: usize,
}

/// One element of the coarse skeleton walk: either a kept source token or
/// a mask slot covering a contiguous run of insert/replace positions.
#[derive(Debug, Clone, PartialEq, Eq)]
enum CoarseSegment {
    Kept(usize),
    Slot,
}

/// Shared walk behind [`apply_coarse`], [`reconstruct`], and gold-fill
/// extraction: emits kept source positions and slots in output order.
/// Adjacent mask emissions (from inserts, replaces, and anything a delete
/// squeezes out between them) collapse into a single slot.
fn coarse_segments(tags: &DualTags) -> Vec<CoarseSegment> {
    let mut segs: Vec<CoarseSegment> = Vec::new();
    let push_slot = |segs: &mut Vec<CoarseSegment>| {
        if !matches!(segs.last(), Some(CoarseSegment::Slot)) {
            segs.push(CoarseSegment::Slot);
        }
    };
    for (i, op) in tags.ops.iter().enumerate() {
        if tags.insert_before[i] {
            push_slot(&mut segs);
        }
        match op {
            TagOp::Keep => segs.push(CoarseSegment::Kept(i)),
            TagOp::Delete => {}
            TagOp::Replace => push_slot(&mut segs),
        }
    }
    if *tags.insert_before.last().unwrap() {
        push_slot(&mut segs);
    }
    segs
}

/// Applies coarse tags to the source: kept tokens stay, deletions vanish,
/// each contiguous insert/replace region becomes one `<MASK>`.
///
/// If everything is rewritten the skeleton is a single `<MASK>`; if
/// everything is deleted it is empty (slot count 0) and the caller sees a
/// one-token `<MASK>`-free sequence is impossible, so the skeleton keeps
/// a `<PAD>`-free empty representation via an empty token list being
/// rejected — callers never produce all-delete tags from real scripts
/// against non-empty targets.
pub fn apply_coarse(src: &TokenSeq, tags: &DualTags) -> Result<MaskedTarget, EditError> {
    tags.validate()?;
    if tags.source_len() != src.len() {
        return Err(EditError::TagMismatch {
            tags: tags.source_len(),
            src: src.len(),
        });
    }
    let mut tokens = Vec::new();
    let mut slot_count = 0;
    for seg in coarse_segments(tags) {
        match seg {
            CoarseSegment::Kept(i) => tokens.push(src.tokens()[i].clone()),
            CoarseSegment::Slot => {
                tokens.push(Special::Mask.surface().to_owned());
                slot_count += 1;
            }
        }
    }
    if tokens.is_empty() {
        // All-delete tags with no inserts: represent as a single mask so
        // downstream generators still have a slot to fill.
        tokens.push(Special::Mask.surface().to_owned());
        slot_count = 1;
    }
    Ok(MaskedTarget {
        tokens: TokenSeq::new(tokens).expect("non-empty by construction"),
        slot_count,
    })
}

/// Gold fills for each slot of `apply_coarse(src, to_dual_tags(script))`,
/// in slot order: the concatenated insert/replace fill tokens feeding
/// that slot.
pub fn gold_fills(script: &EditScript) -> Result<Vec<Vec<String>>, EditError> {
    let tags = to_dual_tags(script)?;
    let n_slots = coarse_segments(&tags)
        .iter()
        .filter(|s| matches!(s, CoarseSegment::Slot))
        .count();
    let mut fills: Vec<Vec<String>> = Vec::with_capacity(n_slots);
    let mut open = false; // the previous emission belonged to a slot
    for op in script.ops() {
        match op {
            EditOp::Keep => open = false,
            EditOp::Delete => {}
            EditOp::Insert { fill } | EditOp::Replace { fill } => {
                if !open {
                    fills.push(Vec::new());
                    open = true;
                }
                fills.last_mut().unwrap().push(fill.clone());
            }
        }
    }
    if fills.len() != n_slots {
        // Only possible for the degenerate all-delete script, which
        // apply_coarse renders as one empty-fill slot.
        fills = vec![Vec::new()];
    }
    Ok(fills)
}

/// Replaces each `<MASK>` of the coarse skeleton, in order, by the
/// corresponding fill. With tags and gold fills from
/// [`levenshtein_script`], this reproduces the target exactly.
pub fn reconstruct(
    src: &TokenSeq,
    tags: &DualTags,
    fills: &[TokenSeq],
) -> Result<TokenSeq, EditError> {
    let masked = apply_coarse(src, tags)?;
    if fills.len() != masked.slot_count {
        return Err(EditError::FillMismatch {
            expected: masked.slot_count,
            got: fills.len(),
        });
    }
    let mut out = Vec::new();
    let mut next_fill = fills.iter();
    for tok in masked.tokens.tokens() {
        if tok == Special::Mask.surface() {
            out.extend(next_fill.next().unwrap().tokens().iter().cloned());
        } else {
            out.push(tok.clone());
        }
    }
    TokenSeq::new(out).map_err(|_| EditError::InvalidScript("reconstruction is empty".into()))
}

/// A maximal run of same-kind unit ops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedSpan {
    pub kind: OpKind,
    /// Number of source tokens the span consumes.
    pub source_len: usize,
    /// Fill tokens the span emits (insert/replace only).
    pub fill: Vec<String>,
}

/// Per-example edit statistics, Levenshtein spans after merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanStats {
    /// Non-keep spans after merging adjacent same-kind ops.
    pub merged_op_count: usize,
    pub source_token_count: usize,
    pub output_token_count: usize,
}

/// Coalesces adjacent same-kind unit ops into spans. Keep runs count as
/// spans but are excluded from `merged_op_count`.
pub fn merge_spans(script: &EditScript) -> (Vec<MergedSpan>, SpanStats) {
    let mut spans: Vec<MergedSpan> = Vec::new();
    for op in script.ops() {
        let kind = op.kind();
        let extend = spans.last().is_some_and(|s| s.kind == kind);
        if !extend {
            spans.push(MergedSpan {
                kind,
                source_len: 0,
                fill: Vec::new(),
            });
        }
        let span = spans.last_mut().unwrap();
        if op.consumes_source() {
            span.source_len += 1;
        }
        match op {
            EditOp::Replace { fill } | EditOp::Insert { fill } => span.fill.push(fill.clone()),
            _ => {}
        }
    }
    let merged_op_count = spans.iter().filter(|s| s.kind != OpKind::Keep).count();
    let output_token_count = spans
        .iter()
        .map(|s| match s.kind {
            OpKind::Keep => s.source_len,
            OpKind::Delete => 0,
            OpKind::Replace | OpKind::Insert => s.fill.len(),
        })
        .sum();
    let stats = SpanStats {
        merged_op_count,
        source_token_count: script.source_len(),
        output_token_count,
    };
    (spans, stats)
}

/// Mean and standard deviation of per-example span statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanAggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: impl Iterator<Item = f64> + Clone) -> SpanAggregate {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return SpanAggregate { mean: 0.0, std: 0.0 };
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SpanAggregate {
        mean,
        std: var.sqrt(),
    }
}

/// Log/debug rendering of a merged script against its source, one
/// bracketed chunk per span, e.g.
/// `I[probably] K[the] R[worst→best] K[ribs] D[i've] K[ever] D[had] K[!]`.
pub fn render_script(src: &TokenSeq, script: &EditScript) -> String {
    let (spans, _) = merge_spans(script);
    let mut parts = Vec::with_capacity(spans.len());
    let mut pos = 0usize;
    for span in &spans {
        let consumed = &src.tokens()[pos..pos + span.source_len];
        pos += span.source_len;
        let part = match span.kind {
            OpKind::Keep => format!("K[{}]", consumed.join(" ")),
            OpKind::Delete => format!("D[{}]", consumed.join(" ")),
            OpKind::Replace => format!("R[{}→{}]", consumed.join(" "), span.fill.join(" ")),
            OpKind::Insert => format!("I[{}]", span.fill.join(" ")),
        };
        parts.push(part);
    }
    parts.join(" ")
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng as _, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn seq(text: &str) -> TokenSeq {
        tokenize(text).unwrap()
    }

    fn figure_pair() -> (TokenSeq, TokenSeq) {
        (
            seq("the worst ribs i've ever had !"),
            seq("probably the best ribs ever !"),
        )
    }

    #[test]
    fn script_matches_figure_example() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let expected = vec![
            EditOp::Insert { fill: "probably".into() },
            EditOp::Keep,
            EditOp::Replace { fill: "best".into() },
            EditOp::Keep,
            EditOp::Delete,
            EditOp::Keep,
            EditOp::Delete,
            EditOp::Keep,
        ];
        assert_eq!(script.ops(), expected.as_slice());
        assert_eq!(script.cost(), 4);
        assert_eq!(script.apply(&src).unwrap(), tgt);
    }

    #[test]
    fn identity_script_is_all_keep() {
        let s = seq("all the same tokens");
        let script = levenshtein_script(&s, &s).unwrap();
        assert!(script.ops().iter().all(|op| matches!(op, EditOp::Keep)));
        assert_eq!(script.cost(), 0);
    }

    #[test]
    fn cost_zero_iff_equal() {
        let a = seq("a b c");
        let b = seq("a b d");
        assert_eq!(levenshtein_script(&a, &a).unwrap().cost(), 0);
        assert!(levenshtein_script(&a, &b).unwrap().cost() > 0);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        // TokenSeq can't be empty, so exercise via the constructor.
        assert!(TokenSeq::new(vec![]).is_err());
    }

    /// Independent oracle: exhaustive recursion over all edit choices.
    fn brute_force_cost(s: &[String], t: &[String]) -> usize {
        match (s.is_empty(), t.is_empty()) {
            (true, true) => 0,
            (true, false) => t.len(),
            (false, true) => s.len(),
            (false, false) => {
                let mut best = usize::MAX;
                if s[0] == t[0] {
                    best = best.min(brute_force_cost(&s[1..], &t[1..]));
                }
                best = best.min(1 + brute_force_cost(&s[1..], &t[1..])); // replace
                best = best.min(1 + brute_force_cost(&s[1..], t)); // delete
                best = best.min(1 + brute_force_cost(s, &t[1..])); // insert
                best
            }
        }
    }

    fn all_seqs(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        let mut frontier: Vec<Vec<String>> = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for base in &frontier {
                for sym in alphabet {
                    let mut s = base.clone();
                    s.push((*sym).to_owned());
                    next.push(s);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn cost_matches_brute_force_small() {
        // Quick version; the full 14,400-pair sweep runs in acceptance.
        let seqs = all_seqs(&["a", "b"], 3);
        for s in &seqs {
            for t in &seqs {
                let src = TokenSeq::new(s.clone()).unwrap();
                let tgt = TokenSeq::new(t.clone()).unwrap();
                let script = levenshtein_script(&src, &tgt).unwrap();
                assert_eq!(script.cost(), brute_force_cost(s, t), "{s:?} -> {t:?}");
                assert_eq!(script.apply(&src).unwrap(), tgt);
            }
        }
    }

    #[test]
    fn dual_tags_match_figure_example() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let tags = to_dual_tags(&script).unwrap();
        assert_eq!(
            tags.insert_before,
            vec![true, false, false, false, false, false, false, false]
        );
        assert_eq!(
            tags.ops,
            vec![
                TagOp::Keep,
                TagOp::Replace,
                TagOp::Keep,
                TagOp::Delete,
                TagOp::Keep,
                TagOp::Delete,
                TagOp::Keep,
            ]
        );
    }

    #[test]
    fn dual_tags_all_keep() {
        let s = seq("x y z");
        let script = levenshtein_script(&s, &s).unwrap();
        let tags = to_dual_tags(&script).unwrap();
        assert!(tags.all_keep());
        assert_eq!(tags.insert_before.len(), 4);
    }

    #[test]
    fn trailing_insert_sets_end_sentinel() {
        let script = levenshtein_script(&seq("a"), &seq("a b")).unwrap();
        let tags = to_dual_tags(&script).unwrap();
        assert_eq!(tags.insert_before, vec![false, true]);
        assert_eq!(tags.ops, vec![TagOp::Keep]);
    }

    #[test]
    fn tag_script_round_trip_preserves_kinds() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let tags = to_dual_tags(&script).unwrap();
        let back = from_dual_tags(&tags).unwrap();
        let kinds: Vec<OpKind> = script.ops().iter().map(|op| op.kind()).collect();
        let back_kinds: Vec<OpKind> = back.ops().iter().map(|op| op.kind()).collect();
        assert_eq!(kinds, back_kinds);
    }

    #[test]
    fn apply_coarse_matches_figure_skeleton() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let tags = to_dual_tags(&script).unwrap();
        let masked = apply_coarse(&src, &tags).unwrap();
        assert_eq!(masked.tokens.text(), "<MASK> the <MASK> ribs ever !");
        assert_eq!(masked.slot_count, 2);
    }

    #[test]
    fn apply_coarse_all_keep_is_identity() {
        let s = seq("nothing changes here");
        let script = levenshtein_script(&s, &s).unwrap();
        let masked = apply_coarse(&s, &to_dual_tags(&script).unwrap()).unwrap();
        assert_eq!(masked.tokens, s);
        assert_eq!(masked.slot_count, 0);
    }

    #[test]
    fn apply_coarse_merges_replace_run() {
        // Gold script for ("a b c", "x y c") is two replaces then a keep.
        let src = seq("a b c");
        let tgt = seq("x y c");
        let script = levenshtein_script(&src, &tgt).unwrap();
        assert_eq!(
            script.ops(),
            &[
                EditOp::Replace { fill: "x".into() },
                EditOp::Replace { fill: "y".into() },
                EditOp::Keep,
            ]
        );
        let masked = apply_coarse(&src, &to_dual_tags(&script).unwrap()).unwrap();
        assert_eq!(masked.tokens.text(), "<MASK> c");
        assert_eq!(masked.slot_count, 1);
        assert_eq!(gold_fills(&script).unwrap(), vec![vec!["x", "y"]]);
    }

    #[test]
    fn apply_coarse_rejects_wrong_length() {
        let src = seq("a b c");
        let tags = DualTags {
            insert_before: vec![false, false],
            ops: vec![TagOp::Keep],
        };
        assert!(matches!(
            apply_coarse(&src, &tags),
            Err(EditError::TagMismatch { .. })
        ));
    }

    #[test]
    fn merge_spans_counts_non_keep_spans() {
        let ops = vec![
            EditOp::Delete,
            EditOp::Delete,
            EditOp::Keep,
            EditOp::Replace { fill: "x".into() },
            EditOp::Replace { fill: "y".into() },
        ];
        let script = EditScript::from_ops(ops, 5).unwrap();
        let (spans, stats) = merge_spans(&script);
        assert_eq!(spans.len(), 3);
        assert_eq!(stats.merged_op_count, 2);
        assert_eq!(stats.source_token_count, 5);
        assert_eq!(stats.output_token_count, 3); // 1 kept + 2 replacement fills
    }

    #[test]
    fn merge_spans_figure_example_has_four_spans() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let (_, stats) = merge_spans(&script);
        assert_eq!(stats.merged_op_count, 4); // insert, replace, two separated deletes
        assert_eq!(stats.output_token_count, tgt.len());
    }

    #[test]
    fn merge_spans_all_keep_counts_zero() {
        let s = seq("same same");
        let script = levenshtein_script(&s, &s).unwrap();
        let (_, stats) = merge_spans(&script);
        assert_eq!(stats.merged_op_count, 0);
    }

    #[test]
    fn merge_is_idempotent() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let (spans, stats) = merge_spans(&script);
        // Rebuild a unit script from spans and merge again.
        let mut ops = Vec::new();
        for span in &spans {
            match span.kind {
                OpKind::Keep => ops.extend(std::iter::repeat(EditOp::Keep).take(span.source_len)),
                OpKind::Delete => {
                    ops.extend(std::iter::repeat(EditOp::Delete).take(span.source_len))
                }
                OpKind::Replace => {
                    // Unit replaces pair source tokens with fill tokens 1:1.
                    for fill in &span.fill {
                        ops.push(EditOp::Replace { fill: fill.clone() });
                    }
                }
                OpKind::Insert => {
                    for fill in &span.fill {
                        ops.push(EditOp::Insert { fill: fill.clone() });
                    }
                }
            }
        }
        let rebuilt = EditScript::from_ops(ops, script.source_len()).unwrap();
        let (spans2, stats2) = merge_spans(&rebuilt);
        assert_eq!(spans, spans2);
        assert_eq!(stats, stats2);
    }

    #[test]
    fn reconstruct_matches_figure_output() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        let tags = to_dual_tags(&script).unwrap();
        let fills = vec![seq("probably"), seq("best")];
        assert_eq!(reconstruct(&src, &tags, &fills).unwrap(), tgt);
    }

    #[test]
    fn reconstruct_zero_slots_applies_deletions() {
        let src = seq("a b c");
        let tags = DualTags {
            insert_before: vec![false, false, false, false],
            ops: vec![TagOp::Keep, TagOp::Delete, TagOp::Keep],
        };
        let out = reconstruct(&src, &tags, &[]).unwrap();
        assert_eq!(out.text(), "a c");
    }

    #[test]
    fn reconstruct_rejects_fill_count_mismatch() {
        let src = seq("a b");
        let tags = DualTags {
            insert_before: vec![true, false, false],
            ops: vec![TagOp::Keep, TagOp::Keep],
        };
        assert!(matches!(
            reconstruct(&src, &tags, &[]),
            Err(EditError::FillMismatch { expected: 1, got: 0 })
        ));
    }

    #[test]
    fn render_matches_span_letters() {
        let (src, tgt) = figure_pair();
        let script = levenshtein_script(&src, &tgt).unwrap();
        assert_eq!(
            render_script(&src, &script),
            "I[probably] K[the] R[worst→best] K[ribs] D[i've] K[ever] D[had] K[!]"
        );
    }

    #[test]
    fn random_pairs_round_trip_through_tags_and_fills() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let alphabet = ["a", "b", "c", "d", "e"];
        for _ in 0..1000 {
            let n = rng.gen_range(1..=9);
            let m = rng.gen_range(1..=9);
            let src = TokenSeq::new(
                (0..n).map(|_| (*alphabet.choose(&mut rng).unwrap()).to_owned()).collect(),
            )
            .unwrap();
            let tgt = TokenSeq::new(
                (0..m).map(|_| (*alphabet.choose(&mut rng).unwrap()).to_owned()).collect(),
            )
            .unwrap();
            let script = levenshtein_script(&src, &tgt).unwrap();
            let tags = to_dual_tags(&script).unwrap();
            let fills: Vec<TokenSeq> = gold_fills(&script)
                .unwrap()
                .into_iter()
                .map(|f| {
                    if f.is_empty() {
                        TokenSeq::new(vec!["<EMPTY>".into()]).unwrap()
                    } else {
                        TokenSeq::new(f).unwrap()
                    }
                })
                .collect();
            // Gold fills from a minimal script are never empty: a slot
            // always covers at least one insert or replace token.
            assert!(fills.iter().all(|f| f.tokens() != ["<EMPTY>"]));
            assert_eq!(reconstruct(&src, &tags, &fills).unwrap(), tgt, "{src} -> {tgt}");
        }
    }

    proptest! {
        #[test]
        fn script_cost_is_at_most_sum_of_lengths(
            s in proptest::collection::vec("[ab]", 1..8),
            t in proptest::collection::vec("[ab]", 1..8),
        ) {
            let src = TokenSeq::new(s.clone()).unwrap();
            let tgt = TokenSeq::new(t.clone()).unwrap();
            let script = levenshtein_script(&src, &tgt).unwrap();
            prop_assert!(script.cost() <= s.len().max(t.len()));
            prop_assert_eq!(script.apply(&src).unwrap(), tgt);
        }

        #[test]
        fn merged_count_never_exceeds_unit_count(
            s in proptest::collection::vec("[abc]", 1..10),
            t in proptest::collection::vec("[abc]", 1..10),
        ) {
            let src = TokenSeq::new(s).unwrap();
            let tgt = TokenSeq::new(t).unwrap();
            let script = levenshtein_script(&src, &tgt).unwrap();
            let (_, stats) = merge_spans(&script);
            prop_assert!(stats.merged_op_count <= script.cost());
        }
    }
}
