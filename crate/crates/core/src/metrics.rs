//! Task evaluation metrics: entity-level span F1 over BIO tag sequences, and
//! plain classification accuracy.

use crate::corpora::tags;
use crate::error::{Error, Result};
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

/// A labeled entity span: (class, start, end-exclusive).
pub type Span = (u8, usize, usize);

/// Extract entity spans from a BIO sequence.
///
/// With `repair` set, an inside tag without a compatible opener is read as a
/// begin tag (prediction convention); without it, such a sequence is an error
/// (gold sequences must be well-formed).
pub fn decode_spans(seq: &[u8], repair: bool) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(u8, usize)> = None;
    for (i, &t) in seq.iter().enumerate() {
        if t as usize >= tags::COUNT {
            return Err(Error::Contract(format!("tag id {t} out of range at position {i}")));
        }
        if t == tags::O {
            if let Some((c, s)) = open.take() {
                spans.push((c, s, i));
            }
            continue;
        }
        let class = (t - 1) / 2;
        let is_begin = t == tags::begin(class);
        if is_begin {
            if let Some((c, s)) = open.take() {
                spans.push((c, s, i));
            }
            open = Some((class, i));
        } else {
            // inside tag
            match open {
                Some((c, _)) if c == class => {}
                _ => {
                    if !repair {
                        return Err(Error::Contract(format!(
                            "ill-formed BIO: inside tag {t} without opener at position {i}"
                        )));
                    }
                    if let Some((c, s)) = open.take() {
                        spans.push((c, s, i));
                    }
                    open = Some((class, i));
                }
            }
        }
    }
    if let Some((c, s)) = open {
        spans.push((c, s, seq.len()));
    }
    Ok(spans)
}

/// Entity-level micro-averaged precision, recall, and F1.
///
/// Gold sequences must be well-formed BIO; predictions are repaired. When
/// neither side contains any entity the score is perfect agreement (1,1,1).
pub fn span_f1(preds: &[Vec<u8>], golds: &[Vec<u8>]) -> Result<(f64, f64, f64)> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predicted sequences vs {} gold",
            preds.len(),
            golds.len()
        )));
    }
    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_gold = 0usize;
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "sequence {i}: {} predicted tags vs {} gold",
                p.len(),
                g.len()
            )));
        }
        let ps: BTreeSet<Span> = decode_spans(p, true)?.into_iter().collect();
        let gs: BTreeSet<Span> = decode_spans(g, false)?.into_iter().collect();
        tp += ps.intersection(&gs).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    if n_pred == 0 && n_gold == 0 {
        return Ok((1.0, 1.0, 1.0));
    }
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Fraction of positions where prediction equals gold.
pub fn accuracy(pred: &[u8], gold: &[u8]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!("{} predictions vs {} gold", pred.len(), gold.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("accuracy over zero examples".into()));
    }
    let matches = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpora::tags::{B_LOC, B_PER, I_LOC, I_PER, O};
    use crate::rng::Rng;
    use alloc::vec;

    #[test]
    fn decode_simple_spans() {
        let seq = vec![B_PER, I_PER, O, B_LOC, I_LOC, I_LOC, O, B_PER];
        let spans = decode_spans(&seq, false).unwrap();
        assert_eq!(spans, vec![(0, 0, 2), (1, 3, 6), (0, 7, 8)]);
    }

    #[test]
    fn orphan_inside_tag_is_repaired_as_begin() {
        let seq = vec![O, I_LOC, I_LOC, O];
        let spans = decode_spans(&seq, true).unwrap();
        assert_eq!(spans, vec![(1, 1, 3)]);
        assert!(decode_spans(&seq, false).is_err());
    }

    #[test]
    fn class_switch_inside_entity_repairs_to_new_span() {
        let seq = vec![B_PER, I_LOC];
        let spans = decode_spans(&seq, true).unwrap();
        assert_eq!(spans, vec![(0, 0, 1), (1, 1, 2)]);
    }

    #[test]
    fn exact_match_scores_perfectly() {
        let gold = vec![vec![B_PER, I_PER, O, B_LOC], vec![O, O]];
        assert_eq!(span_f1(&gold, &gold).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions_with_gold_entities_gives_zero_recall_and_f1() {
        let pred = vec![vec![O, O, O]];
        let gold = vec![vec![B_PER, I_PER, O]];
        let (p, r, f1) = span_f1(&pred, &gold).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(f1, 0.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn half_hit_half_spurious_is_half_everything() {
        // 2 gold entities; prediction finds one exactly and invents one.
        let gold = vec![vec![B_PER, O, B_LOC, O, O]];
        let pred = vec![vec![B_PER, O, O, O, B_LOC]];
        let (p, r, f1) = span_f1(&pred, &gold).unwrap();
        assert_eq!((p, r, f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn both_empty_is_perfect_agreement() {
        let empty = vec![vec![O, O, O]];
        assert_eq!(span_f1(&empty, &empty).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn boundary_errors_count_against_both_sides() {
        // Gold [0,2) PER; prediction [0,3) PER: no exact match.
        let gold = vec![vec![B_PER, I_PER, O]];
        let pred = vec![vec![B_PER, I_PER, I_PER]];
        let (p, r, f1) = span_f1(&pred, &gold).unwrap();
        assert_eq!((p, r, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = vec![vec![O, O]];
        let b = vec![vec![O, O, O]];
        assert!(matches!(span_f1(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(span_f1(&[], &b), Err(Error::Shape(_))));
    }

    #[test]
    fn accuracy_extremes_and_errors() {
        assert_eq!(accuracy(&[1, 2, 0], &[1, 2, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1, 1], &[0, 2, 0]).unwrap(), 0.0);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Empty(_))));
        assert!(matches!(accuracy(&[1], &[1, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn three_way_random_baseline_is_near_one_third() {
        let mut rng = Rng::new(1234);
        let n = 10_000;
        let gold: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.range(3) as u8).collect();
        let acc = accuracy(&pred, &gold).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 0.02, "acc = {acc}");
    }
}
