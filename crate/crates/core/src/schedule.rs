//! Language-adapter cycling schedules for task-adapter training.
//!
//! A schedule fixes an ordered list of language-adapter tags at construction;
//! during training, step `s` activates the adapter at `s mod len`. The variant
//! determines which languages appear: from classic single-source training
//! (`Madx`) up to cycling over every language of every task (`AllMulti`), plus
//! held-out ablations.

use crate::error::{Error, Result};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    /// Source language adapter only.
    Madx,
    /// Evaluation-target adapter only; the source adapter is absent.
    Target,
    /// Source and the evaluation target, alternating.
    Bilingual,
    /// Source plus every target language of the current task.
    TaskMulti,
    /// Source plus every target language across all tasks.
    AllMulti,
    /// AllMulti minus the current task's target languages.
    LeaveOutTask,
    /// AllMulti minus the single evaluation language.
    LeaveOutTarg,
}

pub const ALL_VARIANTS: [Variant; 7] = [
    Variant::Madx,
    Variant::Target,
    Variant::Bilingual,
    Variant::TaskMulti,
    Variant::AllMulti,
    Variant::LeaveOutTask,
    Variant::LeaveOutTarg,
];

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Madx => "madx",
            Variant::Target => "target",
            Variant::Bilingual => "bilingual",
            Variant::TaskMulti => "task-multi",
            Variant::AllMulti => "all-multi",
            Variant::LeaveOutTask => "leave-out-task",
            Variant::LeaveOutTarg => "leave-out-targ",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of: madx, target, bilingual, task-multi, all-multi, leave-out-task, leave-out-targ)"
                ))
            })
    }

    /// Whether schedule construction needs a designated evaluation language.
    pub fn needs_eval_language(self) -> bool {
        matches!(self, Variant::Target | Variant::Bilingual | Variant::LeaveOutTarg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TLRSchedule {
    pub variant: Variant,
    /// Language the labeled training data must come from.
    pub source: String,
    /// Language-adapter tags in activation order.
    pub las: Vec<String>,
    /// Number of target languages exposed during training.
    pub k: usize,
}

impl TLRSchedule {
    pub fn len(&self) -> usize {
        self.las.len()
    }

    pub fn is_empty(&self) -> bool {
        self.las.is_empty()
    }

    /// Index of the adapter active at `step`.
    pub fn select_la(&self, step: u64) -> usize {
        (step % self.las.len() as u64) as usize
    }

    /// Tag of the adapter active at `step`.
    pub fn active_tag(&self, step: u64) -> &str {
        &self.las[self.select_la(step)]
    }
}

fn dedup_keep_order<'a>(langs: impl Iterator<Item = &'a String>, skip: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in langs {
        if l != skip && !out.iter().any(|x| x == l) {
            out.push(l.clone());
        }
    }
    out
}

/// Construct the LA cycling schedule for a training variant.
///
/// `task_langs` are the current task's target languages, `all_langs` the
/// union across tasks (both in registry order), `available` the set of tags
/// for which a trained language adapter exists.
pub fn build_variant(
    variant: Variant,
    source: &str,
    task_langs: &[String],
    all_langs: &[String],
    eval_lang: Option<&str>,
    available: &[String],
) -> Result<TLRSchedule> {
    if variant.needs_eval_language() && eval_lang.is_none() {
        return Err(Error::Config(format!(
            "variant `{}` requires an evaluation language",
            variant.as_str()
        )));
    }
    let las: Vec<String> = match variant {
        Variant::Madx => vec![source.to_string()],
        Variant::Target => vec![eval_lang.expect("checked").to_string()],
        Variant::Bilingual => {
            let tgt = eval_lang.expect("checked");
            if tgt == source {
                return Err(Error::Config(format!(
                    "bilingual variant needs a target distinct from the source `{source}`"
                )));
            }
            vec![source.to_string(), tgt.to_string()]
        }
        Variant::TaskMulti => {
            let mut las = vec![source.to_string()];
            las.extend(dedup_keep_order(task_langs.iter(), source));
            las
        }
        Variant::AllMulti => {
            let mut las = vec![source.to_string()];
            las.extend(dedup_keep_order(all_langs.iter(), source));
            las
        }
        Variant::LeaveOutTask => {
            let mut las = vec![source.to_string()];
            las.extend(
                dedup_keep_order(all_langs.iter(), source)
                    .into_iter()
                    .filter(|l| !task_langs.contains(l)),
            );
            if las.len() == 1 {
                return Err(Error::Config(
                    "leave-out-task leaves no target language beyond the source".into(),
                ));
            }
            las
        }
        Variant::LeaveOutTarg => {
            let held_out = eval_lang.expect("checked");
            let mut las = vec![source.to_string()];
            las.extend(
                dedup_keep_order(all_langs.iter(), source)
                    .into_iter()
                    .filter(|l| l != held_out),
            );
            las
        }
    };
    for tag in &las {
        if !available.iter().any(|a| a == tag) {
            return Err(Error::Config(format!(
                "no language adapter available for `{tag}` (variant `{}`)",
                variant.as_str()
            )));
        }
    }
    let k = match variant {
        Variant::Target => 1,
        _ => las.len() - 1,
    };
    Ok(TLRSchedule { variant, source: source.to_string(), las, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn avail() -> Vec<String> {
        strs(&["en", "a", "b", "c", "d"])
    }

    #[test]
    fn madx_is_source_only_with_k_zero() {
        let s = build_variant(Variant::Madx, "en", &strs(&["a", "b"]), &strs(&["a", "b", "c"]), None, &avail())
            .unwrap();
        assert_eq!(s.las, strs(&["en"]));
        assert_eq!(s.k, 0);
        for step in [0u64, 1, 7, 9999] {
            assert_eq!(s.select_la(step), 0);
        }
    }

    #[test]
    fn bilingual_is_source_then_target_with_k_one() {
        let s = build_variant(Variant::Bilingual, "en", &[], &[], Some("xx"), &strs(&["en", "xx"]))
            .unwrap();
        assert_eq!(s.las, strs(&["en", "xx"]));
        assert_eq!(s.k, 1);
    }

    #[test]
    fn target_drops_the_source_adapter() {
        let s = build_variant(Variant::Target, "en", &[], &[], Some("a"), &avail()).unwrap();
        assert_eq!(s.las, strs(&["a"]));
        assert_eq!(s.k, 1);
    }

    #[test]
    fn leave_out_targ_removes_only_the_eval_language() {
        let s = build_variant(
            Variant::LeaveOutTarg,
            "en",
            &strs(&["a", "b"]),
            &strs(&["a", "b", "c"]),
            Some("b"),
            &avail(),
        )
        .unwrap();
        assert_eq!(s.las, strs(&["en", "a", "c"]));
    }

    #[test]
    fn all_multi_minus_task_equals_leave_out_task() {
        let task = strs(&["a", "c"]);
        let all = strs(&["a", "b", "c", "d"]);
        let all_multi =
            build_variant(Variant::AllMulti, "en", &task, &all, None, &avail()).unwrap();
        let loo = build_variant(Variant::LeaveOutTask, "en", &task, &all, None, &avail()).unwrap();
        let derived: Vec<String> = all_multi
            .las
            .iter()
            .filter(|l| *l == "en" || !task.contains(l))
            .cloned()
            .collect();
        assert_eq!(derived, loo.las);
        assert_eq!(loo.las, strs(&["en", "b", "d"]));
    }

    #[test]
    fn leave_out_task_with_nothing_left_is_an_error() {
        let all = strs(&["a", "b"]);
        let err =
            build_variant(Variant::LeaveOutTask, "en", &all.clone(), &all, None, &avail()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn step_seven_of_three_selects_index_one() {
        let s = build_variant(
            Variant::TaskMulti,
            "en",
            &strs(&["a", "b"]),
            &strs(&["a", "b"]),
            None,
            &avail(),
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.select_la(0), 0);
        assert_eq!(s.select_la(7), 1);
    }

    #[test]
    fn round_robin_is_fair_over_any_window() {
        for len in 1..=8usize {
            let las = (0..len).map(|i| format!("l{i}")).collect::<Vec<_>>();
            let s = TLRSchedule {
                variant: Variant::AllMulti,
                source: "l0".to_string(),
                las,
                k: len.saturating_sub(1),
            };
            for window_start in [0u64, 3, 17, 1000] {
                let mut counts = vec![0usize; len];
                for step in window_start..window_start + len as u64 {
                    counts[s.select_la(step)] += 1;
                }
                assert!(counts.iter().all(|&c| c == 1), "len {len}: {counts:?}");
            }
        }
    }

    #[test]
    fn missing_adapter_is_a_configuration_error() {
        let err = build_variant(
            Variant::AllMulti,
            "en",
            &strs(&["a"]),
            &strs(&["a", "zz"]),
            None,
            &avail(),
        )
        .unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("zz"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eval_language_requirements_are_enforced() {
        for v in [Variant::Target, Variant::Bilingual, Variant::LeaveOutTarg] {
            assert!(build_variant(v, "en", &[], &strs(&["a"]), None, &avail()).is_err());
        }
        assert!(build_variant(Variant::Bilingual, "en", &[], &[], Some("en"), &avail()).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ALL_VARIANTS {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        assert!(Variant::parse("nope").is_err());
    }
}
