use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::recording::{QcReport, RecordingBundle};

/// Extra rejection rules on top of the automated checks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QcRules {
    /// Bundle ids removed by manual review.
    pub exclude: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct Rejected {
    pub bundle: RecordingBundle,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct QcOutcome {
    pub kept: Vec<RecordingBundle>,
    pub rejected: Vec<Rejected>,
}

/// Partition bundles by their QC verdicts and the exclusion list. Input order
/// is kept on both sides.
pub fn qc_filter(bundles: Vec<(RecordingBundle, QcReport)>, rules: &QcRules) -> QcOutcome {
    let mut out = QcOutcome::default();
    for (bundle, report) in bundles {
        let mut reasons: Vec<String> = report
            .failed_checks()
            .filter(|c| c.mandatory)
            .map(|c| c.name.clone())
            .collect();
        if rules.exclude.contains(&bundle.id()) {
            reasons.push("excluded".into());
        }
        if reasons.is_empty() {
            out.kept.push(bundle);
        } else {
            out.rejected.push(Rejected { bundle, reasons });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::tests::{test_meta, write_fixture};
    use crate::recording::{parse_bundle, validate_bundle};

    fn bundle(root: &std::path::Path, name: &str, portrait: bool) -> (RecordingBundle, QcReport) {
        let mut meta = test_meta();
        if portrait {
            std::mem::swap(&mut meta.rgb_width, &mut meta.rgb_height);
        }
        let dir = root.join(name);
        write_fixture(&dir, &meta, 70);
        let b = parse_bundle(&dir).unwrap();
        let r = validate_bundle(&b);
        (b, r)
    }

    #[test]
    fn partitions_in_order() {
        let tmp = tempfile::tempdir().unwrap();
        let input = vec![
            bundle(tmp.path(), "a", false),
            bundle(tmp.path(), "b", true),
            bundle(tmp.path(), "c", false),
            bundle(tmp.path(), "d", false),
        ];
        let all_pass: Vec<_> = [0, 2, 3].iter().map(|&i| input[i].clone()).collect();
        let out = qc_filter(all_pass, &QcRules::default());
        assert_eq!(out.kept.iter().map(|b| b.id()).collect::<Vec<_>>(), ["a", "c", "d"]);
        assert!(out.rejected.is_empty());

        let rules = QcRules {
            exclude: ["d".to_string()].into(),
        };
        let out = qc_filter(input, &rules);
        assert_eq!(out.kept.iter().map(|b| b.id()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(out.rejected[0].bundle.id(), "b");
        assert_eq!(out.rejected[0].reasons, ["orientation"]);
        assert_eq!(out.rejected[1].reasons, ["excluded"]);
    }
}
