//! Aggregate artifact emission: mean ± std summary tables, budget-sweep
//! aggregates, center-shift aggregates, angle histograms, and a plain-text
//! report describing what each file shows.

use crate::error::NnError;
use crate::harness::campaign::{read_rows, CampaignRow};
use crate::harness::csvutil::{fmt_float, mean_std, read_csv, write_csv};
use std::collections::BTreeMap;
use std::path::Path;

type Result<T> = std::result::Result<T, NnError>;

/// Aggregate of one (attack, method, epsilon) cell over preserved rows.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub attack: String,
    pub method: String,
    pub epsilon: f64,
    pub n_used: usize,
    pub n_excluded: usize,
    pub rank_corr: (f64, f64),
    pub topk: (f64, f64),
    pub center_shift: (f64, f64),
}

/// Groups rows by (attack, method, epsilon). Rows that failed to preserve
/// the prediction are excluded from the means and tallied separately.
pub fn summarize(rows: &[CampaignRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, u64), (Vec<&CampaignRow>, usize)> = BTreeMap::new();
    for row in rows {
        let key = (
            row.attack.clone(),
            row.method.name().to_string(),
            row.epsilon.to_bits(),
        );
        let entry = groups.entry(key).or_default();
        if row.pred_preserved {
            entry.0.push(row);
        } else {
            entry.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((attack, method, eps_bits), (used, excluded))| {
            let pick = |f: fn(&CampaignRow) -> f64| -> (f64, f64) {
                mean_std(&used.iter().map(|r| f(r)).collect::<Vec<f64>>())
            };
            SummaryRow {
                attack,
                method,
                epsilon: f64::from_bits(eps_bits),
                n_used: used.len(),
                n_excluded: excluded,
                rank_corr: pick(|r| r.rank_corr),
                topk: pick(|r| r.topk),
                center_shift: pick(|r| r.center_shift),
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 11] = [
    "attack",
    "method",
    "epsilon",
    "n_used",
    "n_excluded",
    "rank_corr_mean",
    "rank_corr_std",
    "top_k_mean",
    "top_k_std",
    "center_shift_mean",
    "center_shift_std",
];

fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.attack.clone(),
                s.method.clone(),
                fmt_float(s.epsilon),
                s.n_used.to_string(),
                s.n_excluded.to_string(),
                fmt_float(s.rank_corr.0),
                fmt_float(s.rank_corr.1),
                fmt_float(s.topk.0),
                fmt_float(s.topk.1),
                fmt_float(s.center_shift.0),
                fmt_float(s.center_shift.1),
            ]
        })
        .collect();
    write_csv(path, &SUMMARY_HEADER, &rows)
}

/// Per (attack, epsilon) means across methods — the budget-sweep curves.
fn write_eps_aggregate(path: &Path, rows: &[CampaignRow]) -> Result<()> {
    let mut groups: BTreeMap<(String, u64), Vec<&CampaignRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.pred_preserved) {
        groups
            .entry((row.attack.clone(), row.epsilon.to_bits()))
            .or_default()
            .push(row);
    }
    let out: Vec<Vec<String>> = groups
        .into_iter()
        .map(|((attack, eps_bits), members)| {
            let mean = |f: fn(&CampaignRow) -> f64| {
                mean_std(&members.iter().map(|r| f(r)).collect::<Vec<f64>>()).0
            };
            vec![
                attack,
                fmt_float(f64::from_bits(eps_bits)),
                members.len().to_string(),
                fmt_float(mean(|r| r.rank_corr)),
                fmt_float(mean(|r| r.topk)),
                fmt_float(mean(|r| r.center_shift)),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "attack",
            "epsilon",
            "n",
            "rank_corr_mean",
            "top_k_mean",
            "center_shift_mean",
        ],
        &out,
    )
}

/// Center-shift means per (attack, epsilon) — the displacement aggregate.
fn write_center_shift(path: &Path, rows: &[CampaignRow]) -> Result<()> {
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.pred_preserved) {
        groups
            .entry((row.attack.clone(), row.epsilon.to_bits()))
            .or_default()
            .push(row.center_shift);
    }
    let out: Vec<Vec<String>> = groups
        .into_iter()
        .map(|((attack, eps_bits), values)| {
            vec![
                attack,
                fmt_float(f64::from_bits(eps_bits)),
                fmt_float(mean_std(&values).0),
            ]
        })
        .collect();
    write_csv(path, &["attack", "epsilon", "center_shift_mean"], &out)
}

/// Histogram of an angles.csv (columns image_id, angle_deg): 18 bins of 5°.
fn write_angle_hist(dir: &Path) -> Result<bool> {
    let src = dir.join("angles.csv");
    if !src.exists() {
        return Ok(false);
    }
    let (header, rows) = read_csv(&src)?;
    let col = header
        .iter()
        .position(|h| h == "angle_deg")
        .ok_or_else(|| NnError::config("angles.csv lacks an angle_deg column"))?;
    let mut bins = [0usize; 18];
    for row in &rows {
        let angle: f64 = row[col]
            .parse()
            .map_err(|_| NnError::config("bad angle in angles.csv"))?;
        let b = ((angle / 5.0).floor() as usize).min(17);
        bins[b] += 1;
    }
    let out: Vec<Vec<String>> = bins
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            vec![
                format!("{}", i * 5),
                format!("{}", (i + 1) * 5),
                count.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("angle_hist.csv"),
        &["angle_lo_deg", "angle_hi_deg", "count"],
        &out,
    )?;
    Ok(true)
}

fn report_text(summary: &[SummaryRow], have_angles: bool) -> String {
    let mut text = String::new();
    text.push_str("Interpretation-fragility run report\n");
    text.push_str("===================================\n\n");
    text.push_str("Artifacts in this directory:\n");
    text.push_str("  rows.csv          one row per image x attack x budget x saliency method:\n");
    text.push_str("                    rank correlation, top-k intersection, and center-of-mass\n");
    text.push_str("                    shift between the original and perturbed saliency maps.\n");
    text.push_str("  summary.csv       mean and standard deviation of each metric per\n");
    text.push_str("                    (attack, method, budget) cell, over rows whose prediction\n");
    text.push_str("                    survived the perturbation; flipped rows are tallied in\n");
    text.push_str("                    n_excluded and never enter the means.\n");
    text.push_str("  eps_aggregate.csv metric means against the budget, per attack, averaged\n");
    text.push_str("                    across saliency methods: the budget-sweep curves.\n");
    text.push_str("  center_shift.csv  mean center-of-mass displacement per attack and budget.\n");
    text.push_str("  pgm/              before/after saliency renderings (largest budget).\n");
    text.push_str("  manifest.json     spec hash, image index, and wall-clock accounting.\n");
    if have_angles {
        text.push_str("  angle_hist.csv    histogram of interpretation-vs-prediction attack\n");
        text.push_str("                    angles from angles.csv.\n");
    }
    text.push('\n');
    if summary.is_empty() {
        text.push_str("No rows: the campaign produced no results.\n");
        return text;
    }
    text.push_str("Headline aggregates (mean over preserved rows):\n");
    for s in summary {
        text.push_str(&format!(
            "  attack={:<7} method={:<3} eps={:>6.2}/255  rank_corr={:.4}  top_k={:.4}  \
             center_shift={:.3}  n={} excluded={}\n",
            s.attack,
            s.method,
            s.epsilon,
            s.rank_corr.0,
            s.topk.0,
            s.center_shift.0,
            s.n_used,
            s.n_excluded,
        ));
    }
    text.push_str("\nReading guide: a fragile interpretation shows rank_corr and top_k well\n");
    text.push_str("below the rand baseline at the same budget, while center_shift rises;\n");
    text.push_str("the center attack should dominate the center_shift column.\n");
    text
}

/// Regenerates every aggregate artifact from rows.csv in the directory.
pub fn emit_report(dir: &Path) -> Result<()> {
    let rows = read_rows(&dir.join("rows.csv"))?;
    let summary = summarize(&rows);
    write_summary(&dir.join("summary.csv"), &summary)?;
    write_eps_aggregate(&dir.join("eps_aggregate.csv"), &rows)?;
    write_center_shift(&dir.join("center_shift.csv"), &rows)?;
    let have_angles = write_angle_hist(dir)?;
    std::fs::write(dir.join("report.txt"), report_text(&summary, have_angles))
        .map_err(NnError::io("writing report.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::campaign::write_rows;
    use crate::interpret::SaliencyMethod;

    fn row(
        image_id: usize,
        method: SaliencyMethod,
        attack: &str,
        eps: f64,
        rank: f64,
        preserved: bool,
    ) -> CampaignRow {
        CampaignRow {
            image_id,
            method,
            attack: attack.to_string(),
            epsilon: eps,
            rank_corr: rank,
            topk: rank,
            k: 10,
            center_shift: 1.0 - rank,
            pred_preserved: preserved,
        }
    }

    #[test]
    fn empty_rows_give_header_only_outputs() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join("rows.csv"), &[]).unwrap();
        emit_report(dir.path()).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1);
        assert!(summary.starts_with("attack,method,epsilon"));
        let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(report.contains("No rows"));
    }

    #[test]
    fn excluded_rows_never_enter_means() {
        let rows = vec![
            row(0, SaliencyMethod::SimpleGradient, "topk", 8.0, 0.4, true),
            row(1, SaliencyMethod::SimpleGradient, "topk", 8.0, 0.6, true),
            // A flipped row with an extreme value that would drag the mean.
            row(2, SaliencyMethod::SimpleGradient, "topk", 8.0, -1.0, false),
        ];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].n_used, 2);
        assert_eq!(summary[0].n_excluded, 1);
        assert!((summary[0].rank_corr.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn row_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        let n_images = 3;
        let attacks = ["rand", "topk"];
        let epsilons = [2.0, 8.0];
        let methods = [
            SaliencyMethod::SimpleGradient,
            SaliencyMethod::IntegratedGradients,
            SaliencyMethod::DeepLift,
        ];
        for img in 0..n_images {
            for attack in attacks {
                for eps in epsilons {
                    for m in methods {
                        rows.push(row(img, m, attack, eps, 0.5 + 0.1 * img as f64, true));
                    }
                }
            }
        }
        assert_eq!(
            rows.len(),
            n_images * attacks.len() * epsilons.len() * methods.len()
        );
        write_rows(&dir.path().join("rows.csv"), &rows).unwrap();
        emit_report(dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("summary.csv")).unwrap();
        emit_report(dir.path()).unwrap();
        let second = std::fs::read(dir.path().join("summary.csv")).unwrap();
        assert_eq!(first, second);
        let (_, summary_rows) = read_csv(&dir.path().join("summary.csv")).unwrap();
        // 2 attacks × 3 methods × 2 epsilons cells.
        assert_eq!(summary_rows.len(), 12);
    }

    #[test]
    fn angle_histogram_bins() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join("rows.csv"), &[]).unwrap();
        write_csv(
            &dir.path().join("angles.csv"),
            &["image_id", "angle_deg"],
            &[
                vec!["0".into(), "0.4".into()],
                vec!["1".into(), "4.9".into()],
                vec!["2".into(), "5.1".into()],
                vec!["3".into(), "89.9".into()],
            ],
        )
        .unwrap();
        emit_report(dir.path()).unwrap();
        let (_, bins) = read_csv(&dir.path().join("angle_hist.csv")).unwrap();
        assert_eq!(bins.len(), 18);
        assert_eq!(bins[0][2], "2");
        assert_eq!(bins[1][2], "1");
        assert_eq!(bins[17][2], "1");
    }
}
