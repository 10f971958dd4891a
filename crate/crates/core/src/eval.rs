//! Classification metrics, confusion matrices, model-disagreement analysis
//! and plain-text/CSV rendering.

use std::fmt::Write as _;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::heuristic::LabelStats;

/// Rows are gold labels, columns predicted labels, both in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub cells: [[usize; 4]; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: [Prf; 4],
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DisagreementReport {
    pub n_total: usize,
    pub n_disagree: usize,
    pub a_correct_in_disagree: usize,
    pub b_correct_in_disagree: usize,
    pub n_agree: usize,
    pub agree_correct: usize,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub fn confusion_matrix(golds: &[Label], preds: &[Label]) -> Result<ConfusionMatrix> {
    check_len(golds.len(), preds.len())?;
    let mut cm = ConfusionMatrix::default();
    for (g, p) in golds.iter().zip(preds) {
        cm.cells[g.index()][p.index()] += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: Label) -> usize {
        self.cells[gold.index()].iter().sum()
    }

    pub fn col_sum(&self, pred: Label) -> usize {
        self.cells.iter().map(|r| r[pred.index()]).sum()
    }

    pub fn correct(&self) -> usize {
        (0..4).map(|i| self.cells[i][i]).sum()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1; every 0/0 is taken as 0.
pub fn per_class_prf(cm: &ConfusionMatrix) -> [Prf; 4] {
    let mut out = [Prf::default(); 4];
    for l in Label::ALL {
        let i = l.index();
        let tp = cm.cells[i][i];
        let precision = ratio(tp, cm.col_sum(l));
        let recall = ratio(tp, cm.row_sum(l));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out[i] = Prf {
            precision,
            recall,
            f1,
            support: cm.row_sum(l),
        };
    }
    out
}

/// Pooled F1, which for single-label multiclass data is plain accuracy.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::invalid("micro F1 of an empty evaluation set"));
    }
    Ok(cm.correct() as f64 / n as f64)
}

/// Unweighted mean of the four per-class F1 scores, absent classes included.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::invalid("macro F1 of an empty evaluation set"));
    }
    Ok(per_class_prf(cm).iter().map(|p| p.f1).sum::<f64>() / 4.0)
}

pub fn eval_report(cm: &ConfusionMatrix) -> Result<EvalReport> {
    Ok(EvalReport {
        per_class: per_class_prf(cm),
        micro_f1: micro_f1(cm)?,
        macro_f1: macro_f1(cm)?,
        n: cm.total(),
    })
}

pub fn evaluate(golds: &[Label], preds: &[Label]) -> Result<(EvalReport, ConfusionMatrix)> {
    let cm = confusion_matrix(golds, preds)?;
    Ok((eval_report(&cm)?, cm))
}

pub fn disagreement_report(
    preds_a: &[Label],
    preds_b: &[Label],
    golds: &[Label],
) -> Result<DisagreementReport> {
    check_len(preds_a.len(), golds.len())?;
    check_len(preds_b.len(), golds.len())?;
    let mut r = DisagreementReport {
        n_total: golds.len(),
        ..Default::default()
    };
    for ((a, b), g) in preds_a.iter().zip(preds_b).zip(golds) {
        if a == b {
            r.n_agree += 1;
            r.agree_correct += usize::from(a == g);
        } else {
            r.n_disagree += 1;
            r.a_correct_in_disagree += usize::from(a == g);
            r.b_correct_in_disagree += usize::from(b == g);
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

/// Deterministic rendering. Reals always carry four decimals, rounded
/// half-to-even on the exact binary value.
pub trait Render {
    fn render(&self, format: Format) -> String;
}

pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

impl Render for ConfusionMatrix {
    fn render(&self, format: Format) -> String {
        let mut s = String::new();
        match format {
            Format::Csv => {
                s.push_str("gold\\pred");
                for l in Label::ALL {
                    let _ = write!(s, ",{l}");
                }
                s.push('\n');
                for g in Label::ALL {
                    s.push_str(g.as_str());
                    for c in self.cells[g.index()] {
                        let _ = write!(s, ",{c}");
                    }
                    s.push('\n');
                }
            }
            Format::Text => {
                let _ = write!(s, "{:<10}", "gold\\pred");
                for l in Label::ALL {
                    let _ = write!(s, "{:>10}", l.as_str());
                }
                s.push('\n');
                for g in Label::ALL {
                    let _ = write!(s, "{:<10}", g.as_str());
                    for c in self.cells[g.index()] {
                        let _ = write!(s, "{c:>10}");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

impl EvalReport {
    fn macro_prf(&self) -> (f64, f64) {
        let p = self.per_class.iter().map(|c| c.precision).sum::<f64>() / 4.0;
        let r = self.per_class.iter().map(|c| c.recall).sum::<f64>() / 4.0;
        (p, r)
    }
}

impl Render for EvalReport {
    fn render(&self, format: Format) -> String {
        let (mp, mr) = self.macro_prf();
        let mut rows: Vec<[String; 5]> = Label::ALL
            .iter()
            .map(|l| {
                let c = &self.per_class[l.index()];
                [
                    l.to_string(),
                    fmt4(c.precision),
                    fmt4(c.recall),
                    fmt4(c.f1),
                    c.support.to_string(),
                ]
            })
            .collect();
        let m = fmt4(self.micro_f1);
        rows.push(["micro".into(), m.clone(), m.clone(), m, self.n.to_string()]);
        rows.push([
            "macro".into(),
            fmt4(mp),
            fmt4(mr),
            fmt4(self.macro_f1),
            self.n.to_string(),
        ]);

        let header = ["class", "precision", "recall", "f1", "support"];
        let mut s = String::new();
        match format {
            Format::Csv => {
                s.push_str(&header.join(","));
                s.push('\n');
                for r in rows {
                    s.push_str(&r.join(","));
                    s.push('\n');
                }
            }
            Format::Text => {
                let _ = writeln!(
                    s,
                    "{:<10}{:>10}{:>10}{:>10}{:>10}",
                    header[0], header[1], header[2], header[3], header[4]
                );
                for r in rows {
                    let _ = writeln!(
                        s,
                        "{:<10}{:>10}{:>10}{:>10}{:>10}",
                        r[0], r[1], r[2], r[3], r[4]
                    );
                }
            }
        }
        s
    }
}

impl Render for DisagreementReport {
    fn render(&self, format: Format) -> String {
        let fields = [
            ("n_total", self.n_total),
            ("n_disagree", self.n_disagree),
            ("a_correct_in_disagree", self.a_correct_in_disagree),
            ("b_correct_in_disagree", self.b_correct_in_disagree),
            ("n_agree", self.n_agree),
            ("agree_correct", self.agree_correct),
        ];
        let mut s = String::new();
        match format {
            Format::Csv => {
                s.push_str(&fields.iter().map(|f| f.0).collect::<Vec<_>>().join(","));
                s.push('\n');
                s.push_str(
                    &fields
                        .iter()
                        .map(|f| f.1.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                );
                s.push('\n');
            }
            Format::Text => {
                for (k, v) in fields {
                    let _ = writeln!(s, "{k:<24}{v:>8}");
                }
            }
        }
        s
    }
}

impl Render for LabelStats {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_string(),
            Format::Csv => {
                let mut s = String::from("label,count\n");
                for l in Label::ALL {
                    let _ = writeln!(s, "{l},{}", self.count(l));
                }
                let _ = writeln!(s, "total,{}", self.total);
                s
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn matrix_cells() {
        let cm = confusion_matrix(&[Positive; 3], &[Positive; 3]).unwrap();
        assert_eq!(cm.cells[0][0], 3);
        assert_eq!(cm.total(), 3);

        let cm = confusion_matrix(&[Positive, Negative], &[Negative, Positive]).unwrap();
        assert_eq!((cm.cells[0][1], cm.cells[1][0], cm.correct()), (1, 1, 0));

        assert_eq!(
            confusion_matrix(&[], &[]).unwrap(),
            ConfusionMatrix::default()
        );
        assert!(confusion_matrix(&[Positive], &[]).is_err());
    }

    #[test]
    fn worked_example() {
        let (r, _) = evaluate(
            &[Positive, Positive, Negative, Neutral],
            &[Positive, Negative, Negative, Neutral],
        )
        .unwrap();
        let f1: Vec<f64> = r.per_class.iter().map(|p| p.f1).collect();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1[2], 1.0);
        assert_eq!(f1[3], 0.0);
        assert_eq!(r.micro_f1, 0.75);
        assert!((r.macro_f1 - 0.583_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn empty_set_errors() {
        let cm = ConfusionMatrix::default();
        assert!(micro_f1(&cm).is_err());
        assert!(macro_f1(&cm).is_err());
        assert_eq!(per_class_prf(&cm)[3].f1, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let g = [Positive, Negative, Mixed];
        let (r, _) = evaluate(&g, &g).unwrap();
        assert_eq!(r.micro_f1, 1.0);
        assert_eq!(r.per_class[Neutral.index()].f1, 0.0);
        assert_eq!(r.per_class[Mixed.index()].f1, 1.0);
    }

    #[test]
    fn disagreement_worked_example() {
        let r = disagreement_report(
            &[Positive, Negative, Mixed],
            &[Positive, Neutral, Neutral],
            &[Positive, Negative, Neutral],
        )
        .unwrap();
        assert_eq!(
            r,
            DisagreementReport {
                n_total: 3,
                n_disagree: 2,
                a_correct_in_disagree: 1,
                b_correct_in_disagree: 1,
                n_agree: 1,
                agree_correct: 1
            }
        );
        let same = disagreement_report(
            &[Positive, Mixed],
            &[Positive, Mixed],
            &[Positive, Negative],
        )
        .unwrap();
        assert_eq!((same.n_disagree, same.agree_correct), (0, 1));
        assert!(disagreement_report(&[Positive], &[Positive, Mixed], &[Positive]).is_err());
    }

    #[test]
    fn pairwise_distinct_predictions_respect_bounds() {
        let r = disagreement_report(&[Positive, Negative], &[Negative, Neutral], &[Mixed, Mixed])
            .unwrap();
        assert_eq!((r.a_correct_in_disagree, r.b_correct_in_disagree), (0, 0));
        assert_eq!(r.n_agree + r.n_disagree, r.n_total);
    }

    #[test]
    fn rendering() {
        let zero = ConfusionMatrix::default().render(Format::Csv);
        assert_eq!(
            zero,
            "gold\\pred,positive,negative,neutral,mixed\npositive,0,0,0,0\nnegative,0,0,0,0\nneutral,0,0,0,0\nmixed,0,0,0,0\n"
        );
        let text = ConfusionMatrix::default().render(Format::Text);
        assert_eq!(text.lines().count(), 5);

        let (r, _) = evaluate(
            &[Positive, Positive, Negative, Neutral],
            &[Positive, Negative, Negative, Neutral],
        )
        .unwrap();
        let csv = r.render(Format::Csv);
        assert!(
            csv.lines()
                .any(|l| l.starts_with("micro,") && l.contains("0.7500")),
            "{csv}"
        );
        assert!(csv.contains("macro,"));
        assert_eq!(csv, r.render(Format::Csv));
        assert_eq!(r.render(Format::Text), r.render(Format::Text));
    }

    #[test]
    fn four_decimal_rounding_is_half_even() {
        assert_eq!(fmt4(0.03125), "0.0312");
        assert_eq!(fmt4(0.09375), "0.0938");
        assert_eq!(fmt4(2.0 / 3.0), "0.6667");
        assert_eq!(fmt4(1.0), "1.0000");
    }
}
