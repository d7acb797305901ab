use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification summary derived from a confusion matrix (rows true, columns predicted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Data("confusion matrix must be square and nonempty".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        let diag: usize = (0..k).map(|i| confusion[i][i]).sum();
        let mut precision = Vec::with_capacity(k);
        let mut recall = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        for c in 0..k {
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let p = ratio(confusion[c][c], predicted);
            let r = ratio(confusion[c][c], actual);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
        let macro_recall = mean(&recall);
        Ok(Self {
            accuracy: ratio(diag, total),
            balanced_accuracy: macro_recall,
            macro_precision: mean(&precision),
            macro_recall,
            macro_f1: mean(&f1),
            precision,
            recall,
            f1,
            confusion,
        })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Data(format!("{} labels but {} predictions", labels.len(), predictions.len())));
        }
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for (i, (&y, &p)) in labels.iter().zip(predictions).enumerate() {
            if y >= n_classes || p >= n_classes {
                return Err(Error::Data(format!("class out of range at sample {i}: label {y}, prediction {p}")));
            }
            confusion[y][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Aligned text block.
    pub fn render(&self) -> String {
        let mut out = format!(
            "accuracy           {:.4}\nbalanced accuracy  {:.4}\nmacro precision    {:.4}\nmacro recall       {:.4}\nmacro F1           {:.4}\n",
            self.accuracy, self.balanced_accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        out.push_str("class  precision  recall  f1\n");
        for c in 0..self.precision.len() {
            out.push_str(&format!("{c:<5}  {:<9.4}  {:<6.4}  {:.4}\n", self.precision[c], self.recall[c], self.f1[c]));
        }
        out.push_str("confusion (rows true, columns predicted)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:>5}")).collect();
            out.push_str(&cells.join(""));
            out.push('\n');
        }
        out
    }
}
