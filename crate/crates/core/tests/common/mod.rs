#![allow(dead_code, clippy::needless_range_loop)]

use memehead::head::{ClassifierKind, FusionKind, HeadConfig};

/// All-pairs one-vs-rest AUROC: a positive outranking a negative scores 1,
/// a tie 1/2. Classes without both positives and negatives are skipped.
pub fn auroc_all_pairs(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Option<f64> {
    let mut aucs = Vec::new();
    for c in 0..n_classes {
        let pos: Vec<f64> = (0..labels.len())
            .filter(|&i| labels[i] == c)
            .map(|i| scores[i][c])
            .collect();
        let neg: Vec<f64> = (0..labels.len())
            .filter(|&i| labels[i] != c)
            .map(|i| scores[i][c])
            .collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        aucs.push(wins / (pos.len() * neg.len()) as f64);
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Macro F1 from an explicit confusion matrix `m[truth][pred]`.
pub fn f1_confusion(preds: &[usize], labels: &[usize], n_classes: usize) -> (f64, Vec<f64>) {
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        m[y][p] += 1;
    }
    let per: Vec<f64> = (0..n_classes)
        .map(|c| {
            let tp = m[c][c];
            let fp: usize = (0..n_classes).filter(|&r| r != c).map(|r| m[r][c]).sum();
            let fn_: usize = (0..n_classes).filter(|&p| p != c).map(|p| m[c][p]).sum();
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .collect();
    (per.iter().sum::<f64>() / n_classes as f64, per)
}

/// Trainable scalars by listing every tensor shape.
pub fn shape_sum(c: &HeadConfig) -> usize {
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    let branch = if c.use_projection {
        for _ in 0..2 {
            shapes.push((c.d_proj, c.d_embed));
            shapes.push((c.d_proj, 1));
        }
        c.d_proj
    } else {
        c.d_embed
    };
    if c.use_adapters {
        let hidden = branch / c.adapter_reduction;
        for _ in 0..2 {
            shapes.extend([(hidden, branch), (hidden, 1), (branch, hidden), (branch, 1)]);
        }
    }
    let fused = match c.fusion_kind {
        FusionKind::Multiply => branch,
        FusionKind::Concat => 2 * branch,
    };
    match c.classifier_kind {
        ClassifierKind::Cosine => {
            shapes.extend([(fused, fused), (fused, 1), (c.n_classes, fused)]);
        }
        ClassifierKind::Linear => {
            shapes.extend([(c.n_classes, fused), (c.n_classes, 1)]);
        }
    }
    shapes.iter().map(|(r, k)| r * k).sum()
}
