//! Trend statistics over entropy and error series.

use alloc::vec;
use alloc::vec::Vec;

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start..end (0-based) share (start + 1 + end) / 2
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

/// Spearman rank correlation. `None` for fewer than two points, unequal
/// lengths, or a constant series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Whether each element is at most the previous one.
pub fn is_non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), [2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_against_scipy() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let y = [9.1, 8.7, 8.9, 7.5, 7.5, 6.0, 6.2, 5.1];
        // scipy.stats.spearmanr
        assert!((spearman(&x, &y).unwrap() - -0.946_124_746_911_474_6).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 2.0, 2.0, 1.0, 3.0]).unwrap();
        assert!((r - 0.223_606_797_749_978_94).abs() < 1e-12);
    }

    #[test]
    fn spearman_edges() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[4.0, 4.0]), None);
    }

    #[test]
    fn monotone() {
        assert!(is_non_increasing(&[3.0, 2.0, 2.0, 1.0]));
        assert!(!is_non_increasing(&[3.0, 2.0, 2.5]));
        assert!(is_non_increasing(&[]));
    }
}
