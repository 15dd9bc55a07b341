/// Fraction of `confidences` at or above `threshold`; `-inf` entries (no
/// candidate) never count.
pub fn coverage_at(confidences: &[f64], threshold: f64) -> f64 {
    if confidences.is_empty() {
        return 0.0;
    }
    let n = confidences
        .iter()
        .filter(|&&c| c > f64::NEG_INFINITY && c >= threshold)
        .count();
    n as f64 / confidences.len() as f64
}

/// Smallest threshold whose coverage does not exceed `target_coverage`.
///
/// Candidates are the observed confidences; when even the largest one
/// triggers too often the result sits just above it. Coverage 1 or more
/// gives `-inf` (always trigger) and 0 or less gives `+inf`.
pub fn calibrate(confidences: &[f64], target_coverage: f64) -> f64 {
    if target_coverage >= 1.0 {
        return f64::NEG_INFINITY;
    }
    if target_coverage <= 0.0 {
        return f64::INFINITY;
    }
    let mut finite: Vec<f64> = confidences.iter().copied().filter(|c| c.is_finite()).collect();
    finite.sort_by(|a, b| b.total_cmp(a));
    let allowed = target_coverage * confidences.len() as f64;
    let Some(&top) = finite.first() else {
        return f64::NEG_INFINITY;
    };
    let mut best = top.next_up();
    let mut i = 0;
    while i < finite.len() {
        let v = finite[i];
        let mut j = i;
        while j < finite.len() && finite[j] == v {
            j += 1;
        }
        // `j` values are >= v
        if j as f64 <= allowed + 1e-9 {
            best = v;
        } else {
            break;
        }
        i = j;
    }
    best
}
