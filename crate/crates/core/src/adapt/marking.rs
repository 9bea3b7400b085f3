/// Dörfler marking with minimal cardinality.
///
/// Negative decays are clamped to zero. Elements are ranked by decay
/// (descending, ties by ascending id) and the shortest prefix whose sum
/// reaches `theta` times the total is returned. A zero total gives an empty
/// set.
pub fn dorfler_mark(decays: &[f64], theta: f64) -> Vec<usize> {
    let clamped: Vec<f64> = decays.iter().map(|&d| if d > 0.0 { d } else { 0.0 }).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..clamped.len()).collect();
    order.sort_by(|&a, &b| clamped[b].total_cmp(&clamped[a]).then(a.cmp(&b)));
    let target = theta * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for id in order {
        if clamped[id] == 0.0 {
            break;
        }
        marked.push(id);
        acc += clamped[id];
        if acc >= target {
            break;
        }
    }
    marked
}
