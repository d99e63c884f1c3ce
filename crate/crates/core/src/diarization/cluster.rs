use crate::error::{Error, Result};
use crate::gap::cosine;

/// Average-linkage agglomerative clustering under cosine distance, merged
/// down to exactly `k` clusters.
///
/// The `n` inputs start as clusters `0..n`; each merge creates a cluster with
/// the next unused index. Among equal minimum linkages the pair with the
/// lexicographically smallest `(i, j)`, `i < j`, is merged. Returned labels
/// number the surviving clusters `0..k` in order of creation.
pub fn agglomerative_cluster(embeddings: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let n = embeddings.len();
    if k < 1 || k > n {
        return Err(Error::invalid(format!("cluster count {k} outside [1, {n}]")));
    }
    // Pairwise distance sums between live clusters; average linkage is the
    // sum divided by the product of sizes.
    let total = 2 * n - k;
    let mut sums = vec![vec![0.0; total]; total];
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine(&embeddings[i], &embeddings[j])?;
            sums[i][j] = d;
            sums[j][i] = d;
        }
    }
    let mut size = vec![0usize; total];
    size[..n].iter_mut().for_each(|s| *s = 1);
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    members.resize(total, Vec::new());
    let mut live: Vec<usize> = (0..n).collect();

    let mut next = n;
    while live.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (a, &i) in live.iter().enumerate() {
            for &j in &live[a + 1..] {
                let link = sums[i][j] / (size[i] * size[j]) as f64;
                if best.is_none_or(|(b, _, _)| link < b) {
                    best = Some((link, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two live clusters");
        for &m in &live {
            if m != i && m != j {
                let s = sums[i][m] + sums[j][m];
                sums[next][m] = s;
                sums[m][next] = s;
            }
        }
        size[next] = size[i] + size[j];
        let mut merged = std::mem::take(&mut members[i]);
        merged.append(&mut members[j]);
        members[next] = merged;
        live.retain(|&c| c != i && c != j);
        live.push(next);
        next += 1;
    }

    let mut labels = vec![0usize; n];
    for (label, &c) in live.iter().enumerate() {
        for &m in &members[c] {
            labels[m] = label;
        }
    }
    Ok(labels)
}
