//! k-means with k-means++ seeding, restarts, and spherical-Gaussian BIC.

use rand::Rng;

/// One Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after the final update.
    pub wss: f64,
    /// WSS after seeding and after every Lloyd iteration.
    pub wss_trace: Vec<f64>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut dist: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        centroids.push(data[pick].clone());
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, centroids.last().unwrap()));
        }
    }
    centroids
}

fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize]) -> f64 {
    let mut wss = 0.0;
    for (a, x) in assignments.iter_mut().zip(data) {
        let (c, d) = nearest(x, centroids);
        *a = c;
        wss += d;
    }
    wss
}

fn wss_of(data: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    data.iter().zip(assignments).map(|(x, &a)| sq_dist(x, &centroids[a])).sum()
}

/// Recomputes centroids as member means; an emptied cluster takes over the
/// point currently farthest from its centroid.
fn update(data: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let dim = data[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            let (far, _) = data
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignments[*i]] > 1)
                .map(|(i, x)| (i, sq_dist(x, &centroids[assignments[i]])))
                .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if far == usize::MAX {
                continue;
            }
            let old = assignments[far];
            counts[old] -= 1;
            counts[c] = 1;
            assignments[far] = c;
            centroids[c] = data[far].clone();
            // the donor's mean shifts once the point leaves
            let n_old = counts[old] as f64;
            for (m, v) in centroids[old].iter_mut().zip(&data[far]) {
                *m = (*m * (n_old + 1.0) - v) / n_old;
            }
        }
    }
}

pub fn kmeans<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> KMeansFit {
    let mut centroids = seed_plus_plus(data, k, rng);
    let mut assignments = vec![0; data.len()];
    let mut trace = vec![assign(data, &centroids, &mut assignments)];
    for _ in 0..max_iter {
        let before = assignments.clone();
        update(data, &mut centroids, &mut assignments);
        trace.push(wss_of(data, &centroids, &assignments));
        assign(data, &centroids, &mut assignments);
        if assignments == before {
            break;
        }
    }
    update(data, &mut centroids, &mut assignments);
    let wss = wss_of(data, &centroids, &assignments);
    trace.push(wss);
    KMeansFit { assignments, centroids, wss, wss_trace: trace }
}

/// Best of `restarts` runs by WSS.
pub fn kmeans_restarts<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> KMeansFit {
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = kmeans(data, k, max_iter, rng);
        if best.as_ref().is_none_or(|b| fit.wss < b.wss) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

/// BIC of a hard partition under a spherical Gaussian mixture with one
/// variance per cluster and mixing weights `n_c / N`. Lower is better.
///
/// Each cluster variance is shrunk toward the pooled variance by one pseudo
/// point, `(wss_c + d s0) / (d (n_c + 1))`, which keeps singleton clusters
/// finite. `None` when the partition has zero residual (the likelihood is
/// unbounded).
pub fn spherical_bic(data: &[Vec<f64>], fit: &KMeansFit) -> Option<f64> {
    let n = data.len() as f64;
    let d = data[0].len() as f64;
    let k = fit.centroids.len();
    let pooled = fit.wss / (n * d);
    if !(pooled > 0.0) {
        return None;
    }
    let mut counts = vec![0usize; k];
    let mut wss = vec![0.0; k];
    for (x, &a) in data.iter().zip(&fit.assignments) {
        counts[a] += 1;
        wss[a] += sq_dist(x, &fit.centroids[a]);
    }
    let mut log_lik = 0.0;
    for (&c, &w) in counts.iter().zip(&wss) {
        if c == 0 {
            continue;
        }
        let nc = c as f64;
        let var = (w + d * pooled) / (d * (nc + 1.0));
        log_lik += nc * (nc / n).ln() - 0.5 * nc * d * (std::f64::consts::TAU * var).ln() - w / (2.0 * var);
    }
    let params = (k as f64 - 1.0) + k as f64 * d + k as f64;
    Some(-2.0 * log_lik + params * n.ln())
}
