//! Convergence diagnostics for multi-chain MCMC output: split R-hat and
//! effective sample size with Geyer's initial monotone sequence estimator.

/// Sample mean and (n − 1)-denominator standard deviation.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

pub fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let h = (s.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = len / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        out.push(&c[..half]);
        out.push(&c[len - half..len]);
    }
    out
}

fn within_between(chains: &[&[f64]]) -> (f64, f64, usize) {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_sd(c)).collect();
    let w = stats.iter().map(|(_, sd)| sd * sd).sum::<f64>() / m;
    let grand = stats.iter().map(|(mu, _)| mu).sum::<f64>() / m;
    let b = if chains.len() > 1 {
        n as f64 * stats.iter().map(|(mu, _)| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (w, b, n)
}

/// Split R-hat. Requires at least two chains; constant chains give 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let halves = split(chains);
    if halves[0].len() < 2 {
        return None;
    }
    let (w, b, n) = within_between(&halves);
    if w == 0.0 {
        return Some(1.0);
    }
    let n = n as f64;
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Effective sample size over split chains.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    let total: usize = halves.iter().map(|c| c.len()).sum();
    if halves.is_empty() || halves[0].len() < 4 {
        return total as f64;
    }
    let (w, b, n) = within_between(&halves);
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + if halves.len() > 1 { b / nf } else { 0.0 };
    if !(var_plus > 0.0) {
        return total as f64;
    }
    let centered: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| {
            let (mu, _) = mean_sd(c);
            c.iter().map(|v| v - mu).collect()
        })
        .collect();
    let m = halves.len() as f64;
    // within-chain variance uses n − 1, autocovariances use n
    let rho = |t: usize| {
        let mean_acov = centered
            .iter()
            .map(|c| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m;
        1.0 - (w - mean_acov) / var_plus
    };

    // Geyer: sum pairs while positive, enforcing monotonicity.
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = tau.max(1.0 / (total as f64).log10().max(1.0));
    total as f64 / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let e = iid(seed, n);
        let mut out = Vec::with_capacity(n);
        let mut x = 0.0;
        for v in e {
            x = phi * x + (1.0 - phi * phi).sqrt() * v;
            out.push(x);
        }
        out
    }

    #[test]
    fn iid_chains_have_full_ess_and_unit_rhat() {
        let chains = vec![iid(1, 4000), iid(2, 4000)];
        let e = ess(&chains);
        assert!(e > 6500.0 && e < 9500.0, "{e}");
        let r = split_rhat(&chains).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // integrated autocorrelation time (1 + φ) / (1 − φ) = 9 for φ = 0.8
        let chains = vec![ar1(3, 20000, 0.8), ar1(4, 20000, 0.8)];
        let e = ess(&chains);
        let expect = 40000.0 / 9.0;
        assert!((e / expect - 1.0).abs() < 0.15, "{e} vs {expect}");
    }

    #[test]
    fn shifted_chains_inflate_rhat() {
        let a = iid(5, 2000);
        let b: Vec<f64> = iid(6, 2000).into_iter().map(|v| v + 3.0).collect();
        assert!(split_rhat(&[a, b]).unwrap() > 1.5);
    }

    #[test]
    fn single_chain_has_no_rhat() {
        assert!(split_rhat(&[iid(7, 100)]).is_none());
    }

    #[test]
    fn quantiles_interpolate() {
        let x = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert_eq!(quantile(&x, 0.5), 2.5);
    }
}
