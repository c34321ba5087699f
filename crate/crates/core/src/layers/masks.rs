//! Fixed binary channel masks for Masksembles layers.
//!
//! Every mask keeps `m = round(C / s)` of the `C` channels. At `s = 1` this is
//! `C` (all masks identical, a plain network); at `s = k` it is `C/k`
//! (disjoint masks, an ensemble of thin networks).
//!
//! Generation is greedy. Channel coverage counts (how many masks include a
//! channel) are spread as evenly as possible, then channels are assigned one
//! at a time to the subset of masks that keeps per-mask counts level and,
//! among those, adds the least pairwise overlap. Ties go to the
//! lexicographically smallest subset. The greedy result is then refined by
//! swapping mask memberships between two channels (which keeps every mask's
//! count fixed) while that lowers the sum of squared pairwise overlaps; for a
//! fixed total this sum is smallest exactly when all overlaps differ by at
//! most one. Seeded random swaps kick the search out of local minima.
//! Finally the channel order is shuffled by the seed; a column permutation
//! leaves counts and overlaps unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng::{stream, Rng};
use crate::math::tensor::Tensor;

/// Upper bound on `k`; subset enumeration is exponential in it.
pub const MAX_MASKS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub k: usize,
    pub width: usize,
    pub scale: f64,
    pub seed: u64,
    masks: Vec<Vec<bool>>,
}

/// Channels kept per mask for `k` masks of `width` channels at overlap `scale`.
pub fn ones_per_mask(_k: usize, width: usize, scale: f64) -> usize {
    (width as f64 / scale).round() as usize
}

fn validate(k: usize, width: usize, scale: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::config("k", format!("need at least 2 masks, got {k}")));
    }
    if k > MAX_MASKS {
        return Err(Error::config(
            "k",
            format!("at most {MAX_MASKS} masks are supported, got {k}"),
        ));
    }
    if width < k {
        return Err(Error::config(
            "width",
            format!("width {width} cannot hold one channel for each of {k} masks"),
        ));
    }
    if !(scale >= 1.0 && scale <= k as f64) {
        return Err(Error::config(
            "scale",
            format!("scale must lie in [1, {k}], got {scale}"),
        ));
    }
    Ok(())
}

/// Lexicographic `c`-subsets of `0..k`.
fn subsets(k: usize, c: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, c: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == c {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            if k - i < c - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, k, c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, c, &mut Vec::with_capacity(c), &mut out);
    out
}

pub fn generate_masks(k: usize, width: usize, scale: f64, seed: u64) -> Result<MaskSet> {
    validate(k, width, scale)?;
    let m = ones_per_mask(k, width, scale).clamp(1, width);

    let total = k * m;
    let base = total / width;
    let extra = total % width;
    let coverage: Vec<usize> = (0..width).map(|u| base + usize::from(u < extra)).collect();

    let mut counts = vec![0usize; k];
    let mut overlap = vec![vec![0usize; k]; k];
    let mut columns: Vec<Vec<bool>> = Vec::with_capacity(width);
    let mut cache: Vec<Option<Vec<Vec<usize>>>> = vec![None; k + 1];

    for &c in &coverage {
        let candidates = cache[c].get_or_insert_with(|| subsets(k, c));
        let mut best: Option<(usize, usize, usize, usize)> = None;
        for (idx, s) in candidates.iter().enumerate() {
            let load: usize = s.iter().map(|&i| counts[i]).sum();
            let mut max_ov = 0;
            let mut sum_ov = 0;
            for (a, &i) in s.iter().enumerate() {
                for &j in &s[a + 1..] {
                    max_ov = max_ov.max(overlap[i][j] + 1);
                    sum_ov += overlap[i][j];
                }
            }
            let key = (load, max_ov, sum_ov, idx);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let chosen = &candidates[best.expect("at least one subset").3];
        let mut column = vec![false; k];
        for (a, &i) in chosen.iter().enumerate() {
            column[i] = true;
            counts[i] += 1;
            for &j in &chosen[a + 1..] {
                overlap[i][j] += 1;
                overlap[j][i] += 1;
            }
        }
        columns.push(column);
    }

    refine(&mut columns, k, seed);

    let mut order: Vec<usize> = (0..width).collect();
    Rng::new(seed, stream::SHUFFLE).shuffle(&mut order);

    let masks = (0..k)
        .map(|i| order.iter().map(|&u| columns[u][i]).collect())
        .collect();
    Ok(MaskSet {
        k,
        width,
        scale,
        seed,
        masks,
    })
}

fn overlaps_of(columns: &[Vec<bool>], k: usize) -> Vec<Vec<i64>> {
    let mut ov = vec![vec![0i64; k]; k];
    for col in columns {
        for i in 0..k {
            if !col[i] {
                continue;
            }
            for j in i + 1..k {
                if col[j] {
                    ov[i][j] += 1;
                    ov[j][i] += 1;
                }
            }
        }
    }
    ov
}

fn spread(ov: &[Vec<i64>]) -> i64 {
    let k = ov.len();
    let pairs = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j)));
    let (lo, hi) = pairs.fold((i64::MAX, i64::MIN), |(lo, hi), (i, j)| {
        (lo.min(ov[i][j]), hi.max(ov[i][j]))
    });
    if lo > hi {
        0
    } else {
        hi - lo
    }
}

/// Change in the sum of squared overlaps if channel `u` moves from mask `a`
/// to `b` while channel `v` moves from `b` to `a`.
fn swap_delta(columns: &[Vec<bool>], ov: &[Vec<i64>], u: usize, v: usize, a: usize, b: usize) -> i64 {
    let k = ov.len();
    let mut delta = 0;
    for i in 0..k {
        if i == a || i == b {
            continue;
        }
        let da = i64::from(columns[v][i]) - i64::from(columns[u][i]);
        let db = -da;
        delta += (ov[a][i] + da).pow(2) - ov[a][i].pow(2);
        delta += (ov[b][i] + db).pow(2) - ov[b][i].pow(2);
    }
    delta
}

fn apply_swap(columns: &mut [Vec<bool>], ov: &mut [Vec<i64>], u: usize, v: usize, a: usize, b: usize) {
    let k = ov.len();
    for i in 0..k {
        if i == a || i == b {
            continue;
        }
        let da = i64::from(columns[v][i]) - i64::from(columns[u][i]);
        ov[a][i] += da;
        ov[i][a] += da;
        ov[b][i] -= da;
        ov[i][b] -= da;
    }
    columns[u][a] = false;
    columns[u][b] = true;
    columns[v][b] = false;
    columns[v][a] = true;
}

fn valid_swap(columns: &[Vec<bool>], u: usize, v: usize, a: usize, b: usize) -> bool {
    columns[u][a] && !columns[u][b] && columns[v][b] && !columns[v][a]
}

fn refine(columns: &mut [Vec<bool>], k: usize, seed: u64) {
    const MAX_KICKS: usize = 200;
    let width = columns.len();
    let mut ov = overlaps_of(columns, k);
    let mut rng = Rng::new(seed, stream::MASK_SEARCH);
    for _ in 0..=MAX_KICKS {
        // First-improvement hill climbing.
        let mut improved = true;
        while improved {
            improved = false;
            for u in 0..width {
                for v in u + 1..width {
                    for a in 0..k {
                        for b in 0..k {
                            if a != b
                                && valid_swap(columns, u, v, a, b)
                                && swap_delta(columns, &ov, u, v, a, b) < 0
                            {
                                apply_swap(columns, &mut ov, u, v, a, b);
                                improved = true;
                            }
                        }
                    }
                }
            }
        }
        if spread(&ov) <= 1 {
            return;
        }
        for _ in 0..3 {
            for _ in 0..64 {
                let (u, v) = (rng.below(width), rng.below(width));
                let (a, b) = (rng.below(k), rng.below(k));
                if u != v && a != b && valid_swap(columns, u, v, a, b) {
                    apply_swap(columns, &mut ov, u, v, a, b);
                    break;
                }
            }
        }
    }
}

impl MaskSet {
    pub fn mask(&self, i: usize) -> &[bool] {
        &self.masks[i]
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn ones(&self, i: usize) -> usize {
        self.masks[i].iter().filter(|&&b| b).count()
    }

    pub fn overlap(&self, i: usize, j: usize) -> usize {
        self.masks[i]
            .iter()
            .zip(&self.masks[j])
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Mask `i` as a `[1, width]` multiplier, rescaled by `width / ones` so
    /// the expected activation magnitude matches the unmasked layer.
    pub fn multiplier(&self, i: usize) -> Tensor {
        let ones = self.ones(i).max(1);
        let gain = self.width as f64 / ones as f64;
        let row: Vec<f64> = self.masks[i]
            .iter()
            .map(|&b| if b { gain } else { 0.0 })
            .collect();
        Tensor::row(&row)
    }
}
