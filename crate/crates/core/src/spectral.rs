//! Eigenvalue clustering, the real-part Jordan form, and the
//! quasiisometry classification test built on it.
//!
//! Jordan structure is discontinuous in the matrix entries, so everything
//! here is reported at a declared resolution. Eigenvalues are grouped by
//! single linkage; a group of size `k` is allowed a radius of
//! `tol^(1/k) * (1 + |lambda|)` because a perturbed `k x k` Jordan block
//! splits its eigenvalue into a `k`-gon of that radius. A group is only kept
//! if the ranks of `(A - mu I)^j` confirm a generalized eigenspace of the
//! right dimension; otherwise it is re-split at a finer radius.

use nalgebra::{Complex, DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, DEFAULT_RANK_TOL};

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenCluster {
    /// Mean of the members.
    pub value: Complex64,
    pub multiplicity: usize,
    pub members: Vec<Complex64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, usize)", into = "(f64, usize)")]
pub struct JordanBlock {
    pub lambda: f64,
    pub size: usize,
}

impl From<(f64, usize)> for JordanBlock {
    fn from((lambda, size): (f64, usize)) -> Self {
        JordanBlock { lambda, size }
    }
}

impl From<JordanBlock> for (f64, usize) {
    fn from(b: JordanBlock) -> Self {
        (b.lambda, b.size)
    }
}

/// Blocks sorted ascending by `lambda`, then descending by size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<JordanBlock>", into = "Vec<JordanBlock>")]
pub struct RealPartJordanForm {
    blocks: Vec<JordanBlock>,
}

impl From<Vec<JordanBlock>> for RealPartJordanForm {
    fn from(blocks: Vec<JordanBlock>) -> Self {
        RealPartJordanForm::new(blocks)
    }
}

impl From<RealPartJordanForm> for Vec<JordanBlock> {
    fn from(f: RealPartJordanForm) -> Self {
        f.blocks
    }
}

impl RealPartJordanForm {
    pub fn new(mut blocks: Vec<JordanBlock>) -> Self {
        blocks.sort_by(|a, b| {
            a.lambda
                .total_cmp(&b.lambda)
                .then_with(|| b.size.cmp(&a.size))
        });
        RealPartJordanForm { blocks }
    }

    pub fn blocks(&self) -> &[JordanBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    pub fn lambda_min(&self) -> f64 {
        self.blocks.first().map_or(f64::NAN, |b| b.lambda)
    }

    pub fn lambda_max(&self) -> f64 {
        self.blocks.last().map_or(f64::NAN, |b| b.lambda)
    }

    pub fn max_block(&self) -> usize {
        self.blocks.iter().map(|b| b.size).max().unwrap_or(0)
    }

    /// `sum_i d_i * lambda_i`, the exponential rate of `det e^{tA}`.
    pub fn weighted_trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.size as f64 * b.lambda).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        RealPartJordanForm::new(
            self.blocks
                .iter()
                .map(|b| JordanBlock {
                    lambda: b.lambda * s,
                    size: b.size,
                })
                .collect(),
        )
    }

    /// The canonical matrix: block diagonal of `lambda * I + N` blocks.
    pub fn to_matrix(&self) -> Matrix {
        let blocks: Vec<Matrix> = self
            .blocks
            .iter()
            .map(|b| Matrix::jordan_block(b.lambda, b.size))
            .collect();
        Matrix::block_diag(&blocks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub equivalent: bool,
    pub scale: Option<f64>,
    pub form_a: RealPartJordanForm,
    pub form_b: RealPartJordanForm,
    /// Smallest relative separation between distinct eigenvalue clusters,
    /// or between a cluster and the imaginary axis, over both matrices.
    pub min_gap: f64,
}

/// Everything derived from one eigen-analysis pass.
#[derive(Clone, Debug)]
pub struct JordanAnalysis {
    pub clusters: Vec<EigenCluster>,
    pub form: RealPartJordanForm,
    pub min_gap: f64,
}

struct RankedCluster {
    cluster: EigenCluster,
    ranks: Vec<usize>,
}

pub fn eigen_clusters(a: &Matrix, cluster_tol: f64) -> Result<Vec<EigenCluster>> {
    Ok(cluster_with_ranks(a, cluster_tol)?
        .into_iter()
        .map(|c| c.cluster)
        .collect())
}

pub fn real_part_jordan_form(a: &Matrix, tol: f64) -> Result<RealPartJordanForm> {
    Ok(analyze(a, tol)?.form)
}

pub fn analyze(a: &Matrix, tol: f64) -> Result<JordanAnalysis> {
    let ranked = cluster_with_ranks(a, tol)?;
    let n = a.dim();

    for rc in &ranked {
        let v = rc.cluster.value;
        if v.re <= tol {
            return Err(Error::Hypothesis {
                re: v.re,
                im: v.im,
                tol,
            });
        }
    }

    let mut blocks = Vec::with_capacity(n);
    for rc in &ranked {
        let v = rc.cluster.value;
        if v.im < 0.0 {
            continue;
        }
        let copies = if v.im > 0.0 { 2 } else { 1 };
        let sizes = block_sizes(&rc.ranks, rc.cluster.multiplicity).ok_or_else(|| {
            Error::Conditioning {
                re: v.re,
                im: v.im,
                ranks: rc.ranks.clone(),
            }
        })?;
        for size in sizes {
            for _ in 0..copies {
                blocks.push(JordanBlock { lambda: v.re, size });
            }
        }
    }
    let form = RealPartJordanForm::new(blocks);
    debug_assert_eq!(form.dim(), n);

    let clusters: Vec<EigenCluster> = ranked.into_iter().map(|c| c.cluster).collect();
    let min_gap = min_relative_gap(&clusters);
    Ok(JordanAnalysis {
        clusters,
        form,
        min_gap,
    })
}

/// Decides whether `G_A` and `G_B` are quasiisometric: some `s > 0` must
/// make `A` and `sB` share a real-part Jordan form.
pub fn classify(a: &Matrix, b: &Matrix, tol: f64) -> Result<ClassificationResult> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let fa = analyze(a, tol)?;
    let fb = analyze(b, tol)?;
    let s = fa.form.lambda_min() / fb.form.lambda_min();
    let equivalent = forms_match(&fa.form, &fb.form.scaled(s), tol);
    Ok(ClassificationResult {
        equivalent,
        scale: equivalent.then_some(s),
        form_a: fa.form,
        form_b: fb.form,
        min_gap: fa.min_gap.min(fb.min_gap),
    })
}

fn forms_match(fa: &RealPartJordanForm, fb: &RealPartJordanForm, tol: f64) -> bool {
    let ga = group_blocks(fa, tol);
    let gb = group_blocks(fb, tol);
    if ga.len() != gb.len() {
        return false;
    }
    ga.iter().zip(&gb).all(|(x, y)| {
        x.len() == y.len()
            && x.iter().zip(y).all(|(p, q)| {
                p.size == q.size && (p.lambda - q.lambda).abs() <= tol * (p.lambda + q.lambda)
            })
    })
}

/// Splits the canonical block list into runs of (numerically) equal lambda,
/// each run sorted by descending size.
fn group_blocks(f: &RealPartJordanForm, tol: f64) -> Vec<Vec<JordanBlock>> {
    let mut groups: Vec<Vec<JordanBlock>> = Vec::new();
    for b in f.blocks() {
        match groups.last_mut() {
            Some(g) if (b.lambda - g[0].lambda).abs() <= tol * (b.lambda + g[0].lambda) => {
                g.push(*b)
            }
            _ => groups.push(vec![*b]),
        }
    }
    for g in &mut groups {
        g.sort_by_key(|b| std::cmp::Reverse(b.size));
    }
    groups
}

fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    let n = a.dim();
    let failure = || Error::EigenFailure {
        matrix: a.to_json_string(),
    };
    let (_, t) = Schur::try_new(a.as_dmatrix().clone(), f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(failure)?
        .unpack();
    let out = quasi_triangular_eigenvalues(&t);
    if out.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(failure());
    }
    Ok(out)
}

/// Eigenvalues of a real Schur factor, reading its 1x1 and 2x2 diagonal
/// blocks directly. nalgebra's own extraction yields NaN imaginary parts when
/// a 2x2 block has a tiny negative discriminant.
fn quasi_triangular_eigenvalues(t: &DMatrix<f64>) -> Vec<Complex64> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 == n || t[(i + 1, i)] == 0.0 {
            out.push(Complex64::new(t[(i, i)], 0.0));
            i += 1;
            continue;
        }
        let (p, q, r, s) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        let mean = 0.5 * (p + s);
        let half = 0.5 * (p - s);
        let disc = half * half + q * r;
        if disc >= 0.0 {
            // Avoid cancellation: take the larger root, derive the other from the determinant.
            let big = mean + mean.signum() * disc.sqrt();
            let det = p * s - q * r;
            let small = if big != 0.0 { det / big } else { mean - disc.sqrt() };
            out.push(Complex64::new(big, 0.0));
            out.push(Complex64::new(small, 0.0));
        } else {
            let im = (-disc).sqrt();
            out.push(Complex64::new(mean, im));
            out.push(Complex64::new(mean, -im));
        }
        i += 2;
    }
    out
}

fn cluster_with_ranks(a: &Matrix, cluster_tol: f64) -> Result<Vec<RankedCluster>> {
    if !(cluster_tol > 0.0) {
        return Err(Error::invalid("cluster tolerance must be positive"));
    }
    let values = eigenvalues(a)?;
    let ac: DMatrix<Complex<f64>> = a.as_dmatrix().map(|x| Complex::new(x, 0.0));
    let scale = a.as_dmatrix().norm().max(f64::MIN_POSITIVE);
    let ctx = RankContext {
        a: &ac,
        scale,
        rank_tol: DEFAULT_RANK_TOL,
    };

    let mut out = Vec::new();
    let level = values.len();
    split(values, level, cluster_tol, &ctx, &mut out);

    let mut ranked: Vec<RankedCluster> = out
        .into_iter()
        .map(|members| {
            let m = members.len();
            let mut value = members.iter().sum::<Complex64>() / m as f64;
            if value.im.abs() <= cluster_tol * (1.0 + value.norm()) {
                value.im = 0.0;
            }
            let ranks = ctx.rank_sequence(value, m);
            RankedCluster {
                cluster: EigenCluster {
                    value,
                    multiplicity: m,
                    members,
                },
                ranks,
            }
        })
        .collect();

    enforce_conjugate_pairs(&mut ranked, cluster_tol, a)?;
    ranked.sort_by(|x, y| {
        let (p, q) = (x.cluster.value, y.cluster.value);
        p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im))
    });
    Ok(ranked)
}

fn enforce_conjugate_pairs(ranked: &mut [RankedCluster], tol: f64, a: &Matrix) -> Result<()> {
    let upper: Vec<usize> = (0..ranked.len())
        .filter(|&i| ranked[i].cluster.value.im > 0.0)
        .collect();
    let mut used = vec![false; ranked.len()];
    for i in upper {
        let v = ranked[i].cluster.value;
        let radius = tol.powf(1.0 / ranked[i].cluster.multiplicity as f64) * (1.0 + v.norm());
        let partner = (0..ranked.len()).find(|&j| {
            !used[j]
                && ranked[j].cluster.value.im < 0.0
                && ranked[j].cluster.multiplicity == ranked[i].cluster.multiplicity
                && (ranked[j].cluster.value - v.conj()).norm() <= radius
        });
        match partner {
            Some(j) => {
                used[j] = true;
                ranked[j].cluster.value = v.conj();
                ranked[j].ranks = ranked[i].ranks.clone();
            }
            None => {
                return Err(Error::EigenFailure {
                    matrix: format!(
                        "{} (eigenvalue cluster {}{:+}i has no conjugate partner)",
                        a.to_json_string(),
                        v.re,
                        v.im
                    ),
                })
            }
        }
    }
    Ok(())
}

struct RankContext<'a> {
    a: &'a DMatrix<Complex<f64>>,
    scale: f64,
    rank_tol: f64,
}

impl RankContext<'_> {
    /// `[rank (A - mu I)^k for k = 0..=upto]`, thresholded at
    /// `rank_tol * ||A||_F^k` so the test is invariant under scaling `A`.
    fn rank_sequence(&self, mu: Complex64, upto: usize) -> Vec<usize> {
        let n = self.a.nrows();
        let mut shifted = self.a.clone();
        for i in 0..n {
            shifted[(i, i)] -= Complex::new(mu.re, mu.im);
        }
        let mut power = DMatrix::<Complex<f64>>::identity(n, n);
        let mut ranks = Vec::with_capacity(upto + 1);
        ranks.push(n);
        for k in 1..=upto {
            power = &power * &shifted;
            let threshold = self.rank_tol * self.scale.powi(k as i32);
            let sv = power.clone().singular_values();
            ranks.push(sv.iter().filter(|&&s| s > threshold).count());
        }
        ranks
    }

    fn confirms(&self, members: &[Complex64]) -> bool {
        let m = members.len();
        let mu = members.iter().sum::<Complex64>() / m as f64;
        block_sizes(&self.rank_sequence(mu, m), m).is_some()
    }
}

/// Recovers block sizes from `ranks[k] = rank (A - mu I)^k`. The number of
/// blocks of size at least `k` is `ranks[k-1] - ranks[k]`; those counts must
/// be non-increasing and account for exactly `m` dimensions.
fn block_sizes(ranks: &[usize], m: usize) -> Option<Vec<usize>> {
    let n = ranks[0];
    if ranks.len() < m + 1 || ranks.windows(2).any(|w| w[1] > w[0]) || n - ranks[m] != m {
        return None;
    }
    let at_least: Vec<usize> = (1..=m).map(|k| ranks[k - 1] - ranks[k]).collect();
    if at_least[0] == 0 || at_least.windows(2).any(|w| w[1] > w[0]) {
        return None;
    }
    let mut sizes = Vec::new();
    for k in (1..=m).rev() {
        let next = if k < m { at_least[k] } else { 0 };
        for _ in 0..(at_least[k - 1] - next) {
            sizes.push(k);
        }
    }
    debug_assert_eq!(sizes.iter().sum::<usize>(), m);
    Some(sizes)
}

fn radius(tol: f64, level: usize, a: Complex64, b: Complex64) -> f64 {
    tol.powf(1.0 / level as f64) * (1.0 + a.norm().max(b.norm()))
}

fn single_linkage(members: &[Complex64], tol: f64, level: usize) -> Vec<Vec<Complex64>> {
    let k = members.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if (members[i] - members[j]).norm() <= radius(tol, level, members[i], members[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for (i, &m) in members.iter().enumerate().take(k) {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some((_, g)) => g.push(m),
            None => groups.push((r, vec![m])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

fn split(
    members: Vec<Complex64>,
    level: usize,
    tol: f64,
    ctx: &RankContext<'_>,
    out: &mut Vec<Vec<Complex64>>,
) {
    for comp in single_linkage(&members, tol, level.max(1)) {
        let m = comp.len();
        if m < level {
            split(comp, m, tol, ctx, out);
        } else if m == 1 || level <= 1 || ctx.confirms(&comp) {
            out.push(comp);
        } else {
            split(comp, level - 1, tol, ctx, out);
        }
    }
}

fn min_relative_gap(clusters: &[EigenCluster]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, c) in clusters.iter().enumerate() {
        let v = c.value;
        gap = gap.min(v.re / (1.0 + v.norm()));
        for d in &clusters[i + 1..] {
            let w = d.value;
            gap = gap.min((v - w).norm() / (1.0 + v.norm().max(w.norm())));
        }
    }
    gap
}
