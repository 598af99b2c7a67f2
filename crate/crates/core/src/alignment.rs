//! Linear alignment of embedding spaces: closed-form orthogonal
//! Procrustes, supervised alignment, CSLS scoring, dictionary induction,
//! self-learning iterative Procrustes and AdaptLayer-seeded refinement.
//!
//! Embedding matrices hold one word per row in rank order. A map `W` sends
//! source rows to the target space as `x·W`. Callers are expected to
//! center and unit-normalize rows first (see
//! [`EmbeddingMatrix::normalized`](crate::embeddings::EmbeddingMatrix::normalized)).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{TensorReader, TensorWriter};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{mean_top_k, mix_seed, nearest_orthogonal, normalize_rows, orthogonality_error, random_orthogonal, svd, top_k_desc};

const MAP_KIND: &str = "linear-map";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Identity,
    Random,
    Procrustes,
    Supervised,
    Iterative,
    AdaptLayer,
    Muve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
    pub orthogonal: bool,
    pub provenance: Provenance,
}

impl LinearMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            orthogonal: true,
            provenance: Provenance::Identity,
        }
    }

    /// Wraps a trained AdaptLayer. The layer maps Y vectors into X space as
    /// `y·Wᵀ`, so for orthogonal `W` the X→Y map is `x·W` and the matrix is
    /// used unchanged.
    pub fn from_adapt_layer(adapt: &DMatrix<f64>) -> Self {
        Self {
            matrix: adapt.clone(),
            orthogonal: adapt.is_square() && orthogonality_error(adapt) < 1e-6,
            provenance: Provenance::AdaptLayer,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.matrix.nrows() {
            return Err(Error::dims("mapped embedding width", self.matrix.nrows(), x.ncols()));
        }
        Ok(x * &self.matrix)
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.matrix)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut w = TensorWriter::create(dir, MAP_KIND)?;
        w.add("matrix", &self.matrix)?;
        w.finish(serde_json::json!({
            "orthogonal": self.orthogonal,
            "provenance": self.provenance,
        }))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let r = TensorReader::open(dir, MAP_KIND)?;
        let matrix = r.get("matrix")?;
        let provenance = serde_json::from_value(r.meta()["provenance"].clone())?;
        let orthogonal = r.meta()["orthogonal"].as_bool().unwrap_or(false);
        Ok(Self {
            matrix,
            orthogonal,
            provenance,
        })
    }
}

/// Orthogonal `W` minimizing `‖XW − Y‖_F`: `W = U Vᵀ` with `XᵀY = U Σ Vᵀ`.
pub fn procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LinearMap> {
    if x.shape() != y.shape() {
        return Err(Error::dims(
            format!("procrustes target shape {:?} vs source {:?}", y.shape(), x.shape()),
            x.len(),
            y.len(),
        ));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("x", "procrustes needs at least one row and column"));
    }
    let m = x.transpose() * y;
    let s = svd(&m);
    let top = s.singular_values.max();
    let rank = s.singular_values.iter().filter(|&&v| v > top * 1e-10).count();
    if rank < m.nrows() {
        log::warn!("procrustes: cross-covariance has rank {rank} < {}; minimizer is not unique", m.nrows());
    }
    Ok(LinearMap {
        matrix: &s.u * &s.v_t,
        orthogonal: true,
        provenance: Provenance::Procrustes,
    })
}

fn gather_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

#[derive(Debug, Clone)]
pub struct SupervisedAlignment {
    pub map: LinearMap,
    pub pairs_used: usize,
    pub pairs_given: usize,
}

impl SupervisedAlignment {
    pub fn coverage(&self) -> f64 {
        if self.pairs_given == 0 {
            0.0
        } else {
            self.pairs_used as f64 / self.pairs_given as f64
        }
    }
}

/// Procrustes on the rows of dictionary pairs found in both vocabularies.
pub fn supervised_align(
    emb_x: &EmbeddingMatrix,
    emb_y: &EmbeddingMatrix,
    pairs: &[(String, String)],
) -> Result<SupervisedAlignment> {
    if emb_x.dim() != emb_y.dim() {
        return Err(Error::dims("target embedding width", emb_x.dim(), emb_y.dim()));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (a, b) in pairs {
        if let (Some(i), Some(j)) = (emb_x.vocab().id(a), emb_y.vocab().id(b)) {
            xs.push(i);
            ys.push(j);
        }
    }
    if xs.is_empty() {
        return Err(Error::NoResolvablePairs);
    }
    let mut map = procrustes(&gather_rows(&emb_x.to_dmatrix(), &xs), &gather_rows(&emb_y.to_dmatrix(), &ys))?;
    map.provenance = Provenance::Supervised;
    Ok(SupervisedAlignment {
        map,
        pairs_used: xs.len(),
        pairs_given: pairs.len(),
    })
}

fn normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = m.clone();
    normalize_rows(&mut m);
    m
}

const BLOCK: usize = 512;

/// Mean cosine of every row of `a` to its `k` nearest rows of `b`; both
/// inputs must be row-normalized.
fn neighbourhood_means(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.nrows());
    let bt = b.transpose();
    let mut start = 0;
    while start < a.nrows() {
        let len = BLOCK.min(a.nrows() - start);
        let sims = a.rows(start, len) * &bt;
        for r in 0..len {
            let row: Vec<f64> = sims.row(r).iter().copied().collect();
            out.push(mean_top_k(&row, k));
        }
        start += len;
    }
    out
}

/// Cross-domain similarity local scaling between mapped source rows and
/// target rows: `2·cos(x, y) − r_Y(y) − r_X(x)`.
pub struct CslsScorer {
    sources: DMatrix<f64>,
    targets: DMatrix<f64>,
    r_x: Vec<f64>,
    r_y: Vec<f64>,
}

impl CslsScorer {
    pub fn new(mapped_x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<Self> {
        if k == 0 || k > y.nrows() {
            return Err(Error::invalid("k", format!("must lie in 1..={}", y.nrows())));
        }
        if mapped_x.ncols() != y.ncols() {
            return Err(Error::dims("CSLS target width", mapped_x.ncols(), y.ncols()));
        }
        let sources = normalized(mapped_x);
        let targets = normalized(y);
        let r_x = neighbourhood_means(&sources, &targets, k);
        let r_y = neighbourhood_means(&targets, &sources, k);
        Ok(Self {
            sources,
            targets,
            r_x,
            r_y,
        })
    }

    /// Mean similarity of each target to its k nearest mapped sources.
    pub fn target_hubness(&self) -> &[f64] {
        &self.r_y
    }

    pub fn source_hubness(&self) -> &[f64] {
        &self.r_x
    }

    pub fn scores(&self, source: usize) -> Vec<f64> {
        let cos = &self.targets * self.sources.row(source).transpose();
        cos.iter()
            .zip(&self.r_y)
            .map(|(c, ry)| 2.0 * c - ry - self.r_x[source])
            .collect()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.nrows()
    }
}

/// CSLS scores of one mapped vector against every row of `y`, with the
/// target neighbourhoods taken over `mapped_sources`.
pub fn csls(x_mapped: &[f64], mapped_sources: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > y.nrows() {
        return Err(Error::invalid("k", format!("must lie in 1..={}", y.nrows())));
    }
    if x_mapped.len() != y.ncols() {
        return Err(Error::dims("CSLS query width", y.ncols(), x_mapped.len()));
    }
    let targets = normalized(y);
    let sources = normalized(mapped_sources);
    let r_y = neighbourhood_means(&targets, &sources, k);
    let q = normalized(&DMatrix::from_row_slice(1, x_mapped.len(), x_mapped));
    let cos: Vec<f64> = (&targets * q.row(0).transpose()).iter().copied().collect();
    let r_x = mean_top_k(&cos, k);
    Ok(cos.iter().zip(&r_y).map(|(c, ry)| 2.0 * c - ry - r_x).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InductionPolicy {
    MutualNn,
    /// Mutual nearest neighbours under CSLS instead of cosine.
    MutualCsls,
    CslsTopk,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InducedDictionary {
    /// `(source id, target id, score)` sorted by source id.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl InducedDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn same_pairs(&self, other: &InducedDictionary) -> bool {
        self.pairs.len() == other.pairs.len()
            && self
                .pairs
                .iter()
                .zip(&other.pairs)
                .all(|(a, b)| a.0 == b.0 && a.1 == b.1)
    }

    fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Score `scale·cos(i, j) − pen_x[i] − pen_y[j]` between normalized rows,
/// keeping pairs that are each other's best match (first maximum wins).
fn mutual_pairs(xs: &DMatrix<f64>, ys: &DMatrix<f64>, pen_x: &[f64], pen_y: &[f64], scale: f64) -> Vec<(usize, usize, f64)> {
    let (nx, ny) = (xs.nrows(), ys.nrows());
    let yt = ys.transpose();
    let mut best_y = vec![(f64::NEG_INFINITY, 0usize); nx];
    let mut best_x = vec![(f64::NEG_INFINITY, 0usize); ny];
    let mut start = 0;
    while start < nx {
        let len = BLOCK.min(nx - start);
        let sims = xs.rows(start, len) * &yt;
        for r in 0..len {
            let i = start + r;
            for j in 0..ny {
                let s = scale * sims[(r, j)] - pen_x[i] - pen_y[j];
                if s > best_y[i].0 {
                    best_y[i] = (s, j);
                }
                if s > best_x[j].0 {
                    best_x[j] = (s, i);
                }
            }
        }
        start += len;
    }
    (0..nx)
        .filter(|&i| best_x[best_y[i].1].1 == i)
        .map(|i| (i, best_y[i].1, best_y[i].0))
        .collect()
}

/// Induces translation pairs among the `limit` most frequent words of each
/// side. `MutualNn` keeps cosine nearest neighbours that agree in both
/// directions, `MutualCsls` does the same under CSLS and `CslsTopk` keeps
/// each source's CSLS argmax.
pub fn induce_dictionary(
    mapped_x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    policy: InductionPolicy,
    limit: usize,
    csls_k: usize,
) -> Result<InducedDictionary> {
    let nx = limit.min(mapped_x.nrows());
    let ny = limit.min(y.nrows());
    if nx == 0 || ny == 0 {
        return Ok(InducedDictionary::default());
    }
    let xs = mapped_x.rows(0, nx).into_owned();
    let ys = y.rows(0, ny).into_owned();
    match policy {
        InductionPolicy::MutualNn => {
            let (xs, ys) = (normalized(&xs), normalized(&ys));
            Ok(InducedDictionary {
                pairs: mutual_pairs(&xs, &ys, &vec![0.0; nx], &vec![0.0; ny], 1.0),
            })
        }
        InductionPolicy::MutualCsls => {
            let scorer = CslsScorer::new(&xs, &ys, csls_k.min(ny).max(1))?;
            Ok(InducedDictionary {
                pairs: mutual_pairs(&scorer.sources, &scorer.targets, &scorer.r_x, &scorer.r_y, 2.0),
            })
        }
        InductionPolicy::CslsTopk => {
            let scorer = CslsScorer::new(&xs, &ys, csls_k.min(ny).max(1))?;
            let pairs = (0..nx)
                .map(|i| {
                    let s = scorer.scores(i);
                    let j = top_k_desc(&s, 1)[0];
                    (i, j, s[j])
                })
                .collect();
            Ok(InducedDictionary { pairs })
        }
    }
}

/// One self-learning round: induce pairs under `w`, then solve Procrustes
/// on them. Returns `None` for the map when no pairs were induced.
pub fn procrustes_refine_step(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
    policy: InductionPolicy,
    limit: usize,
    csls_k: usize,
) -> Result<(InducedDictionary, Option<LinearMap>)> {
    let dict = induce_dictionary(&(x * w), y, policy, limit, csls_k)?;
    if dict.is_empty() {
        return Ok((dict, None));
    }
    let map = procrustes(&gather_rows(x, &dict.sources()), &gather_rows(y, &dict.targets()))?;
    Ok((dict, Some(map)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterativeConfig {
    pub restarts: usize,
    pub iters: usize,
    pub limit: usize,
    pub csls_k: usize,
    pub seed: u64,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            restarts: 25,
            iters: 20,
            limit: 10_000,
            csls_k: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterativeResult {
    pub map: LinearMap,
    /// Selection criterion of every restart, in restart order.
    pub criteria: Vec<f64>,
    pub best_restart: usize,
}

fn mutual_csls_criterion(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>, limit: usize, csls_k: usize) -> Result<f64> {
    let mapped = x * w;
    let dict = induce_dictionary(&mapped, y, InductionPolicy::MutualNn, limit, csls_k)?;
    if dict.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let nx = limit.min(x.nrows());
    let ny = limit.min(y.nrows());
    let scorer = CslsScorer::new(&mapped.rows(0, nx).into_owned(), &y.rows(0, ny).into_owned(), csls_k.min(ny).max(1))?;
    let total: f64 = dict.pairs.iter().map(|&(i, j, _)| scorer.scores(i)[j]).sum();
    Ok(total / dict.len() as f64)
}

/// Self-learning Procrustes from `restarts` initializations (identity first,
/// then random orthogonal matrices). Each restart alternates mutual-NN
/// induction and Procrustes until the induced pairs stop changing or
/// `iters` rounds pass; the restart with the highest mean CSLS over its
/// final mutual-NN pairs wins.
pub fn iterative_procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>, config: &IterativeConfig) -> Result<IterativeResult> {
    if config.restarts == 0 {
        return Err(Error::invalid("restarts", "must be at least 1"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::dims("target embedding width", x.ncols(), y.ncols()));
    }
    let d = x.ncols();
    let mut criteria = Vec::with_capacity(config.restarts);
    let mut best: Option<(f64, usize, DMatrix<f64>)> = None;
    for r in 0..config.restarts {
        let mut w = if r == 0 {
            DMatrix::identity(d, d)
        } else {
            random_orthogonal(d, &mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, r as u64)))
        };
        let mut previous: Option<InducedDictionary> = None;
        for _ in 0..config.iters {
            let (dict, map) = procrustes_refine_step(x, y, &w, InductionPolicy::MutualNn, config.limit, config.csls_k)?;
            let Some(map) = map else { break };
            if previous.as_ref().is_some_and(|p| p.same_pairs(&dict)) {
                break;
            }
            w = map.matrix;
            previous = Some(dict);
        }
        let c = mutual_csls_criterion(x, y, &w, config.limit, config.csls_k)?;
        log::debug!("iterative procrustes restart {r}: criterion {c:.5}");
        criteria.push(c);
        if best.as_ref().is_none_or(|b| c > b.0) {
            best = Some((c, r, w));
        }
    }
    let (_, best_restart, matrix) = best.expect("at least one restart");
    Ok(IterativeResult {
        map: LinearMap {
            matrix,
            orthogonal: true,
            provenance: Provenance::Iterative,
        },
        criteria,
        best_restart,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuveConfig {
    /// Upper bound on refinement rounds; refinement also stops once the
    /// induced pairs repeat.
    pub refine_iters: usize,
    pub csls_k: usize,
    pub limit: usize,
    pub policy: InductionPolicy,
}

impl Default for MuveConfig {
    fn default() -> Self {
        Self {
            refine_iters: 20,
            csls_k: 10,
            limit: 10_000,
            policy: InductionPolicy::MutualCsls,
        }
    }
}

/// Refines a trained AdaptLayer into an orthogonal X→Y map: the layer is
/// projected onto the orthogonal group, then each round induces pairs among
/// the `limit` most frequent words and re-solves Procrustes.
pub fn muve_align(adapt: &LinearMap, x: &DMatrix<f64>, y: &DMatrix<f64>, config: &MuveConfig) -> Result<LinearMap> {
    if !adapt.matrix.is_square() {
        return Err(Error::dims("AdaptLayer columns", adapt.matrix.nrows(), adapt.matrix.ncols()));
    }
    for (what, m) in [("source embedding width", x), ("target embedding width", y)] {
        if m.ncols() != adapt.dim() {
            return Err(Error::dims(what, adapt.dim(), m.ncols()));
        }
    }
    let mut w = nearest_orthogonal(&adapt.matrix);
    let mut previous: Option<InducedDictionary> = None;
    for _ in 0..config.refine_iters {
        let (dict, map) = procrustes_refine_step(x, y, &w, config.policy, config.limit, config.csls_k)?;
        let Some(map) = map else { break };
        if previous.as_ref().is_some_and(|p| p.same_pairs(&dict)) {
            break;
        }
        w = map.matrix;
        previous = Some(dict);
    }
    Ok(LinearMap {
        matrix: w,
        orthogonal: true,
        provenance: Provenance::Muve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retrieval {
    Cosine,
    Csls { k: usize },
}

/// Ranked target words for each query word under `map`.
pub fn translate_with_map(
    map: &LinearMap,
    emb_x: &EmbeddingMatrix,
    emb_y: &EmbeddingMatrix,
    queries: &[String],
    k: usize,
    retrieval: Retrieval,
) -> Result<BTreeMap<String, Vec<String>>> {
    let mapped = map.apply(&emb_x.to_dmatrix())?;
    let y = emb_y.to_dmatrix();
    let ids: Vec<(String, usize)> = queries
        .iter()
        .filter_map(|q| emb_x.vocab().id(q).map(|i| (q.clone(), i)))
        .collect();
    let mut out = BTreeMap::new();
    match retrieval {
        Retrieval::Cosine => {
            let m = normalized(&mapped);
            let t = normalized(&y);
            for (q, i) in ids {
                let s: Vec<f64> = (&t * m.row(i).transpose()).iter().copied().collect();
                out.insert(q, top_k_desc(&s, k).into_iter().map(|j| emb_y.vocab().token(j).to_owned()).collect());
            }
        }
        Retrieval::Csls { k: csls_k } => {
            let scorer = CslsScorer::new(&mapped, &y, csls_k.min(y.nrows()).max(1))?;
            for (q, i) in ids {
                let s = scorer.scores(i);
                out.insert(q, top_k_desc(&s, k).into_iter().map(|j| emb_y.vocab().token(j).to_owned()).collect());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn procrustes_identity_and_rotation() {
        let mut r = rng(1);
        let x = gaussian_matrix(50, 5, &mut r);
        let w = procrustes(&x, &x).unwrap();
        assert!((&w.matrix - DMatrix::identity(5, 5)).abs().max() < 1e-10);

        let rot = random_orthogonal(8, &mut r);
        let x = gaussian_matrix(200, 8, &mut r);
        let w = procrustes(&x, &(&x * &rot)).unwrap();
        assert!((&w.matrix - &rot).abs().max() < 1e-8);
        assert!(w.orthogonality_error() < 1e-8);
    }

    #[test]
    fn procrustes_shape_mismatch_and_rank_deficiency() {
        let x = DMatrix::<f64>::zeros(3, 2);
        let y = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(procrustes(&x, &y), Err(Error::DimensionMismatch { .. })));
        // rank-1 cross-covariance still yields an orthogonal matrix
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let y = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let w = procrustes(&x, &y).unwrap();
        assert!(w.orthogonality_error() < 1e-10);
        assert!(((&x * &w.matrix) - &y).norm() < 1e-10);
    }

    #[test]
    fn csls_demotes_a_hub() {
        // targets: t0 is close to both sources (a hub), t1 only to s1
        let sources = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
        let targets = DMatrix::from_row_slice(3, 2, &[0.8, 0.6, 0.0, 1.0, -1.0, 0.0]);
        // cosines: s0·t = (0.8, 0.0, -1.0); s1·t = (0.96, 0.8, -0.6)
        // k = 1: r_Y = (0.96, 0.8, -0.6); r_X(s1) = 0.96
        // csls(s1) = 2·(0.96, 0.8, -0.6) - r_Y - 0.96 = (0.0, -0.16, -1.56) ... hub keeps rank
        // k = 2: r_Y = (0.88, 0.4, -0.8); r_X(s1) = 0.88
        // csls(s1) = (1.92 - 0.88 - 0.88, 1.6 - 0.4 - 0.88, -1.2 + 0.8 - 0.88) = (0.16, 0.32, -1.28)
        let scorer = CslsScorer::new(&sources, &targets, 2).unwrap();
        let s = scorer.scores(1);
        let want = [0.16, 0.32, -1.28];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
        let cos_rank = top_k_desc(&[0.96, 0.8, -0.6], 3);
        assert_eq!(cos_rank[0], 0);
        assert_eq!(top_k_desc(&s, 1)[0], 1);

        let free = csls(&[0.6, 0.8], &sources, &targets, 2).unwrap();
        for (a, b) in free.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csls_k_out_of_range() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(CslsScorer::new(&m, &m, 0).is_err());
        assert!(CslsScorer::new(&m, &m, 3).is_err());
        assert!(csls(&[1.0, 0.0], &m, &m, 3).is_err());
    }

    #[test]
    fn csls_with_full_neighbourhood_uses_global_means() {
        let mut r = rng(4);
        let sx = gaussian_matrix(6, 3, &mut r);
        let ty = gaussian_matrix(5, 3, &mut r);
        let scorer = CslsScorer::new(&sx, &ty, 5).unwrap();
        // brute force: k = |Y| means r_X is the mean over all targets; r_Y
        // over the 5 best of 6 sources
        let cosm = |a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize| {
            let (u, v) = (a.row(i), b.row(j));
            u.dot(&v) / (u.norm() * v.norm())
        };
        for i in 0..6 {
            let all: Vec<f64> = (0..5).map(|j| cosm(&sx, i, &ty, j)).collect();
            let rx = all.iter().sum::<f64>() / 5.0;
            assert!((scorer.source_hubness()[i] - rx).abs() < 1e-12);
        }
        for j in 0..5 {
            let mut all: Vec<f64> = (0..6).map(|i| cosm(&sx, i, &ty, j)).collect();
            all.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let ry = all[..5].iter().sum::<f64>() / 5.0;
            assert!((scorer.target_hubness()[j] - ry).abs() < 1e-12);
        }
    }

    #[test]
    fn induce_identity_pairing() {
        let mut r = rng(5);
        let x = gaussian_matrix(30, 6, &mut r);
        for policy in [InductionPolicy::MutualNn, InductionPolicy::CslsTopk] {
            let d = induce_dictionary(&x, &x, policy, 100, 5).unwrap();
            assert_eq!(d.len(), 30);
            assert!(d.pairs.iter().all(|p| p.0 == p.1));
        }
        let rot = random_orthogonal(6, &mut r);
        let y = &x * &rot;
        let d = induce_dictionary(&(&x * &rot), &y, InductionPolicy::MutualNn, 10, 5).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d.pairs.iter().all(|p| p.0 == p.1));
    }

    #[test]
    fn iterative_recovers_clean_rotation_from_identity() {
        let mut r = rng(6);
        let x = normalized(&gaussian_matrix(150, 6, &mut r));
        let rot = random_orthogonal(6, &mut r);
        // a small rotation away from identity is within the identity start's basin
        let small = nearest_orthogonal(&(DMatrix::identity(6, 6) + (&rot - DMatrix::identity(6, 6)) * 0.15));
        let y = &x * &small;
        let cfg = IterativeConfig { restarts: 3, ..Default::default() };
        let res = iterative_procrustes(&x, &y, &cfg).unwrap();
        assert!((&res.map.matrix - &small).abs().max() < 1e-6);
        assert_eq!(res.criteria.len(), 3);
    }

    #[test]
    fn refine_step_fixed_point() {
        let mut r = rng(7);
        let x = normalized(&gaussian_matrix(40, 5, &mut r));
        let noise = gaussian_matrix(40, 5, &mut r) * 0.01;
        let y = &x * random_orthogonal(5, &mut r) + noise;
        let w0 = procrustes(&x, &y).unwrap().matrix;
        let (d1, m1) = procrustes_refine_step(&x, &y, &w0, InductionPolicy::MutualNn, 100, 5).unwrap();
        let w1 = m1.unwrap().matrix;
        let (d2, m2) = procrustes_refine_step(&x, &y, &w1, InductionPolicy::MutualNn, 100, 5).unwrap();
        assert!(d1.same_pairs(&d2));
        assert_eq!(m2.unwrap().matrix, w1);
    }

    #[test]
    fn muve_zero_iterations_returns_orthogonalized_seed() {
        let mut r = rng(8);
        let q = random_orthogonal(4, &mut r);
        let x = gaussian_matrix(10, 4, &mut r);
        let seed = LinearMap::from_adapt_layer(&(&q * 1.5));
        assert!(!seed.orthogonal);
        let cfg = MuveConfig { refine_iters: 0, ..Default::default() };
        let m = muve_align(&seed, &x, &x, &cfg).unwrap();
        assert!((&m.matrix - &q).abs().max() < 1e-10);
        assert!(m.orthogonal && m.orthogonality_error() < 1e-10);
        assert_eq!(m.provenance, Provenance::Muve);

        let bad = gaussian_matrix(10, 3, &mut r);
        assert!(matches!(muve_align(&seed, &bad, &x, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn muve_stationary_at_ground_truth() {
        let mut r = rng(9);
        let x = normalized(&gaussian_matrix(60, 5, &mut r));
        let rot = random_orthogonal(5, &mut r);
        let y = &x * &rot;
        let m = muve_align(&LinearMap::from_adapt_layer(&rot), &x, &y, &MuveConfig::default()).unwrap();
        assert!((&m.matrix - &rot).abs().max() < 1e-9);
    }

    #[test]
    fn linear_map_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng(10);
        let m = LinearMap {
            matrix: random_orthogonal(4, &mut r),
            orthogonal: true,
            provenance: Provenance::Iterative,
        };
        m.save(dir.path()).unwrap();
        let back = LinearMap::load(dir.path()).unwrap();
        assert_eq!(back.provenance, Provenance::Iterative);
        assert!((&back.matrix - &m.matrix).abs().max() < 1e-6);
    }
}
