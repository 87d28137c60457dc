//! Jordan–Hölder filtrations of commuting families (one generator for the
//! circle, two for the torus). Simple quotients are one-dimensional, so
//! the graded object is a multiset of joint-eigenvalue characters.

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matcore::{eig_with, lex_cmp, svd_right, BackgroundMetric, CMat, EigTolerances, C64, COND_LIMIT};
use crate::serde_mat::{pair, Entry};

/// Which tolerance set produced a result: algebra on given matrices, or
/// matrices extracted from a flow and carrying discretization error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Exact,
    Limit,
}

/// All thresholds are relative to the Frobenius norm of the matrix at hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub regime: Regime,
    /// `‖[G1, G2]‖ ≤ commute · ‖G1‖ ‖G2‖`.
    pub commute: f64,
    /// Eigenvalues closer than this are one cluster.
    pub cluster: f64,
    /// Singular values below this count towards the kernel.
    pub kernel: f64,
    /// Matched characters must agree within this (relative to `max(1, |λ|)`).
    pub matching: f64,
}

impl Tolerances {
    /// Size-3 Jordan blocks under round-off split by about `ε^{1/3}`, so
    /// clustering is looser than the kernel threshold.
    pub fn exact() -> Self {
        Tolerances { regime: Regime::Exact, commute: 1e-10, cluster: 1e-5, kernel: 1e-8, matching: 1e-8 }
    }

    pub fn limit() -> Self {
        Tolerances { regime: Regime::Limit, commute: 1e-6, cluster: 1e-6, kernel: 1e-6, matching: 1e-3 }
    }

    pub(crate) fn eig(&self) -> EigTolerances {
        EigTolerances { cluster_rel: self.cluster, kernel_rel: self.kernel }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::exact()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Smallest character first, lexicographic on `(Re, Im)`.
    #[default]
    Ascending,
    Descending,
}

/// Invertible, pairwise commuting generators of equal size.
#[derive(Clone, Debug, PartialEq)]
pub struct RepFamily {
    rank: usize,
    generators: Vec<CMat>,
}

impl RepFamily {
    pub fn new(generators: Vec<CMat>, tol: &Tolerances) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::Dimension("family needs at least one generator".into()));
        }
        if generators.len() > 2 {
            return Err(Error::Unsupported(format!(
                "{} generators; only abelian families of 1 or 2 generators are handled",
                generators.len()
            )));
        }
        let rank = generators[0].rows();
        for g in &generators {
            if !g.is_square() || g.rows() != rank || rank == 0 {
                return Err(Error::Dimension("generators must be square of equal size".into()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite);
            }
            let cond = g.cond_estimate();
            if cond.is_nan() || cond > COND_LIMIT {
                return Err(Error::Singular { cond });
            }
        }
        if let [g1, g2] = generators.as_slice() {
            let residual = g1.commutator(g2).frob_norm();
            let bound = tol.commute * g1.frob_norm() * g2.frob_norm();
            if residual > bound {
                return Err(Error::NotCommuting { residual, tol: bound });
            }
        }
        Ok(RepFamily { rank, generators })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn generators(&self) -> &[CMat] {
        &self.generators
    }

    fn conjugated(&self, w: &CMat, wk: &CMat) -> Vec<CMat> {
        self.generators.iter().map(|g| &(wk * g) * w).collect()
    }
}

/// Picks a cluster index from a lexicographically sorted list.
fn pick(n: usize, tb: TieBreak) -> usize {
    match tb {
        TieBreak::Ascending => 0,
        TieBreak::Descending => n - 1,
    }
}

/// Common eigenvector of commuting matrices (unit norm, standard inner
/// product) with its joint eigenvalues. Generator 1 is eigendecomposed;
/// generator 2 is then restricted to the chosen eigenspace.
fn common_eigenvector(gens: &[CMat], tol: &Tolerances, tb: TieBreak) -> Result<(CMat, Vec<C64>)> {
    let r = gens[0].rows();
    let mut v = CMat::identity(r);
    let mut chars = Vec::with_capacity(gens.len());
    for g in gens {
        let restricted = &(&v.dagger() * g) * &v;
        let d = eig_with(&restricted, &tol.eig())?;
        let c = &d.clusters[pick(d.clusters.len(), tb)];
        chars.push(c.value);
        v = &v * &c.eigenspace;
    }
    let col = v.column(0);
    let nrm = col.frob_norm();
    Ok((col.scale(1.0 / nrm), chars))
}

/// A one-dimensional invariant subspace (a common eigenvector) and its
/// joint eigenvalues, chosen by `tb` on the lexicographic character order.
pub fn minimal_invariant_subspace(
    fam: &RepFamily,
    tol: &Tolerances,
    tb: TieBreak,
) -> Result<(CMat, Vec<C64>)> {
    common_eigenvector(&fam.generators, tol, tb)
}

/// Standard-orthonormal basis of the orthogonal complement of a unit
/// vector, from the SVD of the rank-1 projector `v v^†`.
fn complement(v: &CMat) -> Result<CMat> {
    let (_, vecs) = svd_right(&(v * &v.dagger()))?;
    Ok(vecs.columns(1, v.rows() - 1))
}

/// Nested invariant subspaces `B_1 ⊂ … ⊂ B_r` (K-orthonormal columns; `B_j`
/// is the first `j` columns of `basis`) and the quotient characters in
/// filtration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Filtration {
    pub basis: CMat,
    pub characters: Vec<Vec<C64>>,
    pub tie_break: TieBreak,
}

impl Filtration {
    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }

    /// K-orthonormal basis of the `j`-th step (`1 ≤ j ≤ r`).
    pub fn step(&self, j: usize) -> CMat {
        self.basis.columns(0, j)
    }

    /// `max_{j, G} ‖(I − π_j) G π_j‖_F / ‖G‖_F`.
    pub fn invariance_residual(&self, fam: &RepFamily, k: &BackgroundMetric) -> f64 {
        let r = fam.rank;
        let id = CMat::identity(r);
        let mut worst: f64 = 0.0;
        for j in 1..r {
            let b = self.step(j);
            let pi = &(&b * &b.dagger()) * k.matrix();
            let co = &id - &pi;
            for g in &fam.generators {
                let res = (&(&co * g) * &pi).frob_norm() / g.frob_norm();
                worst = worst.max(res);
            }
        }
        worst
    }
}

/// Jordan–Hölder filtration: repeatedly split off a common eigenvector and
/// pass to the K-orthogonal complement as a model of the quotient.
pub fn jh_filtration(
    fam: &RepFamily,
    k: &BackgroundMetric,
    tol: &Tolerances,
    tb: TieBreak,
) -> Result<Filtration> {
    let r = fam.rank;
    if k.dim() != r {
        return Err(Error::Dimension("metric rank differs from family rank".into()));
    }
    // K-orthonormal basis of the current quotient model, in original coordinates.
    let mut w = k.orthonormalize(&CMat::identity(r))?;
    let mut chosen: Vec<CMat> = Vec::with_capacity(r);
    let mut characters = Vec::with_capacity(r);
    for step in 0..r {
        let wk = &w.dagger() * k.matrix();
        let gens = fam.conjugated(&w, &wk);
        let (v, chars) = common_eigenvector(&gens, tol, tb)?;
        chosen.push(&w * &v);
        characters.push(chars);
        if step + 1 < r {
            w = &w * &complement(&v)?;
        }
    }
    let basis = k.orthonormalize(&CMat::from_columns(&chosen)?)?;
    Ok(Filtration { basis, characters, tie_break: tb })
}

fn tuple_cmp(a: &[C64], b: &[C64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| lex_cmp(x, y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Multiset of joint characters, one tuple per one-dimensional summand,
/// sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct GradedObject {
    pub characters: Vec<Vec<C64>>,
}

impl GradedObject {
    pub fn new(mut characters: Vec<Vec<C64>>) -> Result<Self> {
        let g = characters.first().map_or(0, |c| c.len());
        if g == 0 || characters.iter().any(|c| c.len() != g) {
            return Err(Error::Dimension("characters must be non-empty tuples of equal length".into()));
        }
        characters.sort_by(|a, b| tuple_cmp(a, b));
        Ok(GradedObject { characters })
    }

    pub fn rank(&self) -> usize {
        self.characters.len()
    }

    pub fn generators(&self) -> usize {
        self.characters.first().map_or(0, |c| c.len())
    }

    /// Components for generator `i`, in summand order.
    pub fn component(&self, i: usize) -> Vec<C64> {
        self.characters.iter().map(|c| c[i]).collect()
    }

    /// Largest matched tuple distance against `other` under optimal assignment.
    pub fn distance(&self, other: &GradedObject) -> Result<f64> {
        if self.rank() != other.rank() || self.generators() != other.generators() {
            return Err(Error::Dimension("graded objects differ in shape".into()));
        }
        Ok(crate::verify::match_characters(&self.characters, &other.characters, 0.0).max_distance)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Flat list of `[re, im]` for one generator, list of tuples otherwise.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CharacterList {
    Single(Vec<Entry>),
    Multi(Vec<Vec<Entry>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradedJson {
    characters: CharacterList,
}

impl Serialize for GradedObject {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let to_entry = |z: &C64| Entry::Pair(pair(*z));
        let characters = if self.generators() == 1 {
            CharacterList::Single(self.characters.iter().map(|c| to_entry(&c[0])).collect())
        } else {
            CharacterList::Multi(self.characters.iter().map(|c| c.iter().map(to_entry).collect()).collect())
        };
        GradedJson { characters }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GradedObject {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = GradedJson::deserialize(d)?;
        let chars = match j.characters {
            CharacterList::Single(v) => v.into_iter().map(|e| vec![C64::from(e)]).collect(),
            CharacterList::Multi(v) => {
                v.into_iter().map(|t| t.into_iter().map(C64::from).collect()).collect()
            }
        };
        GradedObject::new(chars).map_err(serde::de::Error::custom)
    }
}

pub fn graded(fam: &RepFamily, k: &BackgroundMetric, tol: &Tolerances, tb: TieBreak) -> Result<GradedObject> {
    GradedObject::new(jh_filtration(fam, k, tol, tb)?.characters)
}

fn is_diagonal(m: &CMat) -> bool {
    (0..m.rows()).all(|i| (0..m.cols()).all(|j| i == j || m[(i, j)] == C64::new(0.0, 0.0)))
}

/// Diagonal family with the graded characters on the diagonal. Already
/// diagonal inputs are only reordered, which makes the map idempotent.
pub fn semisimplify(fam: &RepFamily, tol: &Tolerances) -> Result<RepFamily> {
    let chars = if fam.generators.iter().all(is_diagonal) {
        let raw = (0..fam.rank).map(|i| fam.generators.iter().map(|g| g[(i, i)]).collect()).collect();
        GradedObject::new(raw)?
    } else {
        graded(fam, &BackgroundMetric::identity(fam.rank), tol, TieBreak::Ascending)?
    };
    let gens = (0..fam.generators.len()).map(|i| CMat::diag(&chars.component(i))).collect();
    RepFamily::new(gens, tol)
}

/// `max_i |Π_j λ_{j,i} − det G_i| / |det G_i|`.
pub fn determinant_defect(fam: &RepFamily, g: &GradedObject) -> f64 {
    fam.generators
        .iter()
        .enumerate()
        .map(|(i, gen)| {
            let det = gen.det();
            let prod: C64 = g.component(i).iter().product();
            (prod - det).norm() / det.norm()
        })
        .fold(0.0, f64::max)
}
