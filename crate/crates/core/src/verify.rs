//! Semisimplicity and isomorphism verdicts for flow limits, plus the
//! subbundle diagnostics (projection decay, second fundamental form, the
//! normalized map `η`) tracked along a gauge-tracked flow.

use serde::{Deserialize, Serialize};

use crate::bundle::{
    central_diff, invariant_subspace_project, projection_wrt, transport_from_origin, ConnectionField,
    GaugeField,
};
use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::jholder::{graded, GradedObject, Regime, RepFamily, TieBreak, Tolerances};
use crate::matcore::{adjoint_wrt, eig_with, norm_sq_k, BackgroundMetric, CMat, C64, COND_LIMIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Isomorphic,
    NotSemisimple,
    SpectraMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoVerdict {
    pub verdict: Verdict,
    pub semisimple: bool,
    /// Largest `algebraic − geometric` multiplicity gap over all clusters.
    pub semisimple_residual: f64,
    pub spectra_match: bool,
    /// Largest tuple distance under the optimal character assignment.
    pub max_distance: f64,
    pub regime: Regime,
    pub tolerances: Tolerances,
}

/// Diagonalizability of every generator (commuting + diagonalizable means
/// simultaneously diagonalizable).
pub fn is_semisimple(fam: &RepFamily, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0usize;
    for g in fam.generators() {
        let d = eig_with(g, &tol.eig())?;
        let defect: usize = d.clusters.iter().map(|c| c.algebraic.saturating_sub(c.geometric)).sum();
        worst = worst.max(defect);
    }
    Ok((worst == 0, worst as f64))
}

pub struct Matching {
    /// `assignment[i]` is the index in `b` matched to `a[i]`.
    pub assignment: Vec<usize>,
    pub max_distance: f64,
    pub used_hungarian: bool,
}

fn tuple_dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Greedy nearest-pair assignment. Falls back to a minimum-cost
/// assignment when greedy leaves a pair outside `tol` or some element has
/// two unused candidates within `tol` of each other.
pub fn match_characters(a: &[Vec<C64>], b: &[Vec<C64>], tol: f64) -> Matching {
    let n = a.len();
    let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| tuple_dist(x, y)).collect()).collect();
    let mut used = vec![false; n];
    let mut assignment = Vec::with_capacity(n);
    let mut ambiguous = false;
    for row in &cost {
        let mut cands: Vec<(f64, usize)> =
            row.iter().enumerate().filter(|(j, _)| !used[*j]).map(|(j, &d)| (d, j)).collect();
        cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let (best, j) = cands[0];
        if best > tol || cands.get(1).is_some_and(|c| c.0 - best <= tol && tuple_dist(&b[c.1], &b[j]) > tol) {
            ambiguous = true;
        }
        used[j] = true;
        assignment.push(j);
    }
    let used_hungarian = ambiguous;
    if ambiguous {
        assignment = hungarian(&cost);
    }
    let max_distance = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).fold(0.0, f64::max);
    Matching { assignment, max_distance, used_hungarian }
}

/// Minimum-cost perfect assignment on a square cost matrix
/// (Kuhn–Munkres with potentials, O(n³)).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Two semisimple commuting families are isomorphic iff their joint
/// character multisets agree.
pub fn iso_check(limit: &RepFamily, reference: &GradedObject, tol: &Tolerances) -> Result<IsoVerdict> {
    if limit.rank() != reference.rank() || limit.generators().len() != reference.generators() {
        return Err(Error::Dimension(format!(
            "limit family has rank {} with {} generators, graded object has {} summands of {} characters",
            limit.rank(),
            limit.generators().len(),
            reference.rank(),
            reference.generators()
        )));
    }
    let (semisimple, semisimple_residual) = is_semisimple(limit, tol)?;
    let k = BackgroundMetric::identity(limit.rank());
    let limit_chars = graded(limit, &k, tol, TieBreak::Ascending)?;
    let scale = reference.characters.iter().flatten().map(|z| z.norm()).fold(1.0, f64::max);
    let m = match_characters(&limit_chars.characters, &reference.characters, tol.matching * scale);
    let spectra_match = m.max_distance <= tol.matching * scale;
    let verdict = if !semisimple {
        Verdict::NotSemisimple
    } else if !spectra_match {
        Verdict::SpectraMismatch
    } else {
        Verdict::Isomorphic
    };
    Ok(IsoVerdict {
        verdict,
        semisimple,
        semisimple_residual,
        spectra_match,
        max_distance: m.max_distance,
        regime: tol.regime,
        tolerances: tol.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct SecondFundamentalForm {
    /// `β_i(p) = −π (∂_i π + [A_i, π])(p)`.
    pub beta: Vec<Vec<CMat>>,
    /// `‖β‖²_{L²} = mean_p Σ_i |β_i(p)|²_K`.
    pub norm_sq: f64,
    /// `sup_p ‖(I − π)(Dπ)π‖`, zero when the subbundle is D-invariant.
    pub invariance_residual: f64,
}

/// `Dπ` per direction for a projection field.
fn covariant_derivative(a: &ConnectionField, pi: &[CMat]) -> Vec<Vec<CMat>> {
    let grid = *a.grid();
    (0..grid.dim())
        .map(|dir| {
            let d = central_diff(&grid, pi, dir);
            d.into_iter()
                .zip(a.coeff(dir))
                .zip(pi)
                .map(|((mut x, ai), p)| {
                    x += &ai.commutator(p);
                    x
                })
                .collect()
        })
        .collect()
}

/// Second fundamental form for a projection field `π(p)`.
pub fn second_fundamental_form_field(
    a: &ConnectionField,
    k: &BackgroundMetric,
    pi: &[CMat],
) -> SecondFundamentalForm {
    let n = a.grid().len();
    let id = CMat::identity(a.rank());
    let dpi = covariant_derivative(a, pi);
    let mut norm_sq = 0.0;
    let mut inv: f64 = 0.0;
    let beta: Vec<Vec<CMat>> = dpi
        .iter()
        .map(|field| {
            field
                .iter()
                .zip(pi)
                .map(|(d, p)| {
                    let b = -(p * d);
                    norm_sq += norm_sq_k(&b, k);
                    inv = inv.max((&(&(&id - p) * d) * p).frob_norm());
                    b
                })
                .collect()
        })
        .collect();
    SecondFundamentalForm { beta, norm_sq: norm_sq / n as f64, invariance_residual: inv }
}

/// Second fundamental form of the constant subbundle spanned by `basis`.
pub fn second_fundamental_form(
    a: &ConnectionField,
    k: &BackgroundMetric,
    basis: &CMat,
) -> Result<SecondFundamentalForm> {
    let pi = invariant_subspace_project(basis, k)?;
    Ok(second_fundamental_form_field(a, k, &vec![pi; a.grid().len()]))
}

/// Per-record subbundle diagnostics along a gauge-tracked flow.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubbundleTrace {
    pub t: Vec<f64>,
    /// `∫|D_t π₁ᵗ|²_K` with `π₁ᵗ = σ π^{H(t)} σ⁻¹`.
    pub d_pi_sq: Vec<f64>,
    /// `‖β_t‖²_{L²}` for the subbundle `σ(t) E₁`.
    pub beta_sq: Vec<f64>,
    /// `‖η_t − η_prev‖_{L²}` between consecutive records.
    pub eta_increment: Vec<f64>,
    /// `‖D_t η − η D_S‖_{L²}` with `D_S` the connection induced on `E₁` by `D₀`.
    pub eta_intertwining: Vec<f64>,
    /// `‖(I − π_η) D_t η‖_{L²}`: failure of range(η) to be `D_t`-invariant.
    pub eta_invariance: Vec<f64>,
}

impl SubbundleTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Incremental producer of a [`SubbundleTrace`], fed one state at a time.
pub struct SubbundleTracker {
    k: BackgroundMetric,
    /// Basis of `E₁` at every grid point (parallel transport of the
    /// basepoint basis along `D₀`).
    basis: Vec<CMat>,
    /// Connection matrix of `D₀` restricted to `E₁` in that basis.
    induced: Vec<Vec<CMat>>,
    prev_eta: Option<Vec<CMat>>,
    pub trace: SubbundleTrace,
}

impl SubbundleTracker {
    /// `basis0` spans `E₁` at the basepoint (grid point 0).
    pub fn new(a0: &ConnectionField, k: &BackgroundMetric, basis0: &CMat) -> Result<Self> {
        if basis0.rows() != a0.rank() || basis0.cols() == 0 {
            return Err(Error::Dimension("subbundle basis must be r x k with k >= 1".into()));
        }
        let grid = *a0.grid();
        let basis0 = k.orthonormalize(basis0)?;
        let transport = transport_from_origin(a0);
        let basis: Vec<CMat> = transport.iter().map(|p| p * &basis0).collect();
        let mut induced = Vec::with_capacity(grid.dim());
        for dir in 0..grid.dim() {
            let db = central_diff(&grid, &basis, dir);
            let field = (0..grid.len())
                .map(|p| {
                    let b = &basis[p];
                    let bk = &b.dagger() * k.matrix();
                    let gram = (&bk * b).inverse_checked(COND_LIMIT)?;
                    let mut rhs = db[p].clone();
                    rhs += &(&a0.coeff(dir)[p] * b);
                    Ok(&(&gram * &bk) * &rhs)
                })
                .collect::<Result<_>>()?;
            induced.push(field);
        }
        Ok(SubbundleTracker {
            k: k.clone(),
            basis,
            induced,
            prev_eta: None,
            trace: SubbundleTrace::default(),
        })
    }

    /// `η = σ e₁` scaled to unit L² norm.
    fn normalized_eta(&self, sigma: &GaugeField) -> Vec<CMat> {
        let k = &self.k;
        let mut eta: Vec<CMat> = sigma.values().iter().zip(&self.basis).map(|(s, b)| s * b).collect();
        let n = eta.len() as f64;
        let eta_norm = (eta.iter().map(|m| norm_sq_k(m, k)).sum::<f64>() / n).sqrt();
        for e in &mut eta {
            *e = e.scale(1.0 / eta_norm);
        }
        eta
    }

    /// Sets the reference for the next increment without recording a sample.
    pub fn prime(&mut self, sigma: &GaugeField) -> Result<()> {
        self.prev_eta = Some(self.normalized_eta(sigma));
        Ok(())
    }

    pub fn observe(&mut self, t: f64, a: &ConnectionField, sigma: &GaugeField) -> Result<()> {
        let k = &self.k;
        let grid = *a.grid();
        let n = grid.len();
        let id = CMat::identity(a.rank());

        let mut pi1 = Vec::with_capacity(n);
        for p in 0..n {
            let s = &sigma.values()[p];
            let sinv = s
                .inverse_checked(COND_LIMIT)
                .map_err(|_| Error::GaugeConditioning { point: p, cond: s.cond_estimate() })?;
            let h = k.matrix() * &(&adjoint_wrt(s, k) * s);
            let pih = projection_wrt(&self.basis[p], &h)?;
            pi1.push(&(s * &pih) * &sinv);
        }
        let sff = second_fundamental_form_field(a, k, &pi1);
        let dpi = covariant_derivative(a, &pi1);
        let d_pi_sq = dpi.iter().flatten().map(|m| norm_sq_k(m, k)).sum::<f64>() / n as f64;

        let eta = self.normalized_eta(sigma);
        let increment = match &self.prev_eta {
            Some(prev) => {
                (eta.iter().zip(prev).map(|(x, y)| norm_sq_k(&(x - y), k)).sum::<f64>() / n as f64).sqrt()
            }
            None => 0.0,
        };

        let mut inter = 0.0;
        let mut invariance = 0.0;
        for dir in 0..grid.dim() {
            let de = central_diff(&grid, &eta, dir);
            for p in 0..n {
                let mut d = de[p].clone();
                d += &(&a.coeff(dir)[p] * &eta[p]);
                inter += norm_sq_k(&(&d - &(&eta[p] * &self.induced[dir][p])), k);
                let pe = projection_wrt(&eta[p], k.matrix())?;
                invariance += norm_sq_k(&(&(&id - &pe) * &d), k);
            }
        }

        self.trace.t.push(t);
        self.trace.d_pi_sq.push(d_pi_sq);
        self.trace.beta_sq.push(sff.norm_sq);
        self.trace.eta_increment.push(increment);
        self.trace.eta_intertwining.push((inter / n as f64).sqrt());
        self.trace.eta_invariance.push((invariance / n as f64).sqrt());
        self.prev_eta = Some(eta);
        Ok(())
    }
}

fn trace_states(
    states: &[FlowState],
    a0: &ConnectionField,
    basis0: &CMat,
    k: &BackgroundMetric,
) -> Result<SubbundleTrace> {
    let mut tr = SubbundleTracker::new(a0, k, basis0)?;
    for st in states {
        let sigma = st
            .sigma
            .as_ref()
            .ok_or_else(|| Error::MissingGauge(format!("state at t = {} has no gauge field", st.t)))?;
        tr.observe(st.t, &st.a, sigma)?;
    }
    Ok(tr.trace)
}

/// Projection decay and second fundamental form along a trajectory.
pub fn projection_trace(
    states: &[FlowState],
    a0: &ConnectionField,
    basis0: &CMat,
    k: &BackgroundMetric,
) -> Result<SubbundleTrace> {
    let mut tr = trace_states(states, a0, basis0, k)?;
    tr.eta_increment.clear();
    tr.eta_intertwining.clear();
    tr.eta_invariance.clear();
    Ok(tr)
}

/// Normalized-map increments and intertwining defects along a trajectory.
pub fn eta_trace(
    states: &[FlowState],
    a0: &ConnectionField,
    basis0: &CMat,
    k: &BackgroundMetric,
) -> Result<SubbundleTrace> {
    let mut tr = trace_states(states, a0, basis0, k)?;
    tr.d_pi_sq.clear();
    tr.beta_sq.clear();
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{make_constant_connection, BaseGrid};
    use crate::matcore::c64;

    fn exact() -> Tolerances {
        Tolerances::exact()
    }

    fn fam(g: Vec<CMat>, t: &Tolerances) -> RepFamily {
        RepFamily::new(g, t).unwrap()
    }

    fn one(chars: &[f64]) -> GradedObject {
        GradedObject::new(chars.iter().map(|&x| vec![c64(x, 0.0)]).collect()).unwrap()
    }

    #[test]
    fn semisimple_examples() {
        let t = Tolerances::limit();
        assert_eq!(is_semisimple(&fam(vec![CMat::diag_real(&[2.0, 3.0])], &t), &t).unwrap(), (true, 0.0));
        let j = CMat::real(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(is_semisimple(&fam(vec![j], &t), &t).unwrap(), (false, 1.0));
        let near = CMat::real(&[&[1.0, 1e-9], &[0.0, 1.0]]);
        assert!(is_semisimple(&fam(vec![near.clone()], &t), &t).unwrap().0);
        // The exact regime resolves a larger perturbation as a Jordan block.
        let j7 = CMat::real(&[&[1.0, 1e-7], &[0.0, 1.0]]);
        assert!(is_semisimple(&fam(vec![near], &exact()), &exact()).unwrap().0);
        assert!(!is_semisimple(&fam(vec![j7], &exact()), &exact()).unwrap().0);
    }

    #[test]
    fn iso_examples() {
        let t = Tolerances::limit();
        let v = iso_check(&fam(vec![CMat::identity(2)], &t), &one(&[1.0, 1.0]), &t).unwrap();
        assert_eq!(v.verdict, Verdict::Isomorphic);
        let v = iso_check(&fam(vec![CMat::diag_real(&[2.0, 0.5])], &t), &one(&[2.0, 0.5]), &t).unwrap();
        assert_eq!(v.verdict, Verdict::Isomorphic);
        assert_eq!(v.max_distance, 0.0);
        let j = CMat::real(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let v = iso_check(&fam(vec![j], &t), &one(&[1.0, 1.0]), &t).unwrap();
        assert_eq!(v.verdict, Verdict::NotSemisimple);
        let v = iso_check(&fam(vec![CMat::diag_real(&[2.0])], &t), &one(&[3.0]), &t).unwrap();
        assert_eq!(v.verdict, Verdict::SpectraMismatch);
        assert!(iso_check(&fam(vec![CMat::identity(3)], &t), &one(&[1.0, 1.0]), &t).is_err());
    }

    #[test]
    fn hungarian_beats_greedy() {
        // Greedy takes (0,0) at cost 1 and is forced into (1,1) at cost 10.
        let cost = vec![vec![1.0, 2.0], vec![2.0, 10.0]];
        assert_eq!(hungarian(&cost), vec![1, 0]);
        let a = vec![vec![c64(0.0, 0.0)], vec![c64(1.0, 0.0)]];
        let b = vec![vec![c64(0.9, 0.0)], vec![c64(0.1, 0.0)]];
        let m = match_characters(&a, &b, 1e-3);
        assert_eq!(m.assignment, vec![1, 0]);
        assert!((m.max_distance - 0.1).abs() < 1e-15);
    }

    #[test]
    fn second_fundamental_form_examples() {
        let g = BaseGrid::circle(16).unwrap();
        let k = BackgroundMetric::identity(2);
        let e1 = CMat::real(&[&[1.0], &[0.0]]);
        let zero = ConnectionField::zero(g, 2);
        assert_eq!(second_fundamental_form(&zero, &k, &e1).unwrap().norm_sq, 0.0);
        let diag = make_constant_connection(g, &[CMat::diag_real(&[0.3, -0.7])]).unwrap();
        assert_eq!(second_fundamental_form(&diag, &k, &e1).unwrap().norm_sq, 0.0);
        let nil = make_constant_connection(g, &[CMat::real(&[&[0.0, 1.0], &[0.0, 0.0]])]).unwrap();
        let s = second_fundamental_form(&nil, &k, &e1).unwrap();
        assert!((s.norm_sq - 1.0).abs() < 1e-15);
        assert_eq!(s.invariance_residual, 0.0);
        let e2 = CMat::real(&[&[0.0], &[1.0]]);
        assert!(second_fundamental_form(&nil, &k, &e2).unwrap().invariance_residual > 0.5);
    }

    #[test]
    fn traces_at_identity_gauge() {
        let g = BaseGrid::circle(16).unwrap();
        let k = BackgroundMetric::identity(2);
        let e1 = CMat::real(&[&[1.0], &[0.0]]);
        let nil = make_constant_connection(g, &[CMat::real(&[&[0.0, 1.0], &[0.0, 0.0]])]).unwrap();
        let st = FlowState::new(nil.clone(), 1e-3, true);
        let tr = projection_trace(std::slice::from_ref(&st), &nil, &e1, &k).unwrap();
        assert!((tr.d_pi_sq[0] - 1.0).abs() < 1e-14);
        assert!((tr.beta_sq[0] - 1.0).abs() < 1e-14);
        let tr = eta_trace(&[st.clone(), st], &nil, &e1, &k).unwrap();
        assert_eq!(tr.eta_increment, vec![0.0, 0.0]);
        assert!(tr.eta_intertwining.iter().all(|&d| d < 1e-14));

        let bare = FlowState::new(nil.clone(), 1e-3, false);
        assert!(matches!(projection_trace(&[bare], &nil, &e1, &k), Err(Error::MissingGauge(_))));
    }

    #[test]
    fn rank_one_eta_is_constant() {
        let g = BaseGrid::circle(16).unwrap();
        let k = BackgroundMetric::identity(1);
        let a = make_constant_connection(g, &[CMat::diag(&[c64(0.4, 1.3)])]).unwrap();
        let st = FlowState::new(a.clone(), 1e-3, true);
        let tr = eta_trace(&[st.clone(), st], &a, &CMat::identity(1), &k).unwrap();
        assert!(tr.eta_intertwining.iter().all(|&d| d < 1e-13));
        assert_eq!(tr.eta_increment[1], 0.0);
    }
}
