//! Flat bundles over the periodic circle and square torus in a global
//! trivialization: connection coefficients, gauge fields, holonomy.
//!
//! Points are indexed `p = i + nx * j` with `i` along direction 0 (x) and
//! `j` along direction 1 (y). Both directions have unit length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{adjoint_wrt, expm, herm_split, logm_principal, BackgroundMetric, CMat, COND_LIMIT};

/// Smallest grid size per direction.
pub const MIN_POINTS: usize = 8;

/// Relative tolerance on `‖[C1, C2]‖` for constant torus coefficients.
pub const TOL_COMM_CONST: f64 = 1e-12;

/// Default flatness tolerance for validated inputs.
pub const TOL_FLAT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BaseSpec", into = "BaseSpec")]
pub enum BaseGrid {
    Circle { n: usize },
    Torus { nx: usize, ny: usize },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ny: Option<usize>,
}

impl TryFrom<BaseSpec> for BaseGrid {
    type Error = Error;
    fn try_from(b: BaseSpec) -> Result<Self> {
        match (b.kind.as_str(), b.n, b.nx, b.ny) {
            ("circle", Some(n), None, None) => BaseGrid::circle(n),
            ("torus", None, Some(nx), Some(ny)) => BaseGrid::torus(nx, ny),
            _ => Err(Error::Grid("base must be {kind: circle, n} or {kind: torus, nx, ny}".into())),
        }
    }
}

impl From<BaseGrid> for BaseSpec {
    fn from(g: BaseGrid) -> Self {
        match g {
            BaseGrid::Circle { n } => BaseSpec { kind: "circle".into(), n: Some(n), nx: None, ny: None },
            BaseGrid::Torus { nx, ny } => {
                BaseSpec { kind: "torus".into(), n: None, nx: Some(nx), ny: Some(ny) }
            }
        }
    }
}

impl BaseGrid {
    pub fn circle(n: usize) -> Result<Self> {
        if n < MIN_POINTS {
            return Err(Error::Grid(format!("circle needs n >= {MIN_POINTS}, got {n}")));
        }
        Ok(BaseGrid::Circle { n })
    }

    pub fn torus(nx: usize, ny: usize) -> Result<Self> {
        if nx < MIN_POINTS || ny < MIN_POINTS {
            return Err(Error::Grid(format!("torus needs nx, ny >= {MIN_POINTS}, got {nx} x {ny}")));
        }
        Ok(BaseGrid::Torus { nx, ny })
    }

    /// Number of base directions (= number of generators of π₁).
    pub fn dim(&self) -> usize {
        match self {
            BaseGrid::Circle { .. } => 1,
            BaseGrid::Torus { .. } => 2,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        match *self {
            BaseGrid::Circle { n } => [n, 1],
            BaseGrid::Torus { nx, ny } => [nx, ny],
        }
    }

    pub fn len(&self) -> usize {
        let [a, b] = self.shape();
        a * b
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, dir: usize) -> f64 {
        1.0 / self.shape()[dir] as f64
    }

    pub fn coords(&self, p: usize) -> (usize, usize) {
        let nx = self.shape()[0];
        (p % nx, p / nx)
    }

    pub fn point(&self, i: usize, j: usize) -> usize {
        let [nx, ny] = self.shape();
        (i % nx) + nx * (j % ny)
    }

    /// Position of point `p` in `[0, 1)^dim`.
    pub fn position(&self, p: usize) -> [f64; 2] {
        let (i, j) = self.coords(p);
        [i as f64 * self.spacing(0), j as f64 / self.shape()[1] as f64]
    }

    /// Neighbour one cell forward (`+1`) or backward (`-1`) along `dir`.
    #[inline]
    pub fn shift(&self, p: usize, dir: usize, forward: bool) -> usize {
        let [nx, ny] = self.shape();
        let (i, j) = (p % nx, p / nx);
        match (dir, forward) {
            (0, true) => (i + 1) % nx + nx * j,
            (0, false) => (i + nx - 1) % nx + nx * j,
            (_, true) => i + nx * ((j + 1) % ny),
            (_, false) => i + nx * ((j + ny - 1) % ny),
        }
    }
}

/// Second-order central difference of a matrix field along `dir`.
pub fn central_diff(grid: &BaseGrid, field: &[CMat], dir: usize) -> Vec<CMat> {
    let inv2h = 0.5 / grid.spacing(dir);
    (0..grid.len())
        .map(|p| {
            let fwd = &field[grid.shift(p, dir, true)];
            let bwd = &field[grid.shift(p, dir, false)];
            (fwd - bwd).scale(inv2h)
        })
        .collect()
}

/// `D = d + A` on the trivial rank-`r` bundle; `coeffs[i][p] = A_i(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionField {
    grid: BaseGrid,
    rank: usize,
    coeffs: Vec<Vec<CMat>>,
}

impl ConnectionField {
    pub fn new(grid: BaseGrid, rank: usize, coeffs: Vec<Vec<CMat>>) -> Result<Self> {
        if rank == 0 || rank > crate::matcore::MAX_RANK {
            return Err(Error::Dimension(format!("rank {rank} outside 1..=16")));
        }
        if coeffs.len() != grid.dim() {
            return Err(Error::Dimension(format!(
                "expected {} coefficient fields, got {}",
                grid.dim(),
                coeffs.len()
            )));
        }
        for field in &coeffs {
            if field.len() != grid.len() {
                return Err(Error::Dimension(format!(
                    "coefficient field has {} points, grid has {}",
                    field.len(),
                    grid.len()
                )));
            }
            for m in field {
                if m.rows() != rank || m.cols() != rank {
                    return Err(Error::Dimension("coefficient is not r x r".into()));
                }
                if !m.is_finite() {
                    return Err(Error::NonFinite);
                }
            }
        }
        Ok(ConnectionField { grid, rank, coeffs })
    }

    pub fn zero(grid: BaseGrid, rank: usize) -> Self {
        let coeffs = vec![vec![CMat::zeros(rank, rank); grid.len()]; grid.dim()];
        ConnectionField { grid, rank, coeffs }
    }

    pub fn grid(&self) -> &BaseGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn coeffs(&self) -> &[Vec<CMat>] {
        &self.coeffs
    }

    pub fn coeff(&self, dir: usize) -> &[CMat] {
        &self.coeffs[dir]
    }

    /// `max_p Σ_i ‖A_i(p) − B_i(p)‖_F`.
    pub fn sup_distance(&self, other: &ConnectionField) -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..self.grid.len() {
            let d: f64 =
                (0..self.grid.dim()).map(|i| (&self.coeffs[i][p] - &other.coeffs[i][p]).frob_norm_sq()).sum();
            worst = worst.max(d.sqrt());
        }
        worst
    }

    pub fn to_json(&self) -> ConnectionJson {
        ConnectionJson { rank: self.rank, base: self.grid, coeffs: self.coeffs.clone() }
    }
}

/// On-disk form of a [`ConnectionField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionJson {
    pub rank: usize,
    pub base: BaseGrid,
    pub coeffs: Vec<Vec<CMat>>,
}

impl TryFrom<ConnectionJson> for ConnectionField {
    type Error = Error;
    fn try_from(j: ConnectionJson) -> Result<Self> {
        ConnectionField::new(j.base, j.rank, j.coeffs)
    }
}

impl ConnectionField {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_json())?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: ConnectionJson = serde_json::from_str(s)?;
        j.try_into()
    }
}

/// `A_i = U_i + ψ_i` with `U_i` K-skew and `ψ_i` K-self-adjoint.
#[derive(Clone, Debug)]
pub struct DecompositionField {
    pub u: Vec<Vec<CMat>>,
    pub psi: Vec<Vec<CMat>>,
}

impl DecompositionField {
    pub fn recompose(&self, grid: BaseGrid) -> Result<ConnectionField> {
        let rank = self.u.first().and_then(|f| f.first()).map_or(0, |m| m.rows());
        let coeffs = self
            .u
            .iter()
            .zip(&self.psi)
            .map(|(us, ps)| us.iter().zip(ps).map(|(u, p)| u + p).collect())
            .collect();
        ConnectionField::new(grid, rank, coeffs)
    }
}

/// Invertible matrix field `σ`; derived `h = σ^{*K}σ`, `s = log h`, `H = K h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeField {
    grid: BaseGrid,
    rank: usize,
    sigma: Vec<CMat>,
}

impl GaugeField {
    pub fn new(grid: BaseGrid, rank: usize, sigma: Vec<CMat>) -> Result<Self> {
        if sigma.len() != grid.len() {
            return Err(Error::Dimension("gauge field size does not match grid".into()));
        }
        for (p, m) in sigma.iter().enumerate() {
            if m.rows() != rank || m.cols() != rank {
                return Err(Error::Dimension("gauge value is not r x r".into()));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite);
            }
            let cond = m.cond_estimate();
            if cond.is_nan() || cond > COND_LIMIT {
                return Err(Error::GaugeConditioning { point: p, cond });
            }
        }
        Ok(GaugeField { grid, rank, sigma })
    }

    pub fn identity(grid: BaseGrid, rank: usize) -> Self {
        GaugeField { grid, rank, sigma: vec![CMat::identity(rank); grid.len()] }
    }

    pub fn from_fn(grid: BaseGrid, rank: usize, f: impl Fn([f64; 2]) -> CMat) -> Result<Self> {
        let sigma = (0..grid.len()).map(|p| f(grid.position(p))).collect();
        Self::new(grid, rank, sigma)
    }

    pub fn constant(grid: BaseGrid, s: &CMat) -> Result<Self> {
        Self::new(grid, s.rows(), vec![s.clone(); grid.len()])
    }

    /// Unchecked construction for trajectories whose conditioning is
    /// monitored by the caller.
    pub(crate) fn from_values(grid: BaseGrid, rank: usize, sigma: Vec<CMat>) -> Self {
        GaugeField { grid, rank, sigma }
    }

    pub fn grid(&self) -> &BaseGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn values(&self) -> &[CMat] {
        &self.sigma
    }

    /// Worst pointwise condition estimate.
    pub fn max_cond(&self) -> f64 {
        self.sigma.iter().map(|m| m.cond_estimate()).fold(0.0, f64::max)
    }

    pub fn h(&self, k: &BackgroundMetric) -> Vec<CMat> {
        self.sigma.iter().map(|s| &adjoint_wrt(s, k) * s).collect()
    }

    pub fn s(&self, k: &BackgroundMetric) -> Result<Vec<CMat>> {
        self.h(k).iter().map(|h| logm_h(h, k)).collect()
    }
}

/// `log h` for K-self-adjoint positive `h`. Only for `K = I` is `h`
/// Hermitian; otherwise the Schur route is taken.
fn logm_h(h: &CMat, k: &BackgroundMetric) -> Result<CMat> {
    if k.is_identity() {
        logm_principal(&(h + &h.dagger()).scale(0.5))
    } else {
        logm_principal(h)
    }
}

/// Transforms `A ↦ σ A σ⁻¹ − (dσ) σ⁻¹` with central-difference `dσ`.
pub fn gauge_apply(sigma: &GaugeField, a: &ConnectionField) -> Result<ConnectionField> {
    if sigma.grid != a.grid || sigma.rank != a.rank {
        return Err(Error::Dimension("gauge field and connection disagree".into()));
    }
    let grid = a.grid;
    let inv: Vec<CMat> = sigma
        .sigma
        .iter()
        .enumerate()
        .map(|(p, s)| {
            s.inverse_checked(COND_LIMIT).map_err(|e| match e {
                Error::Singular { cond } => Error::GaugeConditioning { point: p, cond },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let mut coeffs = Vec::with_capacity(grid.dim());
    for dir in 0..grid.dim() {
        let ds = central_diff(&grid, &sigma.sigma, dir);
        let field = (0..grid.len())
            .map(|p| {
                let conj = &(&sigma.sigma[p] * &a.coeffs[dir][p]) * &inv[p];
                &conj - &(&ds[p] * &inv[p])
            })
            .collect();
        coeffs.push(field);
    }
    ConnectionField::new(grid, a.rank, coeffs)
}

/// `H = K σ^{*K} σ` pointwise.
pub fn metric_from_gauge(sigma: &GaugeField, k: &BackgroundMetric) -> Vec<CMat> {
    sigma.h(k).iter().map(|h| k.matrix() * h).collect()
}

/// Constant field `A_i = C_i`; torus coefficients must commute.
pub fn make_constant_connection(grid: BaseGrid, c: &[CMat]) -> Result<ConnectionField> {
    if c.len() != grid.dim() {
        return Err(Error::Dimension(format!(
            "{} base directions need {} coefficient matrices, got {}",
            grid.dim(),
            grid.dim(),
            c.len()
        )));
    }
    let rank = c[0].rows();
    if c.iter().any(|m| !m.is_square() || m.rows() != rank) {
        return Err(Error::Dimension("coefficient matrices must be square of equal size".into()));
    }
    if c.len() == 2 {
        let comm = c[0].commutator(&c[1]).frob_norm();
        let tol = TOL_COMM_CONST * (c[0].frob_norm() * c[1].frob_norm()).max(1.0);
        if comm > tol {
            return Err(Error::NotFlat { residual: comm, tol });
        }
    }
    let coeffs = c.iter().map(|m| vec![m.clone(); grid.len()]).collect();
    ConnectionField::new(grid, rank, coeffs)
}

/// Pointwise `herm_split` in each direction.
pub fn decompose(a: &ConnectionField, k: &BackgroundMetric) -> DecompositionField {
    let mut u = Vec::with_capacity(a.grid.dim());
    let mut psi = Vec::with_capacity(a.grid.dim());
    for field in &a.coeffs {
        let (us, ps): (Vec<CMat>, Vec<CMat>) = field.iter().map(|m| herm_split(m, k)).unzip();
        u.push(us);
        psi.push(ps);
    }
    DecompositionField { u, psi }
}

/// Sup over the grid of `‖∂_x A_y − ∂_y A_x + [A_x, A_y]‖_F`; zero on the circle.
pub fn flatness_residual(a: &ConnectionField) -> f64 {
    if a.grid.dim() < 2 {
        return 0.0;
    }
    let dx_ay = central_diff(&a.grid, &a.coeffs[1], 0);
    let dy_ax = central_diff(&a.grid, &a.coeffs[0], 1);
    (0..a.grid.len())
        .map(|p| {
            let mut f = &dx_ay[p] - &dy_ax[p];
            f += &a.coeffs[0][p].commutator(&a.coeffs[1][p]);
            f.frob_norm()
        })
        .fold(0.0, f64::max)
}

/// Transport factor across the cell from `p` to its forward neighbour
/// along `dir`: `expm(−(A(p) + A(p+e)) h / 2)`.
fn cell_factor(a: &ConnectionField, p: usize, dir: usize) -> CMat {
    let q = a.grid.shift(p, dir, true);
    let h = a.grid.spacing(dir);
    let mid = (&a.coeffs[dir][p] + &a.coeffs[dir][q]).scale(-0.5 * h);
    expm(&mid)
}

/// Holonomy around the loop through `basepoint` along `dir`, solving
/// `v' = −A v`; later cells multiply on the left.
pub fn monodromy(a: &ConnectionField, dir: usize, basepoint: usize) -> Result<CMat> {
    if dir >= a.grid.dim() {
        return Err(Error::Dimension(format!("no base direction {dir}")));
    }
    if basepoint >= a.grid.len() {
        return Err(Error::Dimension(format!("basepoint {basepoint} outside grid")));
    }
    let steps = a.grid.shape()[dir];
    let mut m = CMat::identity(a.rank);
    let mut p = basepoint;
    for _ in 0..steps {
        m = &cell_factor(a, p, dir) * &m;
        p = a.grid.shift(p, dir, true);
    }
    Ok(m)
}

/// One holonomy matrix per generator of π₁ at a common basepoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Monodromy {
    pub generators: Vec<CMat>,
    pub basepoint: usize,
}

pub fn monodromies(a: &ConnectionField, basepoint: usize) -> Result<Monodromy> {
    let generators = (0..a.grid.dim()).map(|d| monodromy(a, d, basepoint)).collect::<Result<_>>()?;
    Ok(Monodromy { generators, basepoint })
}

/// Parallel transport `P(p)` from point 0 to every grid point: along the
/// x-axis first, then up each column.
pub fn transport_from_origin(a: &ConnectionField) -> Vec<CMat> {
    let grid = a.grid;
    let [nx, ny] = grid.shape();
    let mut out = vec![CMat::identity(a.rank); grid.len()];
    for i in 1..nx {
        let prev = grid.point(i - 1, 0);
        out[grid.point(i, 0)] = &cell_factor(a, prev, 0) * &out[prev];
    }
    if grid.dim() == 2 {
        for i in 0..nx {
            for j in 1..ny {
                let prev = grid.point(i, j - 1);
                out[grid.point(i, j)] = &cell_factor(a, prev, 1) * &out[prev];
            }
        }
    }
    out
}

/// K-orthogonal projection onto the column span of `basis`:
/// `π = B (B^† K B)^{-1} B^† K`.
pub fn invariant_subspace_project(basis: &CMat, k: &BackgroundMetric) -> Result<CMat> {
    let q = k.orthonormalize(basis)?;
    let p = &q * &q.dagger();
    Ok(if k.is_identity() { p } else { &p * k.matrix() })
}

/// Orthogonal projection onto span(`basis`) for the Hermitian positive
/// metric matrix `h` (vectors pair as `y^† h x`).
pub fn projection_wrt(basis: &CMat, h: &CMat) -> Result<CMat> {
    let gram = &(&basis.dagger() * h) * basis;
    let inv = gram.inverse_checked(COND_LIMIT).map_err(|_| Error::RankDeficient)?;
    Ok(&(&(basis * &inv) * &basis.dagger()) * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{c64, eigenvalues, lex_cmp};

    fn n2() -> CMat {
        CMat::real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        (a - b).max_abs() <= tol
    }

    #[test]
    fn grid_validation_and_indexing() {
        assert!(BaseGrid::circle(7).is_err());
        assert!(BaseGrid::torus(8, 4).is_err());
        let g = BaseGrid::torus(8, 10).unwrap();
        assert_eq!(g.len(), 80);
        let p = g.point(7, 9);
        assert_eq!(g.shift(p, 0, true), g.point(0, 9));
        assert_eq!(g.shift(p, 1, true), g.point(7, 0));
        assert_eq!(g.shift(g.point(0, 0), 1, false), g.point(0, 9));
        for p in 0..g.len() {
            for d in 0..2 {
                assert_eq!(g.shift(g.shift(p, d, true), d, false), p);
            }
        }
    }

    #[test]
    fn constant_monodromy_examples() {
        let g = BaseGrid::circle(64).unwrap();
        let a = make_constant_connection(g, &[n2()]).unwrap();
        let m = monodromy(&a, 0, 0).unwrap();
        assert!(close(&m, &CMat::real(&[&[1.0, -1.0], &[0.0, 1.0]]), 1e-13));

        let zero = make_constant_connection(g, &[CMat::zeros(2, 2)]).unwrap();
        assert_eq!(monodromy(&zero, 0, 0).unwrap(), CMat::identity(2));

        let l2 = 2f64.ln();
        let g = BaseGrid::circle(256).unwrap();
        let a = make_constant_connection(g, &[CMat::diag_real(&[l2, -l2])]).unwrap();
        let m = monodromy(&a, 0, 5).unwrap();
        assert!(close(&m, &CMat::diag_real(&[0.5, 2.0]), 1e-4));
    }

    #[test]
    fn torus_constant_pairs() {
        let g = BaseGrid::torus(32, 32).unwrap();
        let c2 = CMat::real(&[&[0.0, 2.0], &[0.0, 0.0]]);
        let a = make_constant_connection(g, &[n2(), c2]).unwrap();
        assert_eq!(flatness_residual(&a), 0.0);

        let bad = [n2(), CMat::real(&[&[0.0, 0.0], &[1.0, 0.0]])];
        assert!(matches!(make_constant_connection(g, &bad), Err(Error::NotFlat { .. })));
        // Flatness residual of the same pair built without validation.
        let raw = ConnectionField::new(g, 2, bad.iter().map(|m| vec![m.clone(); g.len()]).collect()).unwrap();
        assert!((flatness_residual(&raw) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn decompose_examples() {
        let g = BaseGrid::circle(16).unwrap();
        let k = BackgroundMetric::identity(2);
        let herm = CMat::real(&[&[1.0, 2.0], &[2.0, -1.0]]);
        let d = decompose(&make_constant_connection(g, std::slice::from_ref(&herm)).unwrap(), &k);
        assert_eq!(d.u[0][3].max_abs(), 0.0);
        assert_eq!(d.psi[0][3], herm);

        let skew = CMat::real(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let d = decompose(&make_constant_connection(g, std::slice::from_ref(&skew)).unwrap(), &k);
        assert_eq!(d.u[0][0], skew);
        assert_eq!(d.psi[0][0].max_abs(), 0.0);

        let a = make_constant_connection(g, &[n2()]).unwrap();
        let d = decompose(&a, &k);
        assert_eq!(d.u[0][0], CMat::real(&[&[0.0, 0.5], &[-0.5, 0.0]]));
        assert_eq!(d.psi[0][0], CMat::real(&[&[0.0, 0.5], &[0.5, 0.0]]));
        assert_eq!(d.recompose(g).unwrap(), a);
    }

    #[test]
    fn gauge_apply_examples() {
        let g = BaseGrid::circle(32).unwrap();
        let c = CMat::real(&[&[0.3, 1.0], &[-0.2, 0.1]]);
        let a = make_constant_connection(g, std::slice::from_ref(&c)).unwrap();
        assert_eq!(gauge_apply(&GaugeField::identity(g, 2), &a).unwrap(), a);

        let s = CMat::real(&[&[2.0, 1.0], &[0.0, 1.0]]);
        let out = gauge_apply(&GaugeField::constant(g, &s).unwrap(), &a).unwrap();
        let want = &(&s * &c) * &s.inverse().unwrap();
        assert!(close(&out.coeff(0)[7], &want, 1e-14));

        let sing = CMat::real(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-15]]);
        assert!(matches!(GaugeField::constant(g, &sing), Err(Error::GaugeConditioning { .. })));
    }

    #[test]
    fn periodic_nilpotent_gauge_keeps_spectrum() {
        // σ(x) = exp(sin(2πx) N) commutes with C = 0.3 I + N.
        let g = BaseGrid::circle(256).unwrap();
        let c = CMat::real(&[&[0.3, 1.0], &[0.0, 0.3]]);
        let a = make_constant_connection(g, &[c]).unwrap();
        let sigma =
            GaugeField::from_fn(g, 2, |x| expm(&n2().scale((2.0 * std::f64::consts::PI * x[0]).sin())))
                .unwrap();
        let b = gauge_apply(&sigma, &a).unwrap();
        let mut e0 = eigenvalues(&monodromy(&a, 0, 0).unwrap()).unwrap();
        let mut e1 = eigenvalues(&monodromy(&b, 0, 0).unwrap()).unwrap();
        e0.sort_by(lex_cmp);
        e1.sort_by(lex_cmp);
        for (x, y) in e0.iter().zip(&e1) {
            assert!((x - y).norm() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn metric_examples() {
        let g = BaseGrid::circle(8).unwrap();
        let k = BackgroundMetric::new(CMat::diag_real(&[1.0, 3.0])).unwrap();
        let h = metric_from_gauge(&GaugeField::identity(g, 2), &k);
        assert_eq!(h[2], *k.matrix());

        let id = BackgroundMetric::identity(2);
        let s = GaugeField::constant(g, &CMat::diag_real(&[2.0, 1.0])).unwrap();
        assert_eq!(metric_from_gauge(&s, &id)[0], CMat::diag_real(&[4.0, 1.0]));
        let s = GaugeField::constant(g, &CMat::real(&[&[1.0, 1.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(metric_from_gauge(&s, &id)[0], CMat::real(&[&[1.0, 1.0], &[1.0, 2.0]]));
    }

    #[test]
    fn projection_examples() {
        let id = BackgroundMetric::identity(2);
        let e1 = CMat::real(&[&[1.0], &[0.0]]);
        assert!(close(&invariant_subspace_project(&e1, &id).unwrap(), &CMat::diag_real(&[1.0, 0.0]), 0.0));
        let r = 0.5f64.sqrt();
        let d = CMat::real(&[&[r], &[r]]);
        let p = invariant_subspace_project(&d, &id).unwrap();
        assert!(close(&p, &CMat::real(&[&[0.5, 0.5], &[0.5, 0.5]]), 1e-15));
        let k = BackgroundMetric::new(CMat::diag_real(&[1.0, 4.0])).unwrap();
        let p = invariant_subspace_project(&e1, &k).unwrap();
        assert!(close(&p, &CMat::diag_real(&[1.0, 0.0]), 1e-15));
        let dep = CMat::real(&[&[1.0, 2.0], &[0.0, 0.0]]);
        assert!(matches!(invariant_subspace_project(&dep, &id), Err(Error::RankDeficient)));
    }

    #[test]
    fn projection_wrt_matches_background_projection() {
        let k = BackgroundMetric::new(CMat::real(&[&[2.0, 0.5], &[0.5, 1.0]])).unwrap();
        let b = CMat::from_fn(2, 1, |i, _| c64(1.0 + i as f64, -0.5 * i as f64));
        let p1 = invariant_subspace_project(&b, &k).unwrap();
        let p2 = projection_wrt(&b, k.matrix()).unwrap();
        assert!(close(&p1, &p2, 1e-14));
    }

    #[test]
    fn connection_json_round_trip() {
        let g = BaseGrid::torus(8, 9).unwrap();
        let a = ConnectionField::new(
            g,
            2,
            (0..2)
                .map(|d| {
                    (0..g.len())
                        .map(|p| {
                            CMat::from_fn(2, 2, |i, j| {
                                c64((p * 7 + i + d) as f64 / 3.0, (j as f64 - 0.1).exp())
                            })
                        })
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let s = a.to_json_string().unwrap();
        assert!(s.contains("\"kind\":\"torus\""));
        let b = ConnectionField::from_json_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(ConnectionField::from_json_str(r#"{"rank":1,"base":{"kind":"circle","n":4},"coeffs":[]}"#)
            .is_err());
        assert!(ConnectionField::from_json_str(
            r#"{"rank":1,"base":{"kind":"circle","n":8,"m":1},"coeffs":[]}"#
        )
        .is_err());
    }
}
