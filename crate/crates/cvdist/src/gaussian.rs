//! Multimode Gaussian states and symplectic (linear-optics) transforms.
//!
//! Quadrature ordering is `X_1, P_1, ..., X_n, P_n` throughout the crate;
//! every mode/row index conversion derives from this one convention.
//! Vacuum quadrature variance is [`VACUUM_VAR`] = 1/4.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Quadrature variance of the vacuum state in this crate's units.
pub const VACUUM_VAR: f64 = 0.25;

/// Element-wise tolerance for symmetry and symplectic-form checks.
pub const EXACT_TOL: f64 = 1e-12;
/// Eigenvalue tolerance for positive-semidefiniteness and the
/// uncertainty-relation check.
pub const PSD_TOL: f64 = 1e-9;

/// The 2n x 2n symplectic form: block diagonal with blocks [[0,1],[-1,0]].
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// A linear phase-space transform guaranteed to preserve the symplectic form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    m: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn identity(n_modes: usize) -> Self {
        Self {
            m: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    /// Beam splitter mixing modes `i` and `j` with power transmittance `t`:
    /// `out_i = sqrt(t) in_i + sqrt(1-t) in_j`,
    /// `out_j = sqrt(1-t) in_i - sqrt(t) in_j`,
    /// acting identically on X and P; identity elsewhere.
    pub fn beam_splitter(n_modes: usize, i: usize, j: usize, t: f64) -> Result<Self> {
        if i == j || i >= n_modes || j >= n_modes {
            return Err(Error::InvalidConfig(format!(
                "beam splitter needs two distinct modes < {n_modes}, got ({i}, {j})"
            )));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beam splitter transmittance must lie in (0,1), got {t}"
            )));
        }
        let (ct, rt) = (t.sqrt(), (1.0 - t).sqrt());
        let mut m = DMatrix::identity(2 * n_modes, 2 * n_modes);
        for q in 0..2 {
            let (a, b) = (2 * i + q, 2 * j + q);
            m[(a, a)] = ct;
            m[(a, b)] = rt;
            m[(b, a)] = rt;
            m[(b, b)] = -ct;
        }
        Ok(Self { m })
    }

    /// Phase-space rotation of mode `i` by `theta`:
    /// `X' = X cos(theta) + P sin(theta)`, `P' = -X sin(theta) + P cos(theta)`.
    pub fn phase_rotation(n_modes: usize, i: usize, theta: f64) -> Result<Self> {
        if i >= n_modes {
            return Err(Error::InvalidConfig(format!(
                "mode index {i} out of range for {n_modes} modes"
            )));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidConfig("rotation angle must be finite".into()));
        }
        let mut m = DMatrix::identity(2 * n_modes, 2 * n_modes);
        write_rotation_block(&mut m, i, theta);
        Ok(Self { m })
    }

    /// Simultaneous phase rotation of every mode, one angle per mode.
    /// Equal to the composition of single-mode `phase_rotation`s.
    pub fn channel_rotation(thetas: &[f64]) -> Self {
        let n = thetas.len();
        let mut m = DMatrix::identity(2 * n, 2 * n);
        for (i, &th) in thetas.iter().enumerate() {
            write_rotation_block(&mut m, i, th);
        }
        Self { m }
    }

    /// Matrix product `self * rhs` (i.e. `rhs` acts first).
    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            m: &self.m * &rhs.m,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn n_modes(&self) -> usize {
        self.m.nrows() / 2
    }

    /// max |S Omega S^T - Omega|; zero (within [`EXACT_TOL`]) for a valid
    /// symplectic matrix.
    pub fn symplectic_defect(&self) -> f64 {
        let omega = symplectic_form(self.n_modes());
        let d = &self.m * &omega * self.m.transpose() - omega;
        d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }
}

fn write_rotation_block(m: &mut DMatrix<f64>, mode: usize, theta: f64) {
    let (c, s) = (theta.cos(), theta.sin());
    let (x, p) = (2 * mode, 2 * mode + 1);
    m[(x, x)] = c;
    m[(x, p)] = s;
    m[(p, x)] = -s;
    m[(p, p)] = c;
}

/// A zero- or nonzero-mean Gaussian state of `n` optical modes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// The n-mode vacuum: zero mean, covariance (1/4) * identity.
    pub fn vacuum(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidConfig("mode count must be >= 1".into()));
        }
        Ok(Self {
            mean: DVector::zeros(2 * n_modes),
            cov: DMatrix::identity(2 * n_modes, 2 * n_modes) * VACUUM_VAR,
        })
    }

    /// Single-mode squeezed state specified in decibels:
    /// `Var(X) = 0.25 * 10^(-squeezing_db/10)`,
    /// `Var(P) = 0.25 * 10^(+antisqueezing_db/10)`, `Cov(X,P) = 0`.
    ///
    /// The state may be mixed (`antisqueezing_db > squeezing_db`); it must not
    /// violate `Var(X) Var(P) >= 1/16`, i.e. `antisqueezing_db >= squeezing_db`.
    pub fn squeezed(squeezing_db: f64, antisqueezing_db: f64) -> Result<Self> {
        if !(squeezing_db >= 0.0 && antisqueezing_db >= 0.0) {
            return Err(Error::Physicality(format!(
                "squeezing levels must be >= 0 dB, got ({squeezing_db}, {antisqueezing_db})"
            )));
        }
        if antisqueezing_db < squeezing_db {
            return Err(Error::Physicality(format!(
                "antisqueezing {antisqueezing_db} dB below squeezing {squeezing_db} dB \
                 violates Var(X)*Var(P) >= 1/16"
            )));
        }
        let vx = VACUUM_VAR * 10f64.powf(-squeezing_db / 10.0);
        let vp = VACUUM_VAR * 10f64.powf(antisqueezing_db / 10.0);
        let mut cov = DMatrix::zeros(2, 2);
        cov[(0, 0)] = vx;
        cov[(1, 1)] = vp;
        Ok(Self {
            mean: DVector::zeros(2),
            cov,
        })
    }

    /// Build a state from an explicit mean and covariance.
    ///
    /// Validates symmetry (within [`EXACT_TOL`]) and positive semidefiniteness
    /// (within [`PSD_TOL`]). The quantum uncertainty relation is *not* imposed
    /// here — classical/degenerate covariances are legal inputs for utility
    /// code — use [`GaussianState::check_physical`] to assert it.
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || d % 2 != 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidConfig(format!(
                "mean length {d} and covariance {}x{} must agree and be even",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose())
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        if asym > EXACT_TOL {
            return Err(Error::Physicality(format!(
                "covariance asymmetric: max |gamma - gamma^T| = {asym:.3e}"
            )));
        }
        let min_eig = nalgebra::SymmetricEigen::new(cov.clone())
            .eigenvalues
            .min();
        if min_eig < -PSD_TOL {
            return Err(Error::Physicality(format!(
                "covariance not positive semidefinite: min eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { mean, cov })
    }

    pub(crate) fn from_parts_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Tensor product: block-diagonal covariance, `self`'s modes first.
    pub fn tensor(&self, other: &Self) -> Self {
        let (da, db) = (self.mean.len(), other.mean.len());
        let mut mean = DVector::zeros(da + db);
        mean.rows_mut(0, da).copy_from(&self.mean);
        mean.rows_mut(da, db).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(da + db, da + db);
        cov.view_mut((0, 0), (da, da)).copy_from(&self.cov);
        cov.view_mut((da, da), (db, db)).copy_from(&other.cov);
        Self { mean, cov }
    }

    /// Apply a symplectic transform: `cov -> S cov S^T`, `mean -> S mean`.
    /// The result is re-symmetrized to suppress floating-point drift.
    pub fn apply(&self, s: &SymplecticMatrix) -> Self {
        let m = s.matrix();
        let mut cov = m * &self.cov * m.transpose();
        symmetrize(&mut cov);
        Self {
            mean: m * &self.mean,
            cov,
        }
    }

    /// Pure-loss channel of efficiency `eta` on mode `i`: quadratures scaled
    /// by sqrt(eta), vacuum noise `(1-eta)/4` mixed onto the diagonal.
    /// Vacuum is a fixed point; `eta = 1` is the identity.
    pub fn loss_channel(&self, i: usize, eta: f64) -> Result<Self> {
        if i >= self.n_modes() {
            return Err(Error::InvalidConfig(format!(
                "mode index {i} out of range for {} modes",
                self.n_modes()
            )));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Physicality(format!(
                "loss efficiency must lie in (0,1], got {eta}"
            )));
        }
        let rt = eta.sqrt();
        let (x, p) = (2 * i, 2 * i + 1);
        let mut cov = self.cov.clone();
        for r in [x, p] {
            for k in 0..cov.nrows() {
                cov[(r, k)] *= rt;
                cov[(k, r)] *= rt;
            }
            // the diagonal entry was scaled twice (once per pass), as intended:
            // sqrt(eta) on the row and sqrt(eta) on the column give eta.
            cov[(r, r)] += (1.0 - eta) * VACUUM_VAR;
        }
        let mut mean = self.mean.clone();
        mean[x] *= rt;
        mean[p] *= rt;
        Ok(Self { mean, cov })
    }

    /// Condition on an ideal homodyne readout of
    /// `X_i cos(angle) + P_i sin(angle) = outcome`; the measured mode is
    /// traced out of the returned state.
    ///
    /// Standard Gaussian conditioning: with `u` the measured direction,
    /// `c = cov u`, `v = u^T cov u`, the remaining modes get
    /// `mean += c (outcome - u.mean)/v` and `cov -= c c^T / v`.
    pub fn condition_on_measurement(
        &self,
        i: usize,
        angle: f64,
        outcome: f64,
    ) -> Result<Self> {
        let n = self.n_modes();
        if i >= n {
            return Err(Error::InvalidConfig(format!(
                "mode index {i} out of range for {n} modes"
            )));
        }
        let d = 2 * n;
        let mut u = DVector::zeros(d);
        u[2 * i] = angle.cos();
        u[2 * i + 1] = angle.sin();
        let c = &self.cov * &u;
        let v = u.dot(&c);
        if v <= 0.0 {
            return Err(Error::Numerical(format!(
                "measured quadrature variance {v:.3e} is singular"
            )));
        }
        let shift = (outcome - u.dot(&self.mean)) / v;
        let mean_full = &self.mean + &c * shift;
        let mut cov_full = &self.cov - (&c * c.transpose()) / v;
        symmetrize(&mut cov_full);
        // drop the measured mode
        let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        Ok(Self::from_parts_unchecked(mean_full, cov_full)
            .restrict(&keep))
    }

    /// Marginal state of a mode subset (strictly increasing indices).
    pub fn marginal(&self, modes: &[usize]) -> Result<Self> {
        let n = self.n_modes();
        if modes.is_empty() {
            return Err(Error::InvalidConfig("mode subset must be nonempty".into()));
        }
        for w in modes.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig(
                    "mode subset must be strictly increasing".into(),
                ));
            }
        }
        if *modes.last().unwrap() >= n {
            return Err(Error::InvalidConfig(format!(
                "mode index {} out of range for {n} modes",
                modes.last().unwrap()
            )));
        }
        Ok(self.restrict(modes))
    }

    fn restrict(&self, modes: &[usize]) -> Self {
        let rows: Vec<usize> = modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
        let d = rows.len();
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for (a, &ra) in rows.iter().enumerate() {
            mean[a] = self.mean[ra];
            for (b, &rb) in rows.iter().enumerate() {
                cov[(a, b)] = self.cov[(ra, rb)];
            }
        }
        Self { mean, cov }
    }

    /// Draw one joint quadrature sample from N(mean, cov).
    ///
    /// Uses a semidefinite-tolerant Cholesky factorization, so degenerate
    /// (rank-deficient) covariances are legal and a zero covariance returns
    /// the mean exactly.
    pub fn sample_quadratures<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let l = semidefinite_cholesky(&self.cov)?;
        let d = self.mean.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.mean + l * z)
    }

    /// Smallest eigenvalue of `cov/v0 + i Omega`; nonnegative (within
    /// [`PSD_TOL`]) exactly when the state satisfies the uncertainty relation.
    pub fn uncertainty_min_eig(&self) -> f64 {
        // Eigenvalues of the Hermitian matrix A + iB (A = cov/v0 symmetric,
        // B = Omega antisymmetric) equal those of the real symmetric
        // embedding [[A, -B], [B, A]], each doubled.
        let d = self.cov.nrows();
        let a = &self.cov / VACUUM_VAR;
        let b = symplectic_form(self.n_modes());
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&a);
        m.view_mut((d, d), (d, d)).copy_from(&a);
        m.view_mut((0, d), (d, d)).copy_from(&(-&b));
        m.view_mut((d, 0), (d, d)).copy_from(&b);
        nalgebra::SymmetricEigen::new(m).eigenvalues.min()
    }

    /// Assert symmetry, positive semidefiniteness and the uncertainty
    /// relation (each within the crate tolerances).
    pub fn check_physical(&self) -> Result<()> {
        let asym = (&self.cov - self.cov.transpose())
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        if asym > EXACT_TOL {
            return Err(Error::Physicality(format!(
                "covariance asymmetric: {asym:.3e}"
            )));
        }
        let min_cov_eig = nalgebra::SymmetricEigen::new(self.cov.clone())
            .eigenvalues
            .min();
        if min_cov_eig < -PSD_TOL {
            return Err(Error::Physicality(format!(
                "covariance not PSD: min eigenvalue {min_cov_eig:.3e}"
            )));
        }
        let u = self.uncertainty_min_eig();
        if u < -PSD_TOL {
            return Err(Error::Physicality(format!(
                "uncertainty relation violated: min eig of cov/v0 + i Omega = {u:.3e}"
            )));
        }
        Ok(())
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Lower-triangular L with L L^T ~= cov for a positive *semi*definite matrix.
///
/// Pivots within a scale-relative tolerance of zero are treated as exactly
/// zero (their column is zeroed), so rank-deficient covariances factor
/// cleanly; a pivot below `-tol` means the input was not PSD and is an error.
pub(crate) fn semidefinite_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let scale = cov.diagonal().amax().max(1.0);
    let tol = PSD_TOL * scale;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(Error::Numerical(format!(
                "covariance is not positive semidefinite (pivot {d:.3e} at {j})"
            )));
        }
        if d <= tol {
            continue; // degenerate direction: leave the column zero
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut v = cov[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / dj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vacuum_is_quarter_identity() {
        let v = GaussianState::vacuum(2).unwrap();
        assert_eq!(v.n_modes(), 2);
        assert_eq!(v.mean().amax(), 0.0);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.25 } else { 0.0 };
                assert_eq!(v.cov()[(i, j)], want);
            }
        }
        assert!(GaussianState::vacuum(0).is_err());
        v.check_physical().unwrap();
    }

    #[test]
    fn squeezed_db_values() {
        let s = GaussianState::squeezed(4.5, 8.0).unwrap();
        assert_abs_diff_eq!(s.cov()[(0, 0)], 0.0887033473, epsilon = 1e-9);
        assert_abs_diff_eq!(s.cov()[(1, 1)], 1.5773933612, epsilon = 1e-9);
        // mixed state: Var(X) Var(P) > 1/16
        let prod = s.cov()[(0, 0)] * s.cov()[(1, 1)];
        assert_abs_diff_eq!(prod, 0.1399, epsilon = 1e-4);
        assert!(prod > 1.0 / 16.0);
        s.check_physical().unwrap();

        // equal dB -> pure within 1e-4
        let p = GaussianState::squeezed(3.0, 3.0).unwrap();
        assert_abs_diff_eq!(p.cov()[(0, 0)], 0.1252968, epsilon = 1e-6);
        assert_abs_diff_eq!(p.cov()[(1, 1)], 0.4988156, epsilon = 1e-6);
        assert_abs_diff_eq!(p.cov()[(0, 0)] * p.cov()[(1, 1)], 1.0 / 16.0, epsilon = 1e-4);

        // 0 dB is vacuum
        let v = GaussianState::squeezed(0.0, 0.0).unwrap();
        assert_eq!(v.cov()[(0, 0)], 0.25);
        assert_eq!(v.cov()[(1, 1)], 0.25);

        assert!(GaussianState::squeezed(4.0, 3.0).is_err());
        assert!(GaussianState::squeezed(-1.0, 3.0).is_err());
    }

    #[test]
    fn tensor_blocks_and_associativity() {
        let a = GaussianState::squeezed(4.5, 8.0).unwrap();
        let v = GaussianState::vacuum(1).unwrap();
        let t = a.tensor(&v);
        assert_eq!(t.n_modes(), 2);
        assert_abs_diff_eq!(t.cov()[(0, 0)], 0.0887033473, epsilon = 1e-9);
        assert_eq!(t.cov()[(2, 2)], 0.25);
        assert_eq!(t.cov()[(0, 2)], 0.0);

        let vv = v.tensor(&v);
        assert_eq!(vv, GaussianState::vacuum(2).unwrap());

        let left = a.tensor(&v).tensor(&a);
        let right = a.tensor(&v.tensor(&a));
        assert_eq!(left, right);
    }

    #[test]
    fn beam_splitter_vclass() {
        let s = GaussianState::squeezed(4.5, 8.0)
            .unwrap()
            .tensor(&GaussianState::vacuum(1).unwrap());
        let bs = SymplecticMatrix::beam_splitter(2, 0, 1, 0.5).unwrap();
        assert!(bs.symplectic_defect() < EXACT_TOL);
        let v = s.apply(&bs);
        for m in 0..2 {
            assert_abs_diff_eq!(v.cov()[(2 * m, 2 * m)], 0.1693516737, epsilon = 1e-9);
            assert_abs_diff_eq!(v.cov()[(2 * m + 1, 2 * m + 1)], 0.9136966806, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(v.cov()[(0, 2)], -0.0806483263, epsilon = 1e-9);
        assert_abs_diff_eq!(v.cov()[(1, 3)], 0.6636966806, epsilon = 1e-9);
        v.check_physical().unwrap();

        // balanced splitter leaves two vacua invariant
        let vac = GaussianState::vacuum(2).unwrap();
        let out = vac.apply(&bs);
        assert_abs_diff_eq!(
            (out.cov() - vac.cov()).amax(),
            0.0,
            epsilon = EXACT_TOL
        );

        assert!(SymplecticMatrix::beam_splitter(2, 0, 0, 0.5).is_err());
        assert!(SymplecticMatrix::beam_splitter(2, 0, 1, 0.0).is_err());
        assert!(SymplecticMatrix::beam_splitter(2, 0, 1, 1.0).is_err());
    }

    #[test]
    fn phase_rotation_swaps_and_wraps() {
        let s = GaussianState::squeezed(4.5, 8.0).unwrap();
        let r = SymplecticMatrix::phase_rotation(1, 0, std::f64::consts::FRAC_PI_2).unwrap();
        let sw = s.apply(&r);
        assert_abs_diff_eq!(sw.cov()[(0, 0)], 1.5773933612, epsilon = 1e-9);
        assert_abs_diff_eq!(sw.cov()[(1, 1)], 0.0887033473, epsilon = 1e-9);

        let id = SymplecticMatrix::phase_rotation(1, 0, 0.0).unwrap();
        assert_eq!(id.matrix(), &DMatrix::identity(2, 2));
        let full = SymplecticMatrix::phase_rotation(1, 0, 2.0 * std::f64::consts::PI).unwrap();
        assert!((full.matrix() - DMatrix::identity(2, 2)).amax() < EXACT_TOL);
    }

    #[test]
    fn rotation_composes_additively() {
        let a = SymplecticMatrix::phase_rotation(1, 0, 0.3).unwrap();
        let b = SymplecticMatrix::phase_rotation(1, 0, 1.1).unwrap();
        let sum = SymplecticMatrix::phase_rotation(1, 0, 1.4).unwrap();
        assert!((a.compose(&b).matrix() - sum.matrix()).amax() < EXACT_TOL);
    }

    #[test]
    fn channel_rotation_matches_composition() {
        let thetas = [0.3, -0.7, 1.2, 0.05];
        let joint = SymplecticMatrix::channel_rotation(&thetas);
        let mut composed = SymplecticMatrix::identity(4);
        for (i, &th) in thetas.iter().enumerate() {
            composed = SymplecticMatrix::phase_rotation(4, i, th)
                .unwrap()
                .compose(&composed);
        }
        assert!((joint.matrix() - composed.matrix()).amax() < EXACT_TOL);
        assert!(joint.symplectic_defect() < EXACT_TOL);
    }

    #[test]
    fn loss_channel_examples() {
        let s = GaussianState::squeezed(4.5, 8.0).unwrap();
        let same = s.loss_channel(0, 1.0).unwrap();
        assert!((same.cov() - s.cov()).amax() < EXACT_TOL);

        let v = GaussianState::vacuum(1).unwrap();
        let fixed = v.loss_channel(0, 0.37).unwrap();
        assert!((fixed.cov() - v.cov()).amax() < EXACT_TOL);

        let lossy = s.loss_channel(0, 0.86).unwrap();
        let sq_var = 0.25 * 10f64.powf(-0.45);
        assert_abs_diff_eq!(lossy.cov()[(0, 0)], 0.86 * sq_var + 0.14 * 0.25, epsilon = 1e-12);
        lossy.check_physical().unwrap();

        assert!(s.loss_channel(0, 0.0).is_err());
        assert!(s.loss_channel(0, 1.5).is_err());
        assert!(s.loss_channel(3, 0.9).is_err());
    }

    #[test]
    fn conditioning_schur_complement() {
        // v-class state, measure X of mode B at an arbitrary outcome
        let s = GaussianState::squeezed(4.5, 8.0)
            .unwrap()
            .tensor(&GaussianState::vacuum(1).unwrap());
        let bs = SymplecticMatrix::beam_splitter(2, 0, 1, 0.5).unwrap();
        let v = s.apply(&bs);
        let cond = v.condition_on_measurement(1, 0.0, 0.2).unwrap();
        assert_eq!(cond.n_modes(), 1);
        let expect = 0.1693516737 - (-0.0806483263f64).powi(2) / 0.1693516737;
        assert_abs_diff_eq!(cond.cov()[(0, 0)], expect, epsilon = 1e-9);
        assert_abs_diff_eq!(cond.cov()[(0, 0)], 0.13094, epsilon = 1e-5);

        // covariance is outcome-independent
        let cond2 = v.condition_on_measurement(1, 0.0, -3.4).unwrap();
        assert!((cond.cov() - cond2.cov()).amax() < EXACT_TOL);
        assert_ne!(cond.mean()[0], cond2.mean()[0]);

        // conditioning one factor of a product state leaves the other alone
        let prod = GaussianState::squeezed(3.0, 3.0)
            .unwrap()
            .tensor(&GaussianState::vacuum(1).unwrap());
        let c = prod.condition_on_measurement(1, 0.7, 0.5).unwrap();
        assert!((c.cov() - GaussianState::squeezed(3.0, 3.0).unwrap().cov()).amax() < EXACT_TOL);
    }

    #[test]
    fn conditioning_rejects_singular_variance() {
        let mut cov = DMatrix::zeros(4, 4);
        cov[(0, 0)] = 1.0;
        cov[(1, 1)] = 1.0;
        // mode 1 has exactly zero variance
        let s = GaussianState::from_parts(DVector::zeros(4), cov).unwrap();
        assert!(s.condition_on_measurement(1, 0.0, 0.0).is_err());
    }

    #[test]
    fn marginal_restriction() {
        let v2 = GaussianState::vacuum(2).unwrap();
        assert_eq!(v2.marginal(&[0, 1]).unwrap(), v2);
        assert_eq!(v2.marginal(&[1]).unwrap(), GaussianState::vacuum(1).unwrap());

        let s = GaussianState::squeezed(4.5, 8.0)
            .unwrap()
            .tensor(&GaussianState::vacuum(1).unwrap());
        let bs = SymplecticMatrix::beam_splitter(2, 0, 1, 0.5).unwrap();
        let a = s.apply(&bs).marginal(&[0]).unwrap();
        assert_abs_diff_eq!(a.cov()[(0, 0)], 0.1693516737, epsilon = 1e-9);
        assert_abs_diff_eq!(a.cov()[(1, 1)], 0.9136966806, epsilon = 1e-9);

        assert!(v2.marginal(&[]).is_err());
        assert!(v2.marginal(&[1, 0]).is_err());
        assert!(v2.marginal(&[0, 2]).is_err());
    }

    #[test]
    fn sampling_statistics_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = GaussianState::vacuum(1).unwrap();
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = v.sample_quadratures(&mut rng).unwrap()[0];
            sum += x;
            sum2 += x * x;
        }
        let var = (sum2 - sum * sum / n as f64) / (n as f64 - 1.0);
        let se = 0.25 * (2.0 / n as f64).sqrt();
        assert!((var - 0.25).abs() < 4.0 * se, "var {var} vs 0.25 +- {se}");

        // zero covariance returns the mean exactly
        let mean = DVector::from_vec(vec![1.5, -2.0]);
        let degen = GaussianState::from_parts(mean.clone(), DMatrix::zeros(2, 2)).unwrap();
        let draw = degen.sample_quadratures(&mut rng).unwrap();
        assert_eq!(draw, mean);

        // non-PSD input fails to factor
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 0)] = -1.0;
        bad[(1, 1)] = 1.0;
        assert!(semidefinite_cholesky(&bad).is_err());
    }

    #[test]
    fn sample_covariance_matches_vclass() {
        let s = GaussianState::squeezed(4.5, 8.0)
            .unwrap()
            .tensor(&GaussianState::vacuum(1).unwrap());
        let bs = SymplecticMatrix::beam_splitter(2, 0, 1, 0.5).unwrap();
        let v = s.apply(&bs);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000usize;
        let mut acc = DMatrix::zeros(4, 4);
        for _ in 0..n {
            let x = v.sample_quadratures(&mut rng).unwrap();
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        for i in 0..4 {
            for j in 0..4 {
                let want = v.cov()[(i, j)];
                // SE of a second-moment estimate, Gaussian samples
                let se = ((v.cov()[(i, i)] * v.cov()[(j, j)] + want * want) / n as f64).sqrt();
                assert!(
                    (acc[(i, j)] - want).abs() < 4.0 * se,
                    "cov[{i},{j}] = {} vs {want} +- {se}",
                    acc[(i, j)]
                );
            }
        }
    }

    #[test]
    fn uncertainty_check_flags_violations() {
        // half-vacuum variance in both quadratures violates the relation
        let bad = GaussianState::from_parts(
            DVector::zeros(2),
            DMatrix::identity(2, 2) * (VACUUM_VAR / 2.0),
        )
        .unwrap();
        assert!(bad.check_physical().is_err());
        assert!(bad.uncertainty_min_eig() < -0.1);

        let good = GaussianState::squeezed(6.0, 6.0).unwrap();
        assert!(good.uncertainty_min_eig() > -PSD_TOL);
    }

    #[test]
    fn from_parts_validation() {
        let mut asym = DMatrix::zeros(2, 2);
        asym[(0, 1)] = 1.0;
        assert!(GaussianState::from_parts(DVector::zeros(2), asym).is_err());

        let mut neg = DMatrix::identity(2, 2);
        neg[(0, 0)] = -0.5;
        assert!(GaussianState::from_parts(DVector::zeros(2), neg).is_err());

        assert!(GaussianState::from_parts(DVector::zeros(3), DMatrix::zeros(3, 3)).is_err());
    }
}
