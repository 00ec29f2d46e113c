//! Multi-ray mmWave channel engine.
//!
//! Steering vectors for uniform linear (AP, UE) and uniform planar (RIS)
//! arrays, per-ray path gains, the AP→UE, AP→RIS and RIS→UE link matrices,
//! their cascaded sum through diagonal RIS phase matrices, and the log-det
//! achievable bitrate.
//!
//! Everything here is a pure function of its arguments.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Entries with magnitude below this are flushed to exact zero before the
/// log-det evaluation.
pub const FLUSH_THRESHOLD: f64 = 1e-300;

/// Convert a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// The discrete set of AP beam angles.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    angles: Vec<f64>,
}

impl BeamCodebook {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.len() < 2 {
            return Err(Error::InvalidCodebook(format!(
                "beam codebook needs at least 2 angles, got {}",
                angles.len()
            )));
        }
        if angles.iter().any(|a| !a.is_finite() || *a < -PI || *a > PI) {
            return Err(Error::InvalidCodebook(
                "beam angles must lie within [-pi, pi]".into(),
            ));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidCodebook(
                "beam angles must be strictly increasing".into(),
            ));
        }
        Ok(Self { angles })
    }

    /// `A` angles `-pi + 2 a pi / (A - 1)`, `a = 0..A`.
    pub fn uniform(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidCodebook(format!(
                "beam codebook needs at least 2 angles, got {count}"
            )));
        }
        let step = 2.0 * PI / (count - 1) as f64;
        let angles = (0..count)
            .map(|a| (-PI + a as f64 * step).clamp(-PI, PI))
            .collect();
        Self::new(angles)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angle(&self, index: usize) -> Option<f64> {
        self.angles.get(index).copied()
    }
}

/// Antenna counts at the AP and UE and the meta-surface layout of every RIS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayGeometry {
    pub n_ap: usize,
    pub n_ue: usize,
    pub ris_h: usize,
    pub ris_v: usize,
}

impl ArrayGeometry {
    pub fn new(n_ap: usize, n_ue: usize, ris_h: usize, ris_v: usize) -> Result<Self> {
        if n_ap == 0 || n_ue == 0 || ris_h == 0 || ris_v == 0 {
            return Err(Error::InvalidGeometry(format!(
                "all counts must be >= 1 (n_ap={n_ap}, n_ue={n_ue}, ris={ris_h}x{ris_v})"
            )));
        }
        Ok(Self {
            n_ap,
            n_ue,
            ris_h,
            ris_v,
        })
    }

    /// Meta-surfaces per RIS.
    pub fn n_ris(&self) -> usize {
        self.ris_h * self.ris_v
    }
}

/// Quantized RIS reflection profiles, one diagonal phase matrix per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCodebook {
    entries: Vec<Vec<f64>>,
    directions: Vec<f64>,
    step: f64,
    range: (f64, f64),
}

impl PhaseCodebook {
    /// Wraps explicit phase entries after checking them against the grid.
    pub fn from_entries(entries: Vec<Vec<f64>>, step: f64, range: (f64, f64)) -> Result<Self> {
        validate_quantization(step, range)?;
        if entries.len() < 2 {
            return Err(Error::InvalidCodebook(format!(
                "phase codebook needs at least 2 entries, got {}",
                entries.len()
            )));
        }
        let width = entries[0].len();
        if width == 0 || entries.iter().any(|e| e.len() != width) {
            return Err(Error::InvalidCodebook(
                "all phase entries need the same nonzero length".into(),
            ));
        }
        for phase in entries.iter().flatten() {
            let k = (phase - range.0) / step;
            if *phase < range.0 - 1e-12
                || *phase > range.1 + 1e-12
                || (k - k.round()).abs() > 1e-9
            {
                return Err(Error::InvalidCodebook(format!(
                    "phase {phase} is not on the quantization grid"
                )));
            }
        }
        Ok(Self {
            entries,
            directions: Vec::new(),
            step,
            range,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Steering azimuths the entries were built for (empty for explicit entries).
    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn quantization_step(&self) -> f64 {
        self.step
    }

    pub fn phase_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn phases(&self, index: usize) -> Option<&[f64]> {
        self.entries.get(index).map(Vec::as_slice)
    }

    /// Unit-modulus diagonal `exp(j psi_i)` of entry `index`.
    pub fn diagonal(&self, index: usize) -> Option<Vec<Complex64>> {
        self.entries
            .get(index)
            .map(|e| e.iter().map(|&p| Complex64::from_polar(1.0, p)).collect())
    }

    /// Full `N_g x N_g` diagonal matrix form of entry `index`.
    pub fn matrix(&self, index: usize) -> Option<CMatrix> {
        self.diagonal(index)
            .map(|d| CMatrix::from_diagonal(&CVector::from_vec(d)))
    }
}

fn validate_quantization(step: f64, range: (f64, f64)) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidCodebook(format!(
            "quantization step must be positive, got {step}"
        )));
    }
    if !(range.0 < range.1) {
        return Err(Error::InvalidCodebook(format!(
            "phase range [{}, {}] is empty",
            range.0, range.1
        )));
    }
    Ok(())
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Snap a phase onto the grid `lo + k * step` inside `[lo, hi]`.
///
/// The phase is wrapped to `[-pi, pi)` and clamped to the range first.
pub fn quantize_phase(phase: f64, step: f64, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    let top = ((hi - lo) / step + 1e-9).floor();
    let clamped = wrap_angle(phase).clamp(lo, hi);
    // Half-way ties round up; the offset absorbs float noise around them.
    let k = ((clamped - lo) / step + 0.5 + 1e-9).floor().clamp(0.0, top);
    lo + k * step
}

/// Build one reflection profile per steering azimuth.
///
/// Entry `b` applies the conjugate of the planar-array phase progression
/// toward azimuth `directions[b]` in the horizontal plane (elevation pi/2),
/// so a wave leaving the surface toward that azimuth adds coherently.
pub fn build_phase_codebook(
    geometry: &ArrayGeometry,
    step: f64,
    range: (f64, f64),
    directions: &[f64],
) -> Result<PhaseCodebook> {
    validate_quantization(step, range)?;
    if directions.is_empty() {
        return Err(Error::EmptyDirections);
    }
    let elevation = PI / 2.0;
    let entries = directions
        .iter()
        .map(|&azimuth| {
            upa_phases(azimuth, elevation, geometry.ris_h, geometry.ris_v)
                .into_iter()
                .map(|p| quantize_phase(-p, step, range))
                .collect()
        })
        .collect();
    Ok(PhaseCodebook {
        entries,
        directions: directions.to_vec(),
        step,
        range,
    })
}

/// Default steering grid: `count` azimuths spanning `[0, pi]` inclusive.
pub fn half_plane_directions(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![PI / 2.0],
        _ => (0..count)
            .map(|b| PI * b as f64 / (count - 1) as f64)
            .collect(),
    }
}

fn centered(k: usize, n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0 - k as f64
}

/// Uniform linear array response: element `k` is
/// `exp(j ((n-1)/2 - k) pi cos(angle))`.
pub fn steering_vector_ula(angle: f64, n: usize) -> CVector {
    let c = PI * angle.cos();
    CVector::from_iterator(n, (0..n).map(|k| Complex64::from_polar(1.0, centered(k, n) * c)))
}

/// Phase (radians) of every element of the planar steering vector, in
/// `b_el ⊗ b_az` order (vertical index major).
fn upa_phases(azimuth: f64, elevation: f64, n_h: usize, n_v: usize) -> Vec<f64> {
    let el = PI * elevation.cos();
    let az = PI * azimuth.cos() * elevation.sin();
    let mut phases = Vec::with_capacity(n_h * n_v);
    for kv in 0..n_v {
        for kh in 0..n_h {
            phases.push(centered(kv, n_v) * el + centered(kh, n_h) * az);
        }
    }
    phases
}

/// Uniform planar array response `b_el(elevation) ⊗ b_az(azimuth, elevation)`.
///
/// The elevation factor follows `cos(elevation)` across the `n_v` rows; the
/// azimuth factor follows `cos(azimuth) sin(elevation)` across the `n_h`
/// columns.
pub fn steering_vector_upa(azimuth: f64, elevation: f64, n_h: usize, n_v: usize) -> CVector {
    let b_el = steering_vector_ula_law(PI * elevation.cos(), n_v);
    let b_az = steering_vector_ula_law(PI * azimuth.cos() * elevation.sin(), n_h);
    b_el.kronecker(&b_az)
}

fn steering_vector_ula_law(phase_per_element: f64, n: usize) -> CVector {
    CVector::from_iterator(
        n,
        (0..n).map(|k| Complex64::from_polar(1.0, centered(k, n) * phase_per_element)),
    )
}

/// Large-scale gain parameters of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGainProfile {
    /// meters
    pub distance: f64,
    /// Hz
    pub carrier_freq: f64,
    pub exponent_los: f64,
    pub exponent_nlos: f64,
}

/// `rho = (c / 2 pi f_c)^2 d^-nu`, with the NLoS exponent for blocked rays.
pub fn path_gain(profile: &PathGainProfile, blocked: bool) -> Result<f64> {
    if !(profile.distance > 0.0) {
        return Err(Error::NonPositiveDistance(profile.distance));
    }
    let nu = if blocked {
        profile.exponent_nlos
    } else {
        profile.exponent_los
    };
    let scale = SPEED_OF_LIGHT / (2.0 * PI * profile.carrier_freq);
    Ok(scale * scale * profile.distance.powf(-nu))
}

/// One propagation ray of a link.
///
/// Angles are relative to the array axis at each end. The elevation fields
/// only matter at planar (RIS) ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub blocked: bool,
    pub gain: Complex64,
    pub aod: f64,
    pub aod_elevation: f64,
    pub aoa: f64,
    pub aoa_elevation: f64,
}

impl Ray {
    /// Ray in the horizontal plane (both elevations pi/2).
    pub fn planar(blocked: bool, gain: Complex64, aod: f64, aoa: f64) -> Self {
        Self {
            blocked,
            gain,
            aod,
            aod_elevation: PI / 2.0,
            aoa,
            aoa_elevation: PI / 2.0,
        }
    }
}

/// Per-ray `rho` for a link whose rays share one distance profile.
pub fn ray_path_gains(profile: &PathGainProfile, rays: &[Ray]) -> Result<Vec<f64>> {
    rays.iter().map(|r| path_gain(profile, r.blocked)).collect()
}

/// `[left_1..left_L] diag(c) [right_1..right_L]^H`.
fn ray_sum(left: &[CVector], coeffs: &[Complex64], right: &[CVector]) -> CMatrix {
    let rows = left[0].len();
    let cols = right[0].len();
    let l = coeffs.len();
    let left_m = CMatrix::from_fn(rows, l, |i, j| left[j][i]);
    let right_m = CMatrix::from_fn(cols, l, |i, j| right[j][i]);
    let diag = CMatrix::from_diagonal(&CVector::from_column_slice(coeffs));
    left_m * diag * right_m.adjoint()
}

fn ray_coefficients(rays: &[Ray], rho: &[f64]) -> Result<Vec<Complex64>> {
    if rays.len() != rho.len() {
        return Err(Error::RayGainMismatch {
            rays: rays.len(),
            gains: rho.len(),
        });
    }
    if rays.is_empty() {
        return Err(Error::ShapeMismatch("a link needs at least one ray".into()));
    }
    if rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::ShapeMismatch("path gains must be finite and >= 0".into()));
    }
    Ok(rays
        .iter()
        .zip(rho)
        .map(|(ray, &r)| ray.gain * r.sqrt())
        .collect())
}

/// RIS→UE matrix (`N_g x N_u`): planar departure vectors at the RIS, linear
/// arrival vectors at the UE.
pub fn channel_ris_to_ue(rays: &[Ray], rho: &[f64], geometry: &ArrayGeometry) -> Result<CMatrix> {
    let coeffs = ray_coefficients(rays, rho)?;
    let left: Vec<_> = rays
        .iter()
        .map(|r| steering_vector_upa(r.aod, r.aod_elevation, geometry.ris_h, geometry.ris_v))
        .collect();
    let right: Vec<_> = rays
        .iter()
        .map(|r| steering_vector_ula(r.aoa, geometry.n_ue))
        .collect();
    Ok(ray_sum(&left, &coeffs, &right))
}

/// AP→RIS matrix (`N_a x N_g`): linear departure vectors at the AP, planar
/// arrival vectors at the RIS.
pub fn channel_ap_to_ris(rays: &[Ray], rho: &[f64], geometry: &ArrayGeometry) -> Result<CMatrix> {
    let coeffs = ray_coefficients(rays, rho)?;
    let left: Vec<_> = rays
        .iter()
        .map(|r| steering_vector_ula(r.aod, geometry.n_ap))
        .collect();
    let right: Vec<_> = rays
        .iter()
        .map(|r| steering_vector_upa(r.aoa, r.aoa_elevation, geometry.ris_h, geometry.ris_v))
        .collect();
    Ok(ray_sum(&left, &coeffs, &right))
}

/// Direct AP→UE matrix (`N_a x N_u`).
pub fn channel_ap_to_ue(rays: &[Ray], rho: &[f64], geometry: &ArrayGeometry) -> Result<CMatrix> {
    let coeffs = ray_coefficients(rays, rho)?;
    let left: Vec<_> = rays
        .iter()
        .map(|r| steering_vector_ula(r.aod, geometry.n_ap))
        .collect();
    let right: Vec<_> = rays
        .iter()
        .map(|r| steering_vector_ula(r.aoa, geometry.n_ue))
        .collect();
    Ok(ray_sum(&left, &coeffs, &right))
}

/// One reflected path: AP→RIS matrix, the RIS phase diagonal, RIS→UE matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RisPath {
    pub ap_ris: CMatrix,
    pub phases: Vec<Complex64>,
    pub ris_ue: CMatrix,
}

/// End-to-end channel and the components it was assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadedChannel {
    pub h: CMatrix,
    pub direct: CMatrix,
    pub reflected: Vec<CMatrix>,
}

/// `H = H_direct + sum_g H_ap_ris,g Psi_g H_ris_ue,g`.
pub fn cascaded_channel(direct: &CMatrix, paths: &[RisPath]) -> Result<CascadedChannel> {
    let (n_a, n_u) = direct.shape();
    let mut h = direct.clone();
    let mut reflected = Vec::with_capacity(paths.len());
    for (g, path) in paths.iter().enumerate() {
        let n_g = path.phases.len();
        if path.ap_ris.shape() != (n_a, n_g) || path.ris_ue.shape() != (n_g, n_u) {
            return Err(Error::ShapeMismatch(format!(
                "RIS {g}: expected {n_a}x{n_g} and {n_g}x{n_u}, got {:?} and {:?}",
                path.ap_ris.shape(),
                path.ris_ue.shape()
            )));
        }
        if path.phases.iter().any(|p| (p.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::ShapeMismatch(format!(
                "RIS {g}: phase matrix is not unit-modulus"
            )));
        }
        let mut scaled = path.ris_ue.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= path.phases[i];
        }
        let term = &path.ap_ris * scaled;
        h += &term;
        reflected.push(term);
    }
    Ok(CascadedChannel {
        h,
        direct: direct.clone(),
        reflected,
    })
}

/// Project the channel onto the analog AP beam `a_Tx(angle) / sqrt(N_a)`.
pub fn apply_ap_beam(h: &CMatrix, beam_angle: f64) -> CMatrix {
    let n_a = h.nrows();
    let f = steering_vector_ula(beam_angle, n_a) / Complex64::new((n_a as f64).sqrt(), 0.0);
    let projected = f.adjoint() * h;
    &f * projected
}

/// Transmit power, bandwidth and noise density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// watts
    pub tx_power: f64,
    /// Hz
    pub bandwidth: f64,
    /// watts / Hz
    pub noise_density: f64,
}

impl LinkBudget {
    pub fn new(tx_power: f64, bandwidth: f64, noise_density: f64) -> Result<Self> {
        let budget = Self {
            tx_power,
            bandwidth,
            noise_density,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tx_power", self.tx_power),
            ("bandwidth", self.bandwidth),
            ("noise_density", self.noise_density),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidBudget(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `q / (N_a w sigma^2)`.
    pub fn snr_scale(&self, n_ap: usize) -> f64 {
        self.tx_power / (n_ap as f64 * self.bandwidth * self.noise_density)
    }
}

/// Which Gram matrix the log-det runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// The smaller of the two.
    Auto,
    /// `I_{N_a} + c H H^H`
    Transmit,
    /// `I_{N_u} + c H^H H`
    Receive,
}

/// `w log2 det(I + q / (N_a w sigma^2) H H^H)` in bits/s.
pub fn achievable_rate(h: &CMatrix, budget: &LinkBudget) -> Result<f64> {
    achievable_rate_on(h, budget, GramSide::Auto)
}

pub fn achievable_rate_on(h: &CMatrix, budget: &LinkBudget, side: GramSide) -> Result<f64> {
    budget.validate()?;
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFiniteChannel);
    }
    let (n_a, n_u) = h.shape();
    if n_a == 0 || n_u == 0 {
        return Err(Error::ShapeMismatch("empty channel matrix".into()));
    }
    let flushed = h.map(|z| {
        Complex64::new(
            if z.re.abs() < FLUSH_THRESHOLD { 0.0 } else { z.re },
            if z.im.abs() < FLUSH_THRESHOLD { 0.0 } else { z.im },
        )
    });
    let c = Complex64::new(budget.snr_scale(n_a), 0.0);
    let use_receive = match side {
        GramSide::Auto => n_u < n_a,
        GramSide::Transmit => false,
        GramSide::Receive => true,
    };
    let gram = if use_receive {
        CMatrix::identity(n_u, n_u) + (flushed.adjoint() * &flushed) * c
    } else {
        CMatrix::identity(n_a, n_a) + (&flushed * flushed.adjoint()) * c
    };
    let log2_det = log2_det_hermitian_pd(gram)?;
    Ok((budget.bandwidth * log2_det).max(0.0))
}

fn log2_det_hermitian_pd(mut gram: CMatrix) -> Result<f64> {
    // Enforce exact Hermitian symmetry before factorizing.
    let n = gram.nrows();
    for i in 0..n {
        gram[(i, i)] = Complex64::new(gram[(i, i)].re, 0.0);
        for j in 0..i {
            let avg = (gram[(i, j)] + gram[(j, i)].conj()) * 0.5;
            gram[(i, j)] = avg;
            gram[(j, i)] = avg.conj();
        }
    }
    let chol = Cholesky::new(gram).ok_or(Error::NonFiniteChannel)?;
    let l = chol.l_dirty();
    let ln_det: f64 = (0..n).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    Ok(ln_det / std::f64::consts::LN_2)
}
