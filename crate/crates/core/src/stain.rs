//! Macenko-style H&E stain normalization.
//!
//! Images are moved to optical density (OD) space, where stain absorbance
//! mixes linearly. The two dominant stain directions are found from the
//! extreme angles of OD pixels projected onto their principal plane, pixels
//! are unmixed against that basis, and concentrations are rescaled to a target
//! profile before being re-rendered through the target's basis.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::raster::RasterImage;

/// Smallest angular separation (radians) between the two estimated stain
/// vectors before the image is treated as single-stain.
const MIN_STAIN_SEPARATION: f64 = 1e-3;

/// Second principal variance relative to the first below which the OD cloud
/// is considered one-dimensional.
const MIN_PLANE_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StainParams {
    /// Transmitted-light reference intensity.
    pub io_intensity: f64,
    /// OD floor; pixels with any channel below it are ignored when fitting.
    pub beta: f64,
    /// Angle percentile, in percent.
    pub alpha: f64,
    /// Concentration percentile used as the per-stain maximum, in percent.
    pub concentration_percentile: f64,
}

impl Default for StainParams {
    fn default() -> Self {
        Self {
            io_intensity: 255.0,
            beta: 0.15,
            alpha: 1.0,
            concentration_percentile: 99.0,
        }
    }
}

impl StainParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.io_intensity > 0.0
            && self.alpha > 0.0
            && self.alpha < 50.0
            && self.beta >= 0.0
            && self.concentration_percentile > 50.0
            && self.concentration_percentile <= 100.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid stain parameters {self:?}")))
        }
    }
}

/// Per-pixel optical density, three channels per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    height: usize,
    width: usize,
    od: Vec<f64>,
}

impl OdImage {
    pub fn new(height: usize, width: usize, od: Vec<f64>) -> Result<Self> {
        if od.len() != height * width * 3 {
            return Err(Error::shape("OdImage::new", &[height, width, 3], &[od.len()]));
        }
        if od.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::OutOfRange("OD values must be finite and >= 0".into()));
        }
        Ok(Self { height, width, od })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.od
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    fn pixels(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.od.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Two unit-norm stain OD vectors as the columns of a 3x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainBasis {
    columns: [Vec3; 2],
}

impl StainBasis {
    /// Normalizes both columns. Zero columns are rejected.
    pub fn from_columns(hematoxylin: Vec3, eosin: Vec3) -> Result<Self> {
        let unit = |v: Vec3| -> Result<Vec3> {
            let n = linalg::norm(&v);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::RankDeficient);
            }
            Ok([v[0] / n, v[1] / n, v[2] / n])
        };
        Ok(Self {
            columns: [unit(hematoxylin)?, unit(eosin)?],
        })
    }

    /// Row-major 3x2 entries, kept bit-for-bit. Columns must already be unit
    /// norm within 1e-9.
    pub fn from_row_major(values: [f64; 6]) -> Result<Self> {
        let columns = [
            [values[0], values[2], values[4]],
            [values[1], values[3], values[5]],
        ];
        for col in &columns {
            let n = linalg::norm(col);
            if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "stain basis column {col:?} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn column(&self, k: usize) -> &Vec3 {
        &self.columns[k]
    }

    pub fn columns(&self) -> &[Vec3; 2] {
        &self.columns
    }

    pub fn to_row_major(&self) -> [f64; 6] {
        let [h, e] = self.columns;
        [h[0], e[0], h[1], e[1], h[2], e[2]]
    }

    /// `basis * c` for a two-stain concentration.
    pub fn mix(&self, c: [f64; 2]) -> Vec3 {
        let [h, e] = self.columns;
        [
            h[0] * c[0] + e[0] * c[1],
            h[1] * c[0] + e[1] * c[1],
            h[2] * c[0] + e[2] * c[1],
        ]
    }
}

/// Stain concentrations, two per pixel, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Concentrations {
    values: Vec<[f64; 2]>,
}

impl Concentrations {
    pub fn pixel_count(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, pixel: usize) -> [f64; 2] {
        self.values[pixel]
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn stain(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |c| c[k])
    }
}

/// The target a source image is normalized towards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainProfile {
    pub basis: StainBasis,
    pub max_concentration: [f64; 2],
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], percent: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let n = sorted.len();
    let rank = libm::ceil(percent / 100.0 * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn rgb_to_od(image: &RasterImage, params: &StainParams) -> Result<OdImage> {
    image.require_rgb()?;
    params.validate()?;
    let od = image
        .pixels()
        .iter()
        .map(|&i| {
            let v = -libm::log10(i.max(1.0) / params.io_intensity);
            if v > 0.0 { v } else { 0.0 }
        })
        .collect();
    Ok(OdImage {
        height: image.height(),
        width: image.width(),
        od,
    })
}

pub fn od_to_rgb(od: &OdImage, params: &StainParams) -> RasterImage {
    let pixels = od
        .od
        .iter()
        .map(|&d| (params.io_intensity * libm::pow(10.0, -d)).clamp(0.0, 255.0))
        .collect();
    RasterImage::new(od.height, od.width, 3, pixels).expect("OD image dimensions are valid")
}

/// Estimates the hematoxylin and eosin OD directions of an image.
///
/// Survivors of the `beta` filter are sorted before any accumulation, so the
/// result does not depend on pixel order at all, not even in the last bit.
pub fn estimate_stain_basis(od: &OdImage, params: &StainParams) -> Result<StainBasis> {
    params.validate()?;
    let mut tissue: Vec<Vec3> = od
        .pixels()
        .filter(|p| p.iter().all(|&v| v >= params.beta))
        .collect();
    if tissue.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "{} pixel(s) above the OD threshold {}; need at least 2",
            tissue.len(),
            params.beta
        )));
    }
    tissue.sort_unstable_by(|a, b| {
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });

    let n = tissue.len() as f64;
    let mut mean = [0.0; 3];
    for p in &tissue {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = [[0.0; 3]; 3];
    for p in &tissue {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in cov.iter_mut() {
        row.iter_mut().for_each(|v| *v /= n - 1.0);
    }

    let (values, vectors) = linalg::symmetric_eigen3(cov);
    if !(values[0] > 0.0) || values[1] <= MIN_PLANE_RATIO * values[0] {
        return Err(Error::DegenerateInput(
            "OD pixels span fewer than two stain directions".into(),
        ));
    }
    let orient = |v: Vec3| if v[0] + v[1] + v[2] < 0.0 { v.map(|x| -x) } else { v };
    let e1 = orient(vectors[0]);
    let e2 = orient(vectors[1]);

    let mut angles: Vec<f64> = tissue
        .iter()
        .map(|p| libm::atan2(linalg::dot(p, &e2), linalg::dot(p, &e1)))
        .collect();
    angles.sort_unstable_by(f64::total_cmp);
    let lo = nearest_rank(&angles, params.alpha);
    let hi = nearest_rank(&angles, 100.0 - params.alpha);

    let in_plane = |phi: f64| -> Vec3 {
        let (s, c) = (libm::sin(phi), libm::cos(phi));
        [
            (e1[0] * c + e2[0] * s).max(0.0),
            (e1[1] * c + e2[1] * s).max(0.0),
            (e1[2] * c + e2[2] * s).max(0.0),
        ]
    };
    let (mut v1, mut v2) = (in_plane(lo), in_plane(hi));
    let (n1, n2) = (linalg::norm(&v1), linalg::norm(&v2));
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::DegenerateInput(
            "a stain direction has no nonnegative component".into(),
        ));
    }
    v1 = v1.map(|x| x / n1);
    v2 = v2.map(|x| x / n2);
    let separation = libm::acos(linalg::dot(&v1, &v2).clamp(-1.0, 1.0));
    if separation < MIN_STAIN_SEPARATION {
        return Err(Error::DegenerateInput(
            "estimated stain vectors coincide; image looks single-stain".into(),
        ));
    }
    // Hematoxylin absorbs more red than eosin.
    let (h, e) = if v1[0] >= v2[0] { (v1, v2) } else { (v2, v1) };
    Ok(StainBasis { columns: [h, e] })
}

/// Least-squares unmixing of every pixel against `basis`, clamped at zero.
///
/// Solved through a Gram-Schmidt factorization `basis = Q R`, so
/// `c = R^-1 Q^T od`.
pub fn compute_concentrations(od: &OdImage, basis: &StainBasis) -> Result<Concentrations> {
    let [a, b] = basis.columns;
    let r11 = linalg::norm(&a);
    let q1 = a.map(|x| x / r11);
    let r12 = linalg::dot(&q1, &b);
    let resid = [b[0] - r12 * q1[0], b[1] - r12 * q1[1], b[2] - r12 * q1[2]];
    let r22 = linalg::norm(&resid);
    if !(r11 > 0.0) || !(r22 > 1e-9 * linalg::norm(&b)) {
        return Err(Error::RankDeficient);
    }
    let q2 = resid.map(|x| x / r22);
    let values = od
        .pixels()
        .map(|p| {
            let y1 = linalg::dot(&q1, &p);
            let y2 = linalg::dot(&q2, &p);
            let c2 = y2 / r22;
            let c1 = (y1 - r12 * c2) / r11;
            [c1.max(0.0), c2.max(0.0)]
        })
        .collect();
    Ok(Concentrations { values })
}

fn max_concentrations(conc: &Concentrations, params: &StainParams) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut v: Vec<f64> = conc.stain(k).collect();
        v.sort_unstable_by(f64::total_cmp);
        *slot = nearest_rank(&v, params.concentration_percentile);
    }
    out
}

pub fn fit_target_profile(target: &RasterImage, params: &StainParams) -> Result<StainProfile> {
    let od = rgb_to_od(target, params)?;
    let basis = estimate_stain_basis(&od, params)?;
    let conc = compute_concentrations(&od, &basis)?;
    Ok(StainProfile {
        basis,
        max_concentration: max_concentrations(&conc, params),
    })
}

pub fn normalize_to_target(
    source: &RasterImage,
    profile: &StainProfile,
    params: &StainParams,
) -> Result<RasterImage> {
    let od = rgb_to_od(source, params)?;
    let basis = estimate_stain_basis(&od, params)?;
    let conc = compute_concentrations(&od, &basis)?;
    let source_max = max_concentrations(&conc, params);
    if source_max.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::DegenerateInput(format!(
            "source stain percentile concentrations {source_max:?} must be positive"
        )));
    }
    let scale = [
        profile.max_concentration[0] / source_max[0],
        profile.max_concentration[1] / source_max[1],
    ];
    let mut out = Vec::with_capacity(od.od.len());
    for c in conc.as_slice() {
        let mixed = profile.basis.mix([c[0] * scale[0], c[1] * scale[1]]);
        out.extend(mixed.iter().map(|&d| d.max(0.0)));
    }
    let od_out = OdImage {
        height: od.height,
        width: od.width,
        od: out,
    };
    Ok(od_to_rgb(&od_out, params))
}
