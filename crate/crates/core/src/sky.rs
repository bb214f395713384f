//! Star catalogs and tangent-plane projection.
//!
//! Stars are cataloged in equatorial coordinates (right ascension and
//! declination, degrees). The sensor observes a small field, so star
//! positions map onto the focal plane through a gnomonic (tangent-plane)
//! projection centered on the current boresight. The projection keeps
//! sub-milliarcsecond fidelity across fields a few degrees wide, which is
//! far below the per-pixel scale of the sensors modeled here.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::Vec2;

/// Declination band (degrees) around either pole where the projection is
/// refused rather than allowed to degrade.
pub const POLE_GUARD_DEG: f64 = 89.0;

#[derive(Debug, Error)]
pub enum SkyError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("catalog line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("declination {dec_deg} deg is within {POLE_GUARD_DEG} deg pole guard")]
    PoleProximity { dec_deg: f64 },
}

/// One catalog entry. Coordinates in degrees, magnitude unitless
/// (smaller is brighter).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogStar {
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub magnitude: f64,
}

/// A timestamped boresight attitude in equatorial coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointing {
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub t_s: f64,
}

impl Pointing {
    pub fn new(ra_deg: f64, dec_deg: f64, t_s: f64) -> Self {
        Self { ra_deg, dec_deg, t_s }
    }

    /// Offset of `self` relative to `origin` in arcseconds per axis.
    ///
    /// Offsets live in plain (ra, dec) coordinate space; the simulator
    /// operates near the celestial equator where this coincides with the
    /// tangent plane to well below the plate scale.
    pub fn offset_arcsec_from(&self, origin: &Pointing) -> Vec2 {
        Vec2::new(
            (self.ra_deg - origin.ra_deg) * 3600.0,
            (self.dec_deg - origin.dec_deg) * 3600.0,
        )
    }

    /// New pointing displaced by an (ra, dec) offset in arcseconds.
    pub fn offset_by_arcsec(&self, offset: Vec2) -> Pointing {
        Pointing {
            ra_deg: self.ra_deg + offset.x / 3600.0,
            dec_deg: self.dec_deg + offset.y / 3600.0,
            t_s: self.t_s,
        }
    }
}

/// Sensor pixel grid and angular field of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
    pub fov_x_deg: f64,
    pub fov_y_deg: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
            fov_x_deg: 1.5,
            fov_y_deg: 0.8,
        }
    }
}

impl SensorGeometry {
    /// Arcseconds per pixel along x.
    pub fn plate_scale_x(&self) -> f64 {
        self.fov_x_deg * 3600.0 / self.width as f64
    }

    /// Arcseconds per pixel along y.
    pub fn plate_scale_y(&self) -> f64 {
        self.fov_y_deg * 3600.0 / self.height as f64
    }

    /// Plate scale as a vector, arcseconds per pixel.
    pub fn plate_scale(&self) -> Vec2 {
        Vec2::new(self.plate_scale_x(), self.plate_scale_y())
    }
}

/// Parse catalog text: one `ra_deg dec_deg magnitude` triple per line,
/// `#` comments and blank lines skipped. Keeps stars with
/// `magnitude <= mag_limit`, sorted brightest first.
pub fn parse_catalog(text: &str, mag_limit: f64) -> Result<Vec<CatalogStar>, SkyError> {
    let mut stars = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut field = |name: &str| -> Result<f64, SkyError> {
            let tok = fields.next().ok_or_else(|| SkyError::Malformed {
                line: idx + 1,
                reason: format!("missing {name}"),
            })?;
            tok.parse::<f64>().map_err(|_| SkyError::Malformed {
                line: idx + 1,
                reason: format!("unparseable {name}: {tok:?}"),
            })
        };
        let ra_deg = field("ra")?;
        let dec_deg = field("dec")?;
        let magnitude = field("magnitude")?;
        if fields.next().is_some() {
            return Err(SkyError::Malformed {
                line: idx + 1,
                reason: "trailing fields".into(),
            });
        }
        if magnitude <= mag_limit {
            stars.push(CatalogStar { ra_deg, dec_deg, magnitude });
        }
    }
    stars.sort_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
    Ok(stars)
}

/// Load a catalog file and filter by magnitude. See [`parse_catalog`].
pub fn load_catalog(path: &Path, mag_limit: f64) -> Result<Vec<CatalogStar>, SkyError> {
    let text = fs::read_to_string(path).map_err(|source| SkyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_catalog(&text, mag_limit)
}

/// Bundled 500-star synthetic field (~5 x 4 degrees around ra 180, dec 0).
pub fn bundled_catalog_500(mag_limit: f64) -> Vec<CatalogStar> {
    parse_catalog(include_str!("../data/catalog_500.txt"), mag_limit)
        .expect("bundled catalog is well formed")
}

/// Bundled 50-star synthetic field (~2 x 1 degrees around ra 180, dec 0).
pub fn bundled_catalog_50(mag_limit: f64) -> Vec<CatalogStar> {
    parse_catalog(include_str!("../data/catalog_50.txt"), mag_limit)
        .expect("bundled catalog is well formed")
}

/// Gnomonic projection of a star onto the sensor for a given boresight.
///
/// Returns `Ok(Some((x, y)))` in fractional pixel coordinates when the star
/// lands inside `[0, width) x [0, height)`, `Ok(None)` when it projects
/// outside the field of view (or behind the tangent plane), and an error
/// when either the star or the boresight sits inside the pole guard band.
///
/// A star exactly on the boresight maps to `(width/2, height/2)`; +x is
/// aligned with increasing right ascension, +y with increasing declination.
pub fn project(
    star: &CatalogStar,
    pointing: &Pointing,
    geom: &SensorGeometry,
) -> Result<Option<(f64, f64)>, SkyError> {
    for dec in [star.dec_deg, pointing.dec_deg] {
        if dec.abs() >= POLE_GUARD_DEG {
            return Err(SkyError::PoleProximity { dec_deg: dec });
        }
    }

    // Unit vectors: r for the star, b for the boresight, with the tangent
    // basis (east, north) spanning the image plane.
    let (sa, ca) = star.ra_deg.to_radians().sin_cos();
    let (sd, cd) = star.dec_deg.to_radians().sin_cos();
    let r = [cd * ca, cd * sa, sd];

    let (sa0, ca0) = pointing.ra_deg.to_radians().sin_cos();
    let (sd0, cd0) = pointing.dec_deg.to_radians().sin_cos();
    let b = [cd0 * ca0, cd0 * sa0, sd0];

    // east = normalize(z x b), north = b x east; cd0 > 0 inside pole guard.
    let east = [-sa0, ca0, 0.0];
    let north = [-sd0 * ca0, -sd0 * sa0, cd0];

    let dot = |u: &[f64; 3], v: &[f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cos_c = dot(&r, &b);
    if cos_c <= 0.0 {
        return Ok(None);
    }
    let xi = dot(&r, &east) / cos_c; // radians, +east
    let eta = dot(&r, &north) / cos_c; // radians, +north

    const RAD_TO_ARCSEC: f64 = 3600.0 * 180.0 / std::f64::consts::PI;
    let x = geom.width as f64 / 2.0 + xi * RAD_TO_ARCSEC / geom.plate_scale_x();
    let y = geom.height as f64 / 2.0 + eta * RAD_TO_ARCSEC / geom.plate_scale_y();

    if x >= 0.0 && x < geom.width as f64 && y >= 0.0 && y < geom.height as f64 {
        Ok(Some((x, y)))
    } else {
        Ok(None)
    }
}
