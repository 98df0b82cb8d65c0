//! Corner proposals on squared-axis maps: piecewise polynomial smoothing
//! followed by difference-of-Gaussians extrema, with an adaptive loop that
//! widens the smoothing window until enough corners appear.

mod dog;
mod savgol;

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dog::{
    detect_corners, dog_pyramid, gaussian_blur, scale_space_extrema, suppress, DogConfig,
    DogPyramid,
};
pub use savgol::{eval_fit, hat_matrix, sg_fit_slice, sg_smooth_map, SmoothingConfig, MAX_CONDITION};

/// Lowest contrast threshold the adaptive loop will try.
pub const THRESHOLD_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapSource {
    /// R²TM
    Range,
    /// D²TM
    Doppler,
}

impl MapSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MapSource::Range => "R2TM",
            MapSource::Doppler => "D2TM",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    /// Pixel row on the squared axis.
    pub row: usize,
    /// Pixel column on slow time.
    pub col: usize,
    /// |DoG| at the extremum.
    pub response: f64,
    /// Global DoG level, `octave * (levels − 1) + level`.
    pub scale_index: usize,
    /// Characteristic blur of that level in input pixels.
    pub sigma: f64,
    pub source: MapSource,
}

/// Corners ordered by descending response.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CornerSet {
    pub corners: Vec<Corner>,
}

impl CornerSet {
    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    /// `source,row,col,response,scale` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,row,col,response,scale\n");
        for c in &self.corners {
            writeln!(s, "{},{},{},{},{}", c.source.as_str(), c.row, c.col, c.response, c.scale_index)
                .expect("string write");
        }
        s
    }
}

/// A source of corner candidates for one map. The DoG detector is the
/// built-in implementation; a learned detector can be swapped in here.
pub trait CornerProposer: Send + Sync {
    fn propose(&self, map: &Array2<f64>, threshold: f64, source: MapSource) -> CornerSet;
}

#[derive(Clone, Debug, Default)]
pub struct DogDetector {
    pub cfg: DogConfig,
}

impl CornerProposer for DogDetector {
    fn propose(&self, map: &Array2<f64>, threshold: f64, source: MapSource) -> CornerSet {
        detect_corners(map, &self.cfg, threshold, source)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CornerConfig {
    pub smoothing: SmoothingConfig,
    pub dog: DogConfig,
}

/// Result of [`adaptive_extract`] with the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub corners: CornerSet,
    pub half_window: usize,
    pub threshold: f64,
    pub attempts: usize,
}

/// Smooth-then-detect until at least `cor0` corners are found. The window
/// grows by two samples per step; once growth is exhausted the contrast
/// threshold is halved down to [`THRESHOLD_FLOOR`].
pub fn adaptive_extract(
    map: &Array2<f64>,
    cor0: usize,
    cfg: &CornerConfig,
    proposer: &dyn CornerProposer,
    source: MapSource,
) -> Result<Extraction> {
    cfg.smoothing.validate()?;
    let mut threshold = cfg.dog.contrast_threshold;
    if cor0 == 0 {
        return Ok(Extraction {
            corners: CornerSet::default(),
            half_window: cfg.smoothing.half_window,
            threshold,
            attempts: 0,
        });
    }
    let mut smoothing = cfg.smoothing.clone();
    let mut attempts = 0;
    let mut best = 0;
    let mut smoothed: Option<Array2<f64>> = None;
    for step in 0..=cfg.smoothing.max_window_growth_steps {
        smoothing.half_window = cfg.smoothing.half_window + step;
        let s = match sg_smooth_map(map, &smoothing) {
            Ok(s) => s,
            Err(Error::SingularSystem { .. }) => continue,
            Err(e) => return Err(e),
        };
        attempts += 1;
        let set = proposer.propose(&s, threshold, source);
        best = best.max(set.len());
        if set.len() >= cor0 {
            return Ok(Extraction {
                corners: set,
                half_window: smoothing.half_window,
                threshold,
                attempts,
            });
        }
        smoothed = Some(s);
    }
    if let Some(s) = smoothed {
        threshold *= 0.5;
        while threshold >= THRESHOLD_FLOOR {
            attempts += 1;
            let set = proposer.propose(&s, threshold, source);
            best = best.max(set.len());
            if set.len() >= cor0 {
                return Ok(Extraction {
                    corners: set,
                    half_window: smoothing.half_window,
                    threshold,
                    attempts,
                });
            }
            threshold *= 0.5;
        }
    }
    Err(Error::InsufficientCorners {
        found: best,
        required: cor0,
    })
}
