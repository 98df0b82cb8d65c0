//! Parametric six-node body kinematics.
//!
//! Every activity class is a sequence of segments. A segment holds a body
//! pose (or a transition between two poses) plus an oscillatory motion
//! pattern. Neighbouring segments are cross-faded so node ranges stay
//! continuous. The tables live in `templates.json` and can be replaced as a
//! whole through [`KinematicTemplates::from_json`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActivityClass, BodyTrajectory, RadarParams, SceneConfig, NUM_NODES};
use crate::error::{Error, Result};

const DEFAULT_TEMPLATES: &str = include_str!("templates.json");

/// Cross-fade width between segments, seconds.
const CROSSFADE_S: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub duration: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub torso_m: f64,
    pub offsets_m: [f64; NUM_NODES],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sine,
    /// `0.5 (1 - cos)`: excursions from the pose in one direction only.
    Raised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub waveform: Waveform,
    pub frequency_hz: f64,
    pub amplitudes_m: [f64; NUM_NODES],
    pub phases_rad: [f64; NUM_NODES],
    pub speed_mps: f64,
    pub random_direction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub motion: String,
    pub pose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_pose: Option<String>,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTemplate {
    #[serde(default)]
    pub empty: bool,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicTemplates {
    pub nodes: Vec<String>,
    pub amplitudes: [f64; NUM_NODES],
    pub range_limits_m: [f64; 2],
    pub torso_bob_m: f64,
    pub torso_bob_hz: f64,
    pub jitter: Jitter,
    pub poses: BTreeMap<String, Pose>,
    pub motions: BTreeMap<String, Motion>,
    pub classes: BTreeMap<String, ClassTemplate>,
}

impl Default for KinematicTemplates {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl KinematicTemplates {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: KinematicTemplates = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.range_limits_m;
        if !(lo >= 1.0 && hi <= 4.0 && lo < hi) {
            return Err(Error::Config(format!(
                "template range limits [{lo}, {hi}] must lie inside [1, 4] m"
            )));
        }
        for class in ActivityClass::ALL {
            let tpl = self
                .classes
                .get(class.name())
                .ok_or_else(|| Error::Config(format!("no template for class {}", class.name())))?;
            if tpl.segments.is_empty() {
                return Err(Error::Config(format!("class {} has no segments", class.name())));
            }
            for seg in &tpl.segments {
                if !self.motions.contains_key(&seg.motion) {
                    return Err(Error::Config(format!("unknown motion '{}'", seg.motion)));
                }
                for pose in std::iter::once(&seg.pose).chain(seg.to_pose.as_ref()) {
                    if !self.poses.contains_key(pose) {
                        return Err(Error::Config(format!("unknown pose '{pose}'")));
                    }
                }
                if !(seg.duration > 0.0) {
                    return Err(Error::Config("segment durations must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Node ranges for one sample. The torso path does not depend on
    /// `scene.height_scale`; every other node sits at the torso range plus a
    /// height-scaled offset.
    pub fn trajectory(
        &self,
        class: ActivityClass,
        scene: &SceneConfig,
        radar: &RadarParams,
        seed: u64,
    ) -> BodyTrajectory {
        let tpl = &self.classes[class.name()];
        let jit = &self.jitter;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // All draws happen up front and in a fixed order so that changing the
        // height leaves the random state untouched.
        let mut durations: Vec<f64> = tpl
            .segments
            .iter()
            .map(|s| s.duration * (1.0 + rng.random_range(-jit.duration..=jit.duration)))
            .collect();
        let amp_factor = 1.0 + rng.random_range(-jit.amplitude..=jit.amplitude);
        let freq_factor = 1.0 + rng.random_range(-jit.frequency..=jit.frequency);
        let speed_factor = 1.0 + rng.random_range(-jit.speed..=jit.speed);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let placement: f64 = rng.random_range(0.0..=1.0);

        let total: f64 = durations.iter().sum();
        let obs = radar.observation_s;
        for d in &mut durations {
            *d *= obs / total;
        }
        let mut bounds = Vec::with_capacity(durations.len() + 1);
        let mut acc = 0.0;
        bounds.push(0.0);
        for d in &durations {
            acc += d;
            bounds.push(acc);
        }

        let m_count = radar.num_pri;
        let dt = radar.pri_s();
        let h = scene.height_scale;
        let mut rel = Array2::<f64>::zeros((NUM_NODES, m_count));
        let mut torso = 0.0;

        for m in 0..m_count {
            let t = m as f64 * dt;
            let weights = segment_weights(&bounds, t);
            let mut velocity = 0.0;
            let mut torso_pose = 0.0;
            let mut offsets = [0.0; NUM_NODES];
            for (s, seg) in tpl.segments.iter().enumerate() {
                let w = weights[s];
                if w == 0.0 {
                    continue;
                }
                let motion = &self.motions[&seg.motion];
                let pose = self.segment_pose(seg, (t - bounds[s]) / (bounds[s + 1] - bounds[s]));
                let dir = if motion.random_direction { direction } else { 1.0 };
                velocity += w * dir * motion.speed_mps * speed_factor;
                torso_pose += w * pose.torso_m;
                let omega = 2.0 * PI * motion.frequency_hz * freq_factor;
                for n in 1..NUM_NODES {
                    let arg = omega * t + phase0 + motion.phases_rad[n];
                    let wave = match motion.waveform {
                        Waveform::Sine => arg.sin(),
                        Waveform::Raised => 0.5 * (1.0 - arg.cos()),
                    };
                    offsets[n] +=
                        w * (pose.offsets_m[n] + amp_factor * motion.amplitudes_m[n] * wave);
                }
            }
            if m > 0 {
                torso += velocity * dt;
            }
            let bob = self.torso_bob_m * (2.0 * PI * self.torso_bob_hz * t + phase0).sin();
            let base = torso + torso_pose + bob;
            rel[[0, m]] = base;
            for n in 1..NUM_NODES {
                rel[[n, m]] = base + h * offsets[n];
            }
        }

        let (min, max) = rel
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let [lo, hi] = self.range_limits_m;
        let start_lo = lo - min;
        let start_hi = hi - max;
        let start = if start_hi >= start_lo {
            start_lo + placement * (start_hi - start_lo)
        } else {
            0.5 * (start_lo + start_hi)
        };
        rel.mapv_inplace(|v| v + start);

        let node_amplitudes = if tpl.empty {
            [0.0; NUM_NODES]
        } else {
            self.amplitudes
        };
        BodyTrajectory {
            node_ranges_m: rel,
            node_amplitudes,
        }
    }

    fn segment_pose(&self, seg: &Segment, frac: f64) -> Pose {
        let from = &self.poses[&seg.pose];
        match &seg.to_pose {
            None => from.clone(),
            Some(to) => {
                let to = &self.poses[to];
                let a = 0.5 * (1.0 - (PI * frac.clamp(0.0, 1.0)).cos());
                let mut offsets = [0.0; NUM_NODES];
                for (n, o) in offsets.iter_mut().enumerate() {
                    *o = (1.0 - a) * from.offsets_m[n] + a * to.offsets_m[n];
                }
                Pose {
                    torso_m: (1.0 - a) * from.torso_m + a * to.torso_m,
                    offsets_m: offsets,
                }
            }
        }
    }
}

/// Partition of unity over segments with raised-cosine cross-fades centred
/// on each interior boundary.
fn segment_weights(bounds: &[f64], t: f64) -> Vec<f64> {
    let n = bounds.len() - 1;
    let mut w = vec![0.0; n];
    // ramp[b] is the weight of everything after boundary b
    let ramp = |b: usize| -> f64 {
        let x = (t - bounds[b]) / CROSSFADE_S + 0.5;
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            0.5 * (1.0 - (PI * x).cos())
        }
    };
    let mut prev = 1.0;
    for (s, ws) in w.iter_mut().enumerate() {
        let after = if s + 1 < n { ramp(s + 1) } else { 0.0 };
        *ws = prev - after;
        prev = after;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        let bounds = [0.0, 1.0, 2.5, 4.0];
        for i in 0..400 {
            let t = i as f64 * 0.01;
            let w = segment_weights(&bounds, t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        }
    }

    #[test]
    fn bundled_templates_cover_all_classes() {
        let t = KinematicTemplates::default();
        assert_eq!(t.classes.len(), 12);
        assert!(t.classes["S1"].empty);
    }

    #[test]
    fn unknown_motion_is_rejected() {
        let mut t = KinematicTemplates::default();
        t.classes.get_mut("S2").unwrap().segments[0].motion = "dance".into();
        assert!(t.validate().is_err());
    }
}
