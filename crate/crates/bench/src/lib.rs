//! Fixtures shared by the benchmarks.

use shapeservo::camera::extract_shape_features;
use shapeservo::kinematics::{arcs_from_cables, CableLengths};
use shapeservo::{EpisodeSetup, FeatureVector, RobotConfig};

/// A bent `n`-section robot, its tendon state and the features it shows.
pub fn bent_robot(n: usize) -> (EpisodeSetup, Vec<CableLengths>, FeatureVector) {
    let setup = EpisodeSetup::new(RobotConfig::uniform(n));
    let cables: Vec<CableLengths> = (0..n)
        .map(|i| {
            let k = i as f64;
            CableLengths::new(100.0 + 7.0 * k, 120.0 - 3.0 * k, 110.0 + 5.0 * k)
        })
        .collect();
    let arcs = arcs_from_cables(&setup.robot, &cables).expect("admissible fixture");
    let features =
        extract_shape_features(&setup.robot, &arcs, &setup.camera).expect("visible fixture");
    (setup, cables, features)
}

/// Features of `robot` offset by a few pixels, as a servo reference.
pub fn offset_reference(features: &FeatureVector) -> FeatureVector {
    let flat: Vec<f64> = features
        .flatten()
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 3 == 2 { *v } else { v + 4.0 })
        .collect();
    FeatureVector::from_flat(&flat).expect("same length")
}
