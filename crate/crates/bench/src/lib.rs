//! Shared fixtures for the benchmarks.

use bac_core::calibration::{CalibrationData, CostConfig, EstimationVariables, ImuCalibration, Stage};
use bac_core::experiment::{master_reference, rig_calibration, rig_cost_config};
use bac_core::simulator::{generate_trajectory, simulate_rig, Dataset, RigConfig, TrajectorySpec};

/// Default three-IMU rig simulated for `seconds` with a fixed seed.
pub fn dataset(seconds: f64) -> Dataset {
    let spec = TrajectorySpec {
        duration: seconds,
        seed: 1,
        ..TrajectorySpec::default()
    };
    simulate_rig(&generate_trajectory(&spec).expect("trajectory"), &RigConfig::default(), 1).expect("simulation")
}

pub struct CostFixture {
    pub data: CalibrationData,
    pub cfg: CostConfig,
    pub calibration: Vec<ImuCalibration>,
}

impl CostFixture {
    pub fn new(seconds: f64) -> Self {
        let d = dataset(seconds);
        let times: Vec<f64> = d.ground_truth.iter().map(|p| p.t).collect();
        let reference = master_reference(&d.master, &times).expect("reference");
        let lever_arms = d.rig.imus.iter().map(|i| i.extrinsics.p_im).collect();
        CostFixture {
            data: CalibrationData::new(reference, d.imu_streams.clone(), lever_arms).expect("data"),
            cfg: rig_cost_config(&d.rig),
            calibration: rig_calibration(&d.rig),
        }
    }

    pub fn variables(&self, stage: Stage) -> EstimationVariables {
        let params = (stage == Stage::Two).then_some(&self.calibration[..]);
        EstimationVariables::initial(stage, &self.data, self.cfg.segment_len, params).expect("variables")
    }
}
