use ergokin::calib::{calibrate_recording, estimate_calibration, CalibConfig};
use ergokin::ingest::Recording;
use ergokin::kinmodel::KinematicModel;
use ergokin::rotmath::{geodesic, UnitQuat};
use ergokin::synth::{SensorRig, SyntheticMotion};

const RATE: f64 = 50.0;
const SECONDS: f64 = 8.0;

fn calibrated(motion: &SyntheticMotion, rig: &SensorRig, nominal: UnitQuat) -> (f64, Recording) {
    let rec = rig.record(motion, RATE, SECONDS, 0.0);
    let config = CalibConfig {
        nominal_torso_mount: nominal,
        ..CalibConfig::default()
    };
    let cal = estimate_calibration(&rec, (0.0, 2.0), &config).unwrap();
    assert!(cal.warnings.is_empty());
    let out = calibrate_recording(&rec, &cal.profile, "test").unwrap();
    (cal.profile.heading_offset_deg, out)
}

#[test]
fn noiseless_rig_is_recovered_exactly() {
    let model = KinematicModel::default();
    for (seed, heading) in [(1u64, 37.0), (2, 0.0), (3, -120.0), (4, 179.0)] {
        let motion = SyntheticMotion::new(model.clone(), seed);
        let rig = SensorRig::random(&model, heading, 0.0, seed + 100);
        let (offset, rec) = calibrated(&motion, &rig, rig.mounts["torso"]);
        let wrapped = (offset - heading + 540.0).rem_euclid(360.0) - 180.0;
        assert!(wrapped.abs() < 0.01, "heading {heading}: estimated {offset}");
        let mut worst = 0.0f64;
        for f in &rec.frames {
            let truth = motion.segment_orientations_at(f.time_s);
            for (s, q) in &f.orientations {
                worst = worst.max(geodesic(q, &truth[s]));
            }
        }
        assert!(worst < 1e-9, "heading {heading}: worst geodesic {worst}");
    }
}

#[test]
fn relative_orientations_do_not_depend_on_rig_heading() {
    let model = KinematicModel::default();
    let motion = SyntheticMotion::new(model.clone(), 5);
    let base = SensorRig::random(&model, 0.0, 0.0, 55);
    let relative = |rec: &Recording| -> Vec<UnitQuat> {
        rec.frames
            .iter()
            .flat_map(|f| {
                let o = &f.orientations;
                [
                    o["torso"].inverse() * o["upper_arm_r"],
                    o["upper_arm_r"].inverse() * o["forearm_r"],
                    o["torso"].inverse() * o["upper_arm_l"],
                ]
            })
            .collect()
    };
    let (_, reference) = calibrated(&motion, &base, UnitQuat::IDENTITY);
    let reference = relative(&reference);
    for heading in [37.0, -90.0, 150.0] {
        let rig = SensorRig {
            heading_deg: heading,
            ..base.clone()
        };
        let (_, rec) = calibrated(&motion, &rig, UnitQuat::IDENTITY);
        for (a, b) in relative(&rec).iter().zip(&reference) {
            assert!(geodesic(a, b) < 1e-9);
        }
    }
}
