//! Metrics, synthetic sequences and the versioned file formats used by the
//! command line.

mod io;
mod metrics;
mod synth;

pub use io::{load_poses, write_json, CameraFile, KeypointsFile, PosesFile, CAMERA_SCHEMA_VERSION, KEYPOINTS_SCHEMA_VERSION, POSES_SCHEMA_VERSION};
pub use metrics::{evaluate_poses, mpjpe, mpvpe, tr_v2v, EvalReport, RegionMetrics, METRICS_SCHEMA_VERSION};
pub use synth::{default_camera, observe, perturb_pose, sample_signing_poses, synth_sequence, PoseSource, SynthConfig, SynthSequence};
