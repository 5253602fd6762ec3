use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body_model::{Camera, PoseParams};
use crate::error::{Error, Result};
use crate::fitting::{FitResult, KeypointFrame, FIT_SCHEMA_VERSION};

pub const KEYPOINTS_SCHEMA_VERSION: u32 = 1;
pub const POSES_SCHEMA_VERSION: u32 = 1;
pub const CAMERA_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointsFile {
    pub schema_version: u32,
    pub frames: Vec<KeypointFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosesFile {
    pub schema_version: u32,
    pub poses: Vec<PoseParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub schema_version: u32,
    pub camera: Camera,
}

trait Versioned {
    const VERSION: u32;
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($t:ty, $v:expr) => {
        impl Versioned for $t {
            const VERSION: u32 = $v;
            fn version(&self) -> u32 {
                self.schema_version
            }
        }
    };
}

versioned!(KeypointsFile, KEYPOINTS_SCHEMA_VERSION);
versioned!(PosesFile, POSES_SCHEMA_VERSION);
versioned!(CameraFile, CAMERA_SCHEMA_VERSION);
versioned!(FitResult, FIT_SCHEMA_VERSION);

fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != T::VERSION {
        return Err(Error::SchemaVersion { expected: T::VERSION, found });
    }
    let out: T = serde_json::from_value(value)?;
    debug_assert_eq!(out.version(), T::VERSION);
    Ok(out)
}

fn read<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    parse(&std::fs::read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

impl KeypointsFile {
    pub fn new(frames: Vec<KeypointFrame>) -> Self {
        KeypointsFile {
            schema_version: KEYPOINTS_SCHEMA_VERSION,
            frames,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = parse(text)?;
        for frame in &f.frames {
            frame.validate()?;
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl PosesFile {
    pub fn new(poses: Vec<PoseParams>) -> Self {
        PosesFile {
            schema_version: POSES_SCHEMA_VERSION,
            poses,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read(path)
    }
}

impl CameraFile {
    pub fn new(camera: Camera) -> Self {
        CameraFile {
            schema_version: CAMERA_SCHEMA_VERSION,
            camera,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read(path)?;
        f.camera.validate()?;
        Ok(f)
    }
}

/// Loads poses from either a poses file or a fit result.
pub fn load_poses(path: &Path) -> Result<Vec<PoseParams>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("poses").is_some() {
        Ok(parse::<PosesFile>(&text)?.poses)
    } else if value.get("frames").is_some() {
        Ok(parse::<FitResult>(&text)?.poses())
    } else {
        Err(Error::InvalidInput(format!("{} holds neither poses nor a fit result", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::default_camera;

    #[test]
    fn round_trips_and_version_checks() {
        let dir = std::env::temp_dir().join(format!("dexfit-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cam = dir.join("camera.json");
        write_json(&cam, &CameraFile::new(default_camera())).unwrap();
        assert_eq!(CameraFile::load(&cam).unwrap().camera, default_camera());

        let poses = dir.join("poses.json");
        let p = PosesFile::new(vec![PoseParams::zero(21, 15, 10)]);
        write_json(&poses, &p).unwrap();
        assert_eq!(load_poses(&poses).unwrap(), p.poses);

        let mut bad = p.clone();
        bad.schema_version = 2;
        write_json(&poses, &bad).unwrap();
        assert!(matches!(load_poses(&poses), Err(Error::SchemaVersion { expected: 1, found: 2 })));
        assert!(matches!(KeypointsFile::from_json("{\"frames\": []}"), Err(Error::SchemaVersion { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
