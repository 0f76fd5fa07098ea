//! Named movement primitives and task programs, persisted as versioned JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::control::default_stiffness;
use crate::error::{check_schema_version, StoreError};
use crate::lfd::trajectory::Trajectory;
use crate::pose::Pose;
use crate::scenario::SuccessCheck;

pub const PRIMITIVE_SCHEMA_VERSION: u32 = 1;
pub const PROGRAM_SCHEMA_VERSION: u32 = 1;
pub const PRIMITIVE_SUFFIX: &str = ".primitive.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub schema_version: u32,
    pub name: String,
    /// Insertion primitives may trigger spiral exploration.
    pub insertion: bool,
    pub translational_stiffness_n_per_m: [f64; 3],
    pub rotational_stiffness_nm_per_rad: [f64; 3],
    /// Board pose at recording time, robot frame.
    pub recording_frame: Pose,
    pub samples: Trajectory,
}

impl Primitive {
    pub fn new(name: impl Into<String>, insertion: bool, recording_frame: Pose, samples: Trajectory) -> Self {
        let k = default_stiffness();
        Self {
            schema_version: PRIMITIVE_SCHEMA_VERSION,
            name: name.into(),
            insertion,
            translational_stiffness_n_per_m: [k[0], k[1], k[2]],
            rotational_stiffness_nm_per_rad: [k[3], k[4], k[5]],
            recording_frame,
            samples,
        }
    }

    pub fn stiffness(&self) -> Vector6<f64> {
        let t = self.translational_stiffness_n_per_m;
        let r = self.rotational_stiffness_nm_per_rad;
        Vector6::new(t[0], t[1], t[2], r[0], r[1], r[2])
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(StoreError::Invalid(format!("bad primitive name `{}`", self.name)));
        }
        if !(self.recording_frame.is_finite() && self.recording_frame.quaternion_norm_ok()) {
            return Err(StoreError::Invalid(format!("{}: recording frame is not a valid pose", self.name)));
        }
        if self.samples.len() < 2 {
            return Err(StoreError::Invalid(format!("{}: needs at least two samples", self.name)));
        }
        let k = self.stiffness();
        if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(StoreError::Invalid(format!("{}: stiffness must be finite and >= 0", self.name)));
        }
        Trajectory::from_samples(self.samples.samples().to_vec())
            .map_err(|e| StoreError::Invalid(format!("{}: {e}", self.name)))?;
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("{}{PRIMITIVE_SUFFIX}", self.name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("primitive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let value = check_schema_version(text, "primitive", PRIMITIVE_SCHEMA_VERSION)?;
        let p: Primitive = serde_json::from_value(value)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, StoreError> {
        self.validate()?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Primitives keyed by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrimitiveLibrary {
    pub primitives: BTreeMap<String, Primitive>,
}

impl PrimitiveLibrary {
    pub fn insert(&mut self, p: Primitive) -> Result<(), StoreError> {
        p.validate()?;
        if self.primitives.contains_key(&p.name) {
            return Err(StoreError::DuplicateName(p.name));
        }
        self.primitives.insert(p.name.clone(), p);
        Ok(())
    }

    /// Inserts or replaces.
    pub fn upsert(&mut self, p: Primitive) -> Result<(), StoreError> {
        p.validate()?;
        self.primitives.insert(p.name.clone(), p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Primitive> {
        self.primitives.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Primitive> {
        self.primitives.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.primitives.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Loads every `*.primitive.json` in `dir`, in name order.
    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(PRIMITIVE_SUFFIX)))
            .collect();
        paths.sort();
        let mut lib = Self::default();
        for p in paths {
            lib.insert(Primitive::load(&p)?)?;
        }
        Ok(lib)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir)?;
        for p in self.primitives.values() {
            p.save(dir)?;
        }
        Ok(())
    }
}

/// Ordered list of primitive names, with optional success checks keyed by
/// primitive name. A step without a check succeeds when it completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgram {
    pub schema_version: u32,
    pub primitives: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checks: BTreeMap<String, SuccessCheck>,
}

impl TaskProgram {
    pub fn new(names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            schema_version: PROGRAM_SCHEMA_VERSION,
            primitives: names.into_iter().map(Into::into).collect(),
            checks: BTreeMap::new(),
        }
    }

    pub fn with_check(mut self, primitive: &str, check: SuccessCheck) -> Self {
        self.checks.insert(primitive.to_string(), check);
        self
    }

    pub fn check_against(&self, lib: &PrimitiveLibrary) -> Result<(), StoreError> {
        match self.primitives.iter().find(|n| lib.get(n).is_none()) {
            Some(n) => Err(StoreError::MissingPrimitive(n.clone())),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let value = check_schema_version(text, "task program", PROGRAM_SCHEMA_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
