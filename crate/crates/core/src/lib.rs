//! Chart-atlas numerics for the Yamabe flow.
//!
//! The manifold is represented by overlapping coordinate charts with
//! closed-form transition maps and a localization system (a partition of
//! unity by squares plus nested cutoffs). Global fields live as per-chart
//! grid arrays; differential operators act chart-locally and are blended
//! through the localization system. On top of that sit the conformal
//! Laplacian, ellipticity and resolvent probes, the Yamabe flow integrator,
//! and a truncated-translation smoothness probe.

pub mod atlas;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod localization;

pub use atlas::{
    build_sphere_atlas, build_torus_atlas, validate_uniform_regularity, Atlas, AtlasSpec, Chart,
    RegularityReport, TransitionMap,
};
pub use error::{Error, Result};
pub use fields::ChartField;
pub use localization::{build_localization, LocalizationSystem};

/// Shared atlases for unit tests; building them is the slow part of most
/// test setups.
#[cfg(test)]
pub(crate) mod fixtures {
    use crate::atlas::{build_sphere_atlas, build_torus_atlas, Atlas};
    use std::sync::OnceLock;

    pub fn torus1() -> Atlas {
        static A: OnceLock<Atlas> = OnceLock::new();
        A.get_or_init(|| build_torus_atlas(3, 1, 0.25, 16).unwrap()).clone()
    }

    pub fn torus1_fine() -> Atlas {
        static A: OnceLock<Atlas> = OnceLock::new();
        A.get_or_init(|| build_torus_atlas(3, 1, 0.25, 32).unwrap()).clone()
    }

    pub fn torus8() -> Atlas {
        static A: OnceLock<Atlas> = OnceLock::new();
        A.get_or_init(|| build_torus_atlas(3, 2, 0.25, 24).unwrap()).clone()
    }

    pub fn sphere17() -> Atlas {
        static A: OnceLock<Atlas> = OnceLock::new();
        A.get_or_init(|| build_sphere_atlas(1.0, 17).unwrap()).clone()
    }

    pub fn sphere24() -> Atlas {
        static A: OnceLock<Atlas> = OnceLock::new();
        A.get_or_init(|| build_sphere_atlas(1.0, 24).unwrap()).clone()
    }
}
