//! Polygonal billiards with contracting reflection laws.
//!
//! The crate is organized bottom-up: [`geometry`] models the table,
//! [`reflection`] the law `f`, [`billiard_map`] the map and its derivative,
//! [`singular_set`] the singular curves and branching numbers,
//! [`expansion`] the unstable cocycle and growth estimates, and [`ergodic`]
//! the statistical estimators.

pub mod billiard_map;
pub mod ergodic;
pub mod expansion;
pub mod geometry;
pub mod reflection;
pub mod singular_set;

pub use billiard_map::{
    BilliardMap, Collision, Flight, Itinerary, MapError, Mat2, Orbit, PhasePoint, Singularity,
    StepOutcome, StepResult, Termination,
};
pub use geometry::{BoundaryPoint, GeometryError, HitKind, Polygon, RayHit, Vec2};
pub use reflection::{linear_law, LawError, LawReport, LawSpec, ReflectionLaw};
pub use singular_set::{Arrangement, BranchingReport, FanError, Sector, SectorFan, SingularCurve};
pub use expansion::{ExpansionReport, GrowthFit, GrowthReport, HComponent, HCurve};
pub use ergodic::{ErgodicComponentReport, ErgodicScan, Lyapunov, Observable, ObservableSet, PeriodicOrbit};
