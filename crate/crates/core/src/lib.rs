//! Highway trajectory planning over adaptive spatio-temporal voxel corridors.
//!
//! The pipeline per planning episode: [`voxelizer`] carves free space into
//! voxels, [`voxel_graph`] links them and searches a corridor per behavior,
//! [`optimizer`] fits a piecewise quintic Bezier trajectory inside the
//! corridor with [`qp`], and [`planner`] picks the cheapest behavior.

pub mod bezier;
pub mod harness;
pub mod optimizer;
pub mod planner;
pub mod qp;
pub mod scene;
pub mod voxel_graph;
pub mod voxelizer;

pub use bezier::{Axis, BezierSegment, PiecewiseBezier};
pub use optimizer::{Bounds, IdealEndStates, KinodynamicLimits, FrontRule, ObjectiveWeights};
pub use planner::{plan_episode, EpisodeResult, PlannerConfig, PlannerError};
pub use qp::{QpProblem, QpSolution, QpStatus, SolverOptions};
pub use scene::{Agent, EgoVehicle, FrenetState, LaneLabel, LaneModel, PerceptionParams, Scene};
pub use voxel_graph::{Behavior, GraphParams, VoxelGraph};
pub use voxelizer::{TimePartition, Voxel, VoxelSet};
