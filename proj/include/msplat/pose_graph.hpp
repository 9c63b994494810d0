#pragma once

#include <msplat/camera.hpp>
#include <msplat/lie.hpp>
#include <msplat/trajectory.hpp>

#include <optional>
#include <string>
#include <vector>

namespace msplat {

/// Measured pose of camera j expressed in camera i's frame (R_ij, p_ij).
/// Information weights the residual in [rotation (3), translation (3)] order.
struct RelativeMeasurement {
  int camera_i = -1;
  int camera_j = -1;
  SE3Pose i_from_j;
  Mat6 information = Mat6::Identity();
};

struct Observation {
  int camera_id = -1;
  Vec2 uv = Vec2::Zero();
};

/// World-frame point with its pixel observations. Needs at least 2
/// observations to participate in triangulation or refinement.
struct Landmark {
  Vec3 point = Vec3::Zero();
  std::vector<Observation> observations;
};

/// Residual6 convention everywhere in this module: rows 0-2 are the rotation
/// residual e_q (radians), rows 3-5 the translation residual e_p (meters).
using Residual6 = Vec6;

/// Pose-anchor residual: e_q = Log(R_0^T R), e_p = p_0 - p.
Residual6 prior_residual(const SE3Pose& pose, const PosePrior& prior);

/// Jacobian of prior_residual with respect to [rotation tangent (right
/// multiplicative), translation (additive)]. The translation block is -I:
/// the equation's own expansion (p_0 - (p + dp)) - (p_0 - p) = -dp fixes the
/// sign, and the finite-difference oracle in the tests pins it down.
/// Throws std::domain_error when the rotation residual reaches pi.
Mat6 prior_jacobian(const SE3Pose& pose, const PosePrior& prior);

/// Relative-pose residual:
///   e_q = Log(R_ij^T R_i^T R_j)
///   e_p = R_ij^T R_i^T (p_j - p_i) - R_ij^T p_ij
Residual6 relative_residual(const SE3Pose& pose_i, const SE3Pose& pose_j,
                            const RelativeMeasurement& meas);

/// The four 6x3 blocks of the relative residual, in the same perturbation
/// convention as prior_jacobian. Every block is validated against central
/// finite differences in the tests.
struct RelativeJacobians {
  Mat63 d_rot_i;    // d e / d theta_i
  Mat63 d_rot_j;    // d e / d theta_j
  Mat63 d_trans_i;  // d e / d p_i
  Mat63 d_trans_j;  // d e / d p_j
};
RelativeJacobians relative_jacobians(const SE3Pose& pose_i,
                                     const SE3Pose& pose_j,
                                     const RelativeMeasurement& meas);

/// Reprojection residual of world point X into the camera at `pose`
/// (world <- camera): projected pixel minus observed pixel. Returns nullopt
/// when the point's camera-frame depth is not positive (excluded, not an
/// error).
std::optional<Vec2> reprojection_residual(const SE3Pose& pose,
                                          const Camera& cam, const Vec3& X,
                                          const Vec2& uv);

/// Jacobian blocks of the reprojection residual. Same validity rule as
/// reprojection_residual.
struct ReprojectionJacobians {
  Vec2 residual;
  Mat23 d_rot;    // d r / d theta (right multiplicative on the pose)
  Mat23 d_trans;  // d r / d p
  Mat23 d_point;  // d r / d X
};
std::optional<ReprojectionJacobians> reprojection_jacobians(
    const SE3Pose& pose, const Camera& cam, const Vec3& X, const Vec2& uv);

struct PosedObservation {
  SE3Pose world_from_camera;
  Camera camera;
  Vec2 uv;
};

struct TriangulationOptions {
  double max_reprojection_px = 4.0;  // reject above this error in any view
  double min_angle_deg = 1.0;        // reject below this max pairwise ray angle
};

/// Homogeneous DLT least squares over all observations. Returns nullopt for
/// degenerate geometry (fewer than 2 distinct centers, rays too parallel,
/// point at infinity or behind a camera) or when any view's reprojection
/// error exceeds the threshold.
std::optional<Vec3> triangulate_dlt(const std::vector<PosedObservation>& obs,
                                    const TriangulationOptions& options = {});

/// Joint refinement problem. Poses are world <- camera, indexed by camera id.
/// Landmarks with fewer than 2 valid observations are held fixed. Poses
/// listed in fixed_pose_ids keep their values (gauge fixing for prior-free
/// problems).
struct PoseGraphProblem {
  std::vector<SE3Pose> poses;
  std::vector<Camera> cameras;     // camera model per pose index; may be
                                   // empty when there are no landmarks
  std::vector<int> camera_index;   // pose -> cameras entry; empty means 1:1
  std::vector<PosePrior> priors;
  std::vector<RelativeMeasurement> relatives;
  std::vector<Landmark> landmarks;
  std::vector<int> fixed_pose_ids;
  double pixel_information = 1.0;  // isotropic weight on reprojection terms
};

struct SolveOptions {
  int max_iterations = 100;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double lambda_max = 1e12;
  double relative_cost_tol = 1e-8;
  double gradient_tol = 1e-10;
  // Declares convergence when the proposed step shrinks below
  // parameter_tol * (||x|| + 1): zero-residual problems bottom out at
  // machine-precision cost where the relative tests above cannot fire.
  double parameter_tol = 1e-12;
  double huber_delta_px = 2.0;  // robust kernel on reprojection terms only
  bool compute_final_hessian_spectrum = false;
};

struct IterationStats {
  int iteration = 0;
  double cost = 0.0;
  double prior_cost = 0.0;
  double relative_cost = 0.0;
  double reprojection_cost = 0.0;
  double lambda = 0.0;
  double gradient_norm = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
};

struct SolveReport {
  bool converged = false;
  std::string termination;  // relative_cost | gradient | step |
                            // max_iterations | lambda_exhausted
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<IterationStats> history;
  // Smallest eigenvalue of the undamped Gauss-Newton Hessian at the solution
  // over all free parameters; only filled when requested in SolveOptions.
  std::optional<double> hessian_min_eigenvalue;
};

/// Levenberg-Marquardt over all free poses and landmarks. Updates the
/// problem in place and keeps the best accepted iterate. Rotation updates
/// are right multiplicative (R <- R Exp(delta)); translations and landmark
/// positions are additive. The normal equations are solved by dense Cholesky
/// after eliminating landmarks via the Schur complement.
SolveReport solve(PoseGraphProblem& problem, const SolveOptions& options = {});

}  // namespace msplat
