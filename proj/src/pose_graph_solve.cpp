#include "msplat/pose_graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace msplat {

namespace {

// Symmetric square root S of a PSD information matrix, so that the weighted
// residual S e reproduces e^T W e. Small negative eigenvalues from rounding
// are clamped; genuinely indefinite inputs are rejected.
Mat6 information_sqrt(const Mat6& info) {
  if (!info.allFinite()) {
    throw std::invalid_argument("information matrix must be finite");
  }
  const Mat6 sym = 0.5 * (info + info.transpose());
  Eigen::SelfAdjointEigenSolver<Mat6> es(sym);
  if (es.eigenvalues().minCoeff() < -1e-9) {
    throw std::invalid_argument("information matrix must be positive semidefinite");
  }
  const Vec6 root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double huber_cost(double norm, double delta) {
  if (norm <= delta) return norm * norm;
  return 2.0 * delta * norm - delta * delta;
}

// sqrt of the IRLS weight: residual and Jacobian are scaled by this factor so
// the Gauss-Newton step approximates the robust kernel.
double huber_sqrt_weight(double norm, double delta) {
  return (norm <= delta) ? 1.0 : std::sqrt(delta / norm);
}

struct Costs {
  double prior = 0.0;
  double relative = 0.0;
  double reproj = 0.0;
  double total() const { return prior + relative + reproj; }
};

struct State {
  std::vector<SE3Pose> poses;
  std::vector<Vec3> points;
};

struct LandmarkBlocks {
  Mat3 c = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  std::map<int, Mat63> couplings;  // free-pose block index -> E block
  bool frozen = false;             // held fixed for this linearization
};

class Solver {
 public:
  Solver(PoseGraphProblem& problem, const SolveOptions& options)
      : problem_(problem), options_(options) {
    validate();
    prepare();
  }

  SolveReport run();

 private:
  void validate() const;
  void prepare();
  const Camera& camera_of(int pose_id) const;
  Costs evaluate(const State& state) const;
  void linearize(const State& state);
  bool compute_step(double lambda, Eigen::VectorXd& delta_pose,
                    std::vector<Vec3>& delta_point) const;
  State apply_step(const State& state, const Eigen::VectorXd& delta_pose,
                   const std::vector<Vec3>& delta_point) const;
  double final_hessian_min_eigenvalue(const State& state);

  PoseGraphProblem& problem_;
  const SolveOptions& options_;

  std::vector<Mat6> prior_sqrt_;
  std::vector<Mat6> relative_sqrt_;
  double pixel_sqrt_ = 1.0;

  std::vector<int> pose_block_;   // pose id -> free block index, -1 if fixed
  int num_free_poses_ = 0;
  std::vector<bool> landmark_active_;  // >= 2 observations

  // Current linearization.
  Eigen::MatrixXd h_pose_;
  Eigen::VectorXd b_pose_;
  std::vector<LandmarkBlocks> lm_blocks_;
  double gradient_inf_ = 0.0;
};

void Solver::validate() const {
  const int n = static_cast<int>(problem_.poses.size());
  if (n == 0) throw std::invalid_argument("problem has no poses");
  auto check_id = [n](int id, const char* what) {
    if (id < 0 || id >= n) {
      throw std::invalid_argument(std::string(what) + " references pose id " +
                                  std::to_string(id) + " outside [0, " +
                                  std::to_string(n) + ")");
    }
  };
  for (const PosePrior& p : problem_.priors) check_id(p.camera_id, "prior");
  for (const RelativeMeasurement& m : problem_.relatives) {
    check_id(m.camera_i, "relative measurement");
    check_id(m.camera_j, "relative measurement");
    if (m.camera_i == m.camera_j) {
      throw std::invalid_argument("relative measurement must join two distinct poses");
    }
  }
  for (const Landmark& lm : problem_.landmarks) {
    for (const Observation& ob : lm.observations) check_id(ob.camera_id, "observation");
  }
  for (int id : problem_.fixed_pose_ids) check_id(id, "fixed pose list");

  if (!problem_.landmarks.empty()) {
    if (problem_.cameras.empty()) {
      throw std::invalid_argument("landmarks present but no camera models");
    }
    if (problem_.camera_index.empty()) {
      if (problem_.cameras.size() != 1 &&
          problem_.cameras.size() != problem_.poses.size()) {
        throw std::invalid_argument(
            "camera_index required unless one camera is shared or cameras map 1:1");
      }
    } else if (problem_.camera_index.size() != problem_.poses.size()) {
      throw std::invalid_argument("camera_index size must match poses");
    }
    for (int ci : problem_.camera_index) {
      if (ci < 0 || ci >= static_cast<int>(problem_.cameras.size())) {
        throw std::invalid_argument("camera_index entry out of range");
      }
    }
    for (const Camera& cam : problem_.cameras) cam.validate();
  }
  if (!(problem_.pixel_information >= 0.0)) {
    throw std::invalid_argument("pixel_information must be nonnegative");
  }
}

void Solver::prepare() {
  prior_sqrt_.reserve(problem_.priors.size());
  for (const PosePrior& p : problem_.priors) {
    prior_sqrt_.push_back(information_sqrt(p.information));
  }
  relative_sqrt_.reserve(problem_.relatives.size());
  for (const RelativeMeasurement& m : problem_.relatives) {
    relative_sqrt_.push_back(information_sqrt(m.information));
  }
  pixel_sqrt_ = std::sqrt(problem_.pixel_information);

  pose_block_.assign(problem_.poses.size(), 0);
  for (int id : problem_.fixed_pose_ids) pose_block_[id] = -1;
  num_free_poses_ = 0;
  for (auto& block : pose_block_) {
    if (block == 0) block = num_free_poses_++;
  }

  landmark_active_.resize(problem_.landmarks.size());
  for (size_t k = 0; k < problem_.landmarks.size(); ++k) {
    landmark_active_[k] = problem_.landmarks[k].observations.size() >= 2;
  }
}

const Camera& Solver::camera_of(int pose_id) const {
  if (!problem_.camera_index.empty()) {
    return problem_.cameras[problem_.camera_index[pose_id]];
  }
  if (problem_.cameras.size() == 1) return problem_.cameras[0];
  return problem_.cameras[pose_id];
}

Costs Solver::evaluate(const State& state) const {
  Costs costs;
  for (size_t i = 0; i < problem_.priors.size(); ++i) {
    const PosePrior& p = problem_.priors[i];
    const Residual6 r = prior_residual(state.poses[p.camera_id], p);
    costs.prior += (prior_sqrt_[i] * r).squaredNorm();
  }
  for (size_t i = 0; i < problem_.relatives.size(); ++i) {
    const RelativeMeasurement& m = problem_.relatives[i];
    const Residual6 r =
        relative_residual(state.poses[m.camera_i], state.poses[m.camera_j], m);
    costs.relative += (relative_sqrt_[i] * r).squaredNorm();
  }
  for (size_t k = 0; k < problem_.landmarks.size(); ++k) {
    if (!landmark_active_[k]) continue;
    for (const Observation& ob : problem_.landmarks[k].observations) {
      const auto r = reprojection_residual(state.poses[ob.camera_id],
                                           camera_of(ob.camera_id),
                                           state.points[k], ob.uv);
      if (!r) continue;  // behind-camera observations are excluded
      costs.reproj += huber_cost(pixel_sqrt_ * r->norm(), options_.huber_delta_px);
    }
  }
  return costs;
}

void Solver::linearize(const State& state) {
  const int np = 6 * num_free_poses_;
  h_pose_ = Eigen::MatrixXd::Zero(np, np);
  b_pose_ = Eigen::VectorXd::Zero(np);
  lm_blocks_.assign(problem_.landmarks.size(), LandmarkBlocks());
  gradient_inf_ = 0.0;

  auto add_pose_term = [&](int pose_id, const Mat6& jac, const Residual6& r) {
    const int block = pose_block_[pose_id];
    if (block < 0) return;
    h_pose_.block<6, 6>(6 * block, 6 * block) += jac.transpose() * jac;
    b_pose_.segment<6>(6 * block) -= jac.transpose() * r;
  };

  for (size_t i = 0; i < problem_.priors.size(); ++i) {
    const PosePrior& p = problem_.priors[i];
    const Residual6 r = prior_sqrt_[i] * prior_residual(state.poses[p.camera_id], p);
    const Mat6 jac = prior_sqrt_[i] * prior_jacobian(state.poses[p.camera_id], p);
    add_pose_term(p.camera_id, jac, r);
  }

  for (size_t i = 0; i < problem_.relatives.size(); ++i) {
    const RelativeMeasurement& m = problem_.relatives[i];
    const SE3Pose& pi = state.poses[m.camera_i];
    const SE3Pose& pj = state.poses[m.camera_j];
    const Residual6 r = relative_sqrt_[i] * relative_residual(pi, pj, m);
    const RelativeJacobians jacs = relative_jacobians(pi, pj, m);
    Mat6 ji, jj;
    ji.leftCols<3>() = jacs.d_rot_i;
    ji.rightCols<3>() = jacs.d_trans_i;
    jj.leftCols<3>() = jacs.d_rot_j;
    jj.rightCols<3>() = jacs.d_trans_j;
    ji = relative_sqrt_[i] * ji;
    jj = relative_sqrt_[i] * jj;

    const int bi = pose_block_[m.camera_i];
    const int bj = pose_block_[m.camera_j];
    if (bi >= 0) {
      h_pose_.block<6, 6>(6 * bi, 6 * bi) += ji.transpose() * ji;
      b_pose_.segment<6>(6 * bi) -= ji.transpose() * r;
    }
    if (bj >= 0) {
      h_pose_.block<6, 6>(6 * bj, 6 * bj) += jj.transpose() * jj;
      b_pose_.segment<6>(6 * bj) -= jj.transpose() * r;
    }
    if (bi >= 0 && bj >= 0) {
      h_pose_.block<6, 6>(6 * bi, 6 * bj) += ji.transpose() * jj;
      h_pose_.block<6, 6>(6 * bj, 6 * bi) += jj.transpose() * ji;
    }
  }

  for (size_t k = 0; k < problem_.landmarks.size(); ++k) {
    if (!landmark_active_[k]) continue;
    LandmarkBlocks& blocks = lm_blocks_[k];
    for (const Observation& ob : problem_.landmarks[k].observations) {
      const auto jac = reprojection_jacobians(state.poses[ob.camera_id],
                                              camera_of(ob.camera_id),
                                              state.points[k], ob.uv);
      if (!jac) continue;
      const double scale =
          pixel_sqrt_ *
          huber_sqrt_weight(pixel_sqrt_ * jac->residual.norm(), options_.huber_delta_px);
      const Vec2 r = scale * jac->residual;
      Mat26 j_pose;
      j_pose.leftCols<3>() = jac->d_rot;
      j_pose.rightCols<3>() = jac->d_trans;
      j_pose *= scale;
      const Mat23 j_point = scale * jac->d_point;

      const int block = pose_block_[ob.camera_id];
      if (block >= 0) {
        h_pose_.block<6, 6>(6 * block, 6 * block) += j_pose.transpose() * j_pose;
        b_pose_.segment<6>(6 * block) -= j_pose.transpose() * r;
        auto [it, inserted] = blocks.couplings.try_emplace(block, Mat63::Zero());
        it->second += j_pose.transpose() * j_point;
      }
      blocks.c += j_point.transpose() * j_point;
      blocks.b -= j_point.transpose() * r;
    }
  }

  gradient_inf_ = b_pose_.size() > 0 ? b_pose_.lpNorm<Eigen::Infinity>() : 0.0;
  for (size_t k = 0; k < lm_blocks_.size(); ++k) {
    if (!landmark_active_[k]) continue;
    gradient_inf_ = std::max(gradient_inf_,
                             lm_blocks_[k].b.lpNorm<Eigen::Infinity>());
  }
}

bool Solver::compute_step(double lambda, Eigen::VectorXd& delta_pose,
                          std::vector<Vec3>& delta_point) const {
  const int np = 6 * num_free_poses_;
  Eigen::MatrixXd schur = h_pose_;
  Eigen::VectorXd rhs = b_pose_;
  schur.diagonal() *= (1.0 + lambda);

  std::vector<Mat3> c_inv(problem_.landmarks.size(), Mat3::Zero());
  std::vector<bool> frozen(problem_.landmarks.size(), false);
  for (size_t k = 0; k < lm_blocks_.size(); ++k) {
    if (!landmark_active_[k]) continue;
    Mat3 c = lm_blocks_[k].c;
    c.diagonal() *= (1.0 + lambda);
    Eigen::LLT<Mat3> llt(c);
    if (llt.info() != Eigen::Success) {
      frozen[k] = true;  // degenerate this round; landmark does not move
      continue;
    }
    c_inv[k] = llt.solve(Mat3::Identity());

    const Vec3 ci_b = c_inv[k] * lm_blocks_[k].b;
    for (const auto& [bi, ei] : lm_blocks_[k].couplings) {
      rhs.segment<6>(6 * bi) -= ei * ci_b;
      for (const auto& [bj, ej] : lm_blocks_[k].couplings) {
        schur.block<6, 6>(6 * bi, 6 * bj) -= ei * c_inv[k] * ej.transpose();
      }
    }
  }

  delta_pose.resize(np);
  if (np > 0) {
    const Eigen::LLT<Eigen::MatrixXd> llt(schur);
    if (llt.info() != Eigen::Success) return false;
    delta_pose = llt.solve(rhs);
    if (!delta_pose.allFinite()) return false;
  }

  delta_point.assign(problem_.landmarks.size(), Vec3::Zero());
  for (size_t k = 0; k < lm_blocks_.size(); ++k) {
    if (!landmark_active_[k] || frozen[k]) continue;
    Vec3 acc = lm_blocks_[k].b;
    for (const auto& [bi, ei] : lm_blocks_[k].couplings) {
      acc -= ei.transpose() * delta_pose.segment<6>(6 * bi);
    }
    delta_point[k] = c_inv[k] * acc;
    if (!delta_point[k].allFinite()) return false;
  }
  return true;
}

State Solver::apply_step(const State& state, const Eigen::VectorXd& delta_pose,
                         const std::vector<Vec3>& delta_point) const {
  State next = state;
  for (size_t id = 0; id < next.poses.size(); ++id) {
    const int block = pose_block_[id];
    if (block < 0) continue;
    const Vec3 dtheta = delta_pose.segment<3>(6 * block);
    const Vec3 dp = delta_pose.segment<3>(6 * block + 3);
    next.poses[id].rotation = next.poses[id].rotation * so3_exp(dtheta);
    next.poses[id].translation += dp;
  }
  for (size_t k = 0; k < next.points.size(); ++k) {
    next.points[k] += delta_point[k];
  }
  return next;
}

double Solver::final_hessian_min_eigenvalue(const State& state) {
  linearize(state);
  int active = 0;
  std::vector<int> lm_offset(problem_.landmarks.size(), -1);
  for (size_t k = 0; k < lm_blocks_.size(); ++k) {
    if (landmark_active_[k]) lm_offset[k] = active++;
  }
  const int np = 6 * num_free_poses_;
  const int dim = np + 3 * active;
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(dim, dim);
  full.topLeftCorner(np, np) = h_pose_;
  for (size_t k = 0; k < lm_blocks_.size(); ++k) {
    if (lm_offset[k] < 0) continue;
    const int col = np + 3 * lm_offset[k];
    full.block<3, 3>(col, col) = lm_blocks_[k].c;
    for (const auto& [bi, ei] : lm_blocks_[k].couplings) {
      full.block<6, 3>(6 * bi, col) = ei;
      full.block<3, 6>(col, 6 * bi) = ei.transpose();
    }
  }
  if (dim == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full,
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

SolveReport Solver::run() {
  State state;
  state.poses = problem_.poses;
  state.points.reserve(problem_.landmarks.size());
  for (const Landmark& lm : problem_.landmarks) state.points.push_back(lm.point);

  SolveReport report;
  Costs costs = evaluate(state);
  report.initial_cost = costs.total();

  double lambda = options_.lambda_init;
  bool need_linearize = true;
  int iteration = 0;
  while (iteration < options_.max_iterations) {
    if (need_linearize) {
      linearize(state);
      need_linearize = false;
      if (gradient_inf_ < options_.gradient_tol) {
        report.converged = true;
        report.termination = "gradient";
        break;
      }
    }

    ++iteration;
    IterationStats stats;
    stats.iteration = iteration;
    stats.lambda = lambda;
    stats.gradient_norm = gradient_inf_;

    Eigen::VectorXd delta_pose;
    std::vector<Vec3> delta_point;
    const bool solved = compute_step(lambda, delta_pose, delta_point);
    bool ok = solved;
    double step_norm_sq = 0.0;
    Costs trial_costs;
    State trial;
    if (ok) {
      trial = apply_step(state, delta_pose, delta_point);
      trial_costs = evaluate(trial);
      ok = std::isfinite(trial_costs.total()) &&
           trial_costs.total() < costs.total();
      step_norm_sq = delta_pose.squaredNorm();
      for (const Vec3& d : delta_point) step_norm_sq += d.squaredNorm();
      stats.step_norm = std::sqrt(step_norm_sq);
    }

    double previous = costs.total();
    if (ok) {
      state = std::move(trial);
      costs = trial_costs;
      need_linearize = true;
      lambda = std::max(lambda * options_.lambda_down, 1e-12);
    }
    stats.accepted = ok;
    stats.cost = costs.total();
    stats.prior_cost = costs.prior;
    stats.relative_cost = costs.relative;
    stats.reprojection_cost = costs.reproj;
    report.history.push_back(stats);

    if (solved) {
      double x_norm_sq = 0.0;
      for (size_t id = 0; id < state.poses.size(); ++id) {
        if (pose_block_[id] >= 0) {
          x_norm_sq += state.poses[id].translation.squaredNorm();
        }
      }
      for (size_t k = 0; k < state.points.size(); ++k) {
        if (landmark_active_[k]) x_norm_sq += state.points[k].squaredNorm();
      }
      const double threshold =
          options_.parameter_tol * (std::sqrt(x_norm_sq) + 1.0);
      if (stats.step_norm <= threshold) {
        report.converged = true;
        report.termination = "step";
        break;
      }
    }

    if (ok) {
      if (previous - costs.total() <= options_.relative_cost_tol *
                                          std::max(previous, 1e-300)) {
        report.converged = true;
        report.termination = "relative_cost";
        break;
      }
    } else {
      lambda *= options_.lambda_up;
      if (lambda > options_.lambda_max) {
        report.termination = "lambda_exhausted";
        break;
      }
    }
  }
  if (report.termination.empty()) {
    report.termination = "max_iterations";
  }

  report.iterations = iteration;
  report.final_cost = costs.total();
  problem_.poses = state.poses;
  for (size_t k = 0; k < problem_.landmarks.size(); ++k) {
    problem_.landmarks[k].point = state.points[k];
  }
  if (options_.compute_final_hessian_spectrum) {
    report.hessian_min_eigenvalue = final_hessian_min_eigenvalue(state);
  }
  return report;
}

}  // namespace

SolveReport solve(PoseGraphProblem& problem, const SolveOptions& options) {
  Solver solver(problem, options);
  return solver.run();
}

}  // namespace msplat
