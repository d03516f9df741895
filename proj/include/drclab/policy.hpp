#pragma once

// Behaviour-cloning policies with receding-horizon action chunks.
//
// The regressor maps an observation to `horizon` future poses. Positions and
// orientations are predicted relative to the current gripper pose, the
// gripper channel absolutely. Executors consume the first `execute_steps`
// poses before querying again.
//
// Training minimises the mean squared error over two pools, pretraining
// demonstrations and corrected rollouts, with every minibatch split exactly
// in half between them (all from the demonstrations while no corrections
// exist yet).

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "drclab/domain.hpp"

namespace drc::policy {

inline constexpr int kActionChannels = 7;
inline constexpr int kFeatureCount = 19;

// Input features derived from an observation.
std::vector<double> features(const Observation& obs);

// Interface shared by the executor for every kind of policy.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<Pose7> predict(const Observation& obs) const = 0;
  virtual int horizon() const = 0;
  virtual int execute_steps() const = 0;
};

// ---------------------------------------------------------------------------
// Feed-forward regressor

PolicyParams init_params(const std::vector<int>& hidden_widths,
                         std::uint64_t seed, int horizon = 16,
                         int execute_steps = 8);

// Raw network output in action units (relative position/orientation,
// absolute gripper), horizon * 7 values.
std::vector<double> forward_raw(const PolicyParams& params,
                                const Observation& obs);

std::vector<Pose7> predict(const PolicyParams& params, const Observation& obs);

class MlpPolicy final : public Policy {
 public:
  explicit MlpPolicy(PolicyParams params);
  std::vector<Pose7> predict(const Observation& obs) const override;
  int horizon() const override { return params_.horizon; }
  int execute_steps() const override { return params_.execute_steps; }
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

// A training pair: observation and the `horizon` poses executed from it.
struct Sample {
  Observation observation;
  std::vector<Pose7> actions;
  DatasetLabel provenance = DatasetLabel::kPretraining;
  std::size_t trajectory_index = 0;
};

using Batch = std::vector<Sample>;

// Observation at `t` with the applied actions t..t+horizon-1; windows that
// run off the end repeat the final action.
Sample slice_window(const Trajectory& traj, std::size_t t, int horizon,
                    DatasetLabel provenance, std::size_t trajectory_index);

// Encodes a sample's poses the way the network predicts them.
std::vector<double> encode_targets(const Sample& sample);

double loss(const PolicyParams& params, std::span<const Sample> batch);

// Loss and its gradient with respect to params.weights.
double loss_and_gradient(const PolicyParams& params,
                         std::span<const Sample> batch,
                         std::vector<double>& gradient);

Batch make_batch(const Dataset& dp, const Dataset& dh, int batch_size,
                 Rng& rng, int horizon = 16);

// Re-expresses the network under new normalization statistics without
// changing the function it computes.
PolicyParams renormalize(const PolicyParams& params, const Normalization& obs,
                         const Normalization& act);

// Statistics over every window of both pools.
std::pair<Normalization, Normalization> fit_normalization(const Dataset& dp,
                                                          const Dataset& dh,
                                                          int horizon);

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  int horizon = 16;
  int execute_steps = 8;
  Optimizer optimizer = Optimizer::kAdam;
  // Cosine decay from learning_rate to zero over the run when set.
  bool cosine_decay = true;
  int eval_batch_size = 256;

  bool operator==(const TrainConfig&) const = default;
};

ValidationReport validate(const TrainConfig& cfg);

struct TrainResult {
  PolicyParams params;
  // Loss on a fixed evaluation batch after every epoch.
  std::vector<double> epoch_losses;
  double first_epoch_loss() const { return epoch_losses.front(); }
  double final_epoch_loss() const { return epoch_losses.back(); }
};

TrainResult train(const PolicyParams& params, const Dataset& dp,
                  const Dataset& dh, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Nearest-trajectory retrieval baseline

class NearestTrajectoryPolicy final : public Policy {
 public:
  NearestTrajectoryPolicy(std::vector<Dataset> datasets, int horizon = 16,
                          int execute_steps = 8);
  std::vector<Pose7> predict(const Observation& obs) const override;
  int horizon() const override { return horizon_; }
  int execute_steps() const override { return execute_steps_; }

 private:
  struct Entry {
    std::vector<double> key;
    std::size_t dataset;
    std::size_t trajectory;
    std::size_t step;
  };
  std::vector<Dataset> datasets_;
  std::vector<Entry> entries_;
  int horizon_;
  int execute_steps_;
};

}  // namespace drc::policy
