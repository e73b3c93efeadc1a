#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rainrecon/datagen.hpp"
#include "rainrecon/model.hpp"
#include "rainrecon/objective.hpp"

namespace rainrecon {

struct TrainConfig {
  ModelConfig model;
  Ablation ablation;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;  // supervised queries per step
  double peak_lr = 5e-4;
  double weight_decay = 1e-2;
  double warmup_fraction = 0.3;
  double grad_clip = 1.0;       // global norm; 0 disables clipping
  LossConfig loss;
  double train_frac = 0.8;
  double mask_ratio = 0.2;      // held-out stations for evaluation
  double input_drop = 0.5;      // visible stations hidden from the input and supervised each step
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> mask_seed;  // station masking seed; defaults to seed

  void validate() const;
  std::uint64_t partition_seed() const { return mask_seed.value_or(seed); }
  double effective_lambda() const { return ablation.no_csta_geo ? 0.0 : loss.lambda; }
};

// Chronological split point plus the visible / held-out station partition.
struct Experiment {
  int train_end = 0;  // first test step
  StationPartition partition;
};

Experiment prepare_experiment(const Dataset& ds, double train_frac, double mask_ratio, std::uint64_t seed);

// Serializable model state.
struct Checkpoint {
  static constexpr int kVersion = 1;
  TrainConfig config;
  ModelLayout layout;
  std::size_t step = 0;
  std::map<std::string, std::pair<ag::Shape, std::vector<double>>> params;
};

Checkpoint make_checkpoint(const ReconstructionModel& model, const TrainConfig& config, std::size_t step);
std::unique_ptr<ReconstructionModel> restore_model(const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  std::unique_ptr<ReconstructionModel> model;
  Checkpoint checkpoint;
  std::vector<double> loss_curve;
};

// Learning rate at `step` of `total` under the one-cycle schedule: cosine
// warm-up from peak/25 to peak over the warm-up fraction, then cosine decay
// to peak/1e4.
double one_cycle_lr(std::size_t step, std::size_t total, double peak, double warmup_fraction);

// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Updates every parameter that received a gradient.
  void step(ParamStore& store, double lr);

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// Trains on the first train_frac of the steps using visible stations only.
// Throws DivergenceError when the loss becomes non-finite.
TrainResult train(const TrainConfig& cfg, const Dataset& ds);

// Rain field for a test step.
using FieldPredictor = std::function<RainField(int step)>;

// Scores the predictor at held-out stations over every test step with
// enough history (`min_history` earlier steps). Throws DomainError when no
// step qualifies.
MetricsReport evaluate_fields(const std::string& method, const Dataset& ds, const Experiment& exp,
                              const FieldPredictor& predictor, int min_history = 0);

MetricsReport evaluate(const ReconstructionModel& model, const Dataset& ds, const Experiment& exp,
                       const std::string& method = "rainrecon");

struct BaselineOptions {
  ZRParams zr;
  double tps_smoothing = 0.0;
  double idw_power = 2.0;
};

const std::vector<std::string>& baseline_methods();
// Throws UsageError for unknown methods.
MetricsReport run_baseline(const std::string& method, const Dataset& ds, const Experiment& exp,
                           const BaselineOptions& options = {});

}  // namespace rainrecon
