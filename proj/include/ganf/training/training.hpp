#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ganf/dag/dag.hpp"
#include "ganf/data/data.hpp"
#include "ganf/model/model.hpp"

namespace ganf::training {

enum class ClipMode { kGlobalNorm, kElementwise };

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.1;
  double grad_clip = 1.0;
  ClipMode clip_mode = ClipMode::kGlobalNorm;
  std::size_t batch_size = 32;
  std::size_t inner_epochs = 10;
  std::size_t max_outer_iters = 20;
  double h_tol = 1e-8;
  double eta = 10.0;
  double gamma = 0.5;
  /// Stale validation epochs before the learning rate decays.
  std::size_t plateau_patience = 3;
  /// Plateau decay never takes the learning rate below this.
  double min_lr = 1e-5;
  std::uint64_t seed = 0;
  /// Where last_good.ckpt goes if training diverges; empty disables the dump.
  std::filesystem::path checkpoint_dir;
};

/// Throws ConfigError naming the first invalid field.
void validate(const TrainConfig& cfg);

/// Adam with bias correction; moments mirror the parameter shapes.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from `grads` (same order and sizes as the parameters).
  void step(const std::vector<std::vector<double>>& grads);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<NamedTensor> params_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Clips in place and returns the factor applied to a global-norm clip
/// (1 when nothing was clipped; elementwise mode also returns 1).
double clip_gradients(std::vector<std::vector<double>>& grads, double clip, ClipMode mode);

struct HistoryRecord {
  /// "epoch", "outer" or "lr_decay".
  std::string kind;
  std::size_t outer = 0;
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double train_loss = 0.0;
  double val_log_density = 0.0;
  double h = 0.0;
  double lambda = 0.0;
  double penalty = 0.0;
  double lr = 0.0;
};

std::string to_json_line(const HistoryRecord& r);

struct TrainResult {
  std::vector<HistoryRecord> history;
  dag::LagrangianState lagrangian;
  bool converged = false;
  /// Set when the outer budget ran out with |h| >= h_tol.
  bool warning = false;
  double final_h = 0.0;
  double best_val_log_density = 0.0;
  std::size_t outer_iterations = 0;
};

using HistorySink = std::function<void(const HistoryRecord&)>;

/// Mean log-density per window.
double mean_log_density(const model::GanfModel& m, const std::vector<data::MultiSeriesWindow>& windows);

/// Augmented-Lagrangian training. Leaves `m` at the selected snapshot.
TrainResult train(model::GanfModel& m, const std::vector<data::MultiSeriesWindow>& train_windows,
                  const std::vector<data::MultiSeriesWindow>& val_windows, const TrainConfig& cfg,
                  const HistorySink& sink = {});

/// Everything beyond the parameters that a checkpoint carries.
struct CheckpointMeta {
  std::size_t window_len = 0;
  std::optional<data::NormalizationStats> stats;
  dag::LagrangianState lagrangian;
  /// Free-form resolved run configuration (JSON text).
  std::string run_config = "{}";
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const model::GanfModel& m, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<model::GanfModel> model;
  CheckpointMeta meta;
};

/// Reads and validates the whole file before building anything. When
/// `expected` is given, array shapes are checked against a model built from
/// it and the first mismatch is reported by name.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected = nullptr);

}  // namespace ganf::training
