#pragma once

#include "clusterseq/core/parameters.hpp"
#include "clusterseq/dataset.hpp"
#include "clusterseq/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace clusterseq {

struct MetaConfig {
  ModelConfig model;
  double alpha = 0.05;  // inner rate
  double beta = 0.005;  // meta rate
  int inner_steps = 1;
  int batch_size = 64;
  int epochs = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Labels transition weights (enc, dec, fc1-3) adapted and the item table plus
/// the clustering module shared. Any other name is a configuration error.
ParameterStore partition_parameters(ParameterStore store);

/// Initialized and partitioned parameters for `config`.
ParameterStore initial_parameters(const ModelConfig& config, Rng& rng);

/// `steps` gradient steps of the adapted parameters on the support loss with
/// the shared ones frozen. Returns the adapted subset; `theta` is untouched.
ParameterStore adapt(const ParameterStore& theta, const TaskEpisode& episode, const ModelConfig& config,
                     double alpha, int steps);

struct MetaStepLog {
  double query_loss = 0.0;  // sum over the batch
  double cluster_loss = 0.0;
  double total = 0.0;
  bool applied = false;
};

/// First-order gradient of sum L_Q + L_CM: gradients taken at the adapted
/// parameters are attributed to their unadapted names.
GradientMap meta_gradient(std::span<const TaskEpisode> batch, const ParameterStore& theta,
                          const MetaConfig& config, MetaStepLog* log = nullptr);

/// sum L_Q(adapt(theta)) + L_CM evaluated without gradients.
double meta_objective(std::span<const TaskEpisode> batch, const ParameterStore& theta, const MetaConfig& config);

/// theta -= beta * meta_gradient. A non-finite total leaves theta unchanged
/// and reports applied = false.
MetaStepLog meta_step(std::span<const TaskEpisode> batch, ParameterStore& theta, const MetaConfig& config);

struct EpochLog {
  int epoch = 0;
  double mean_query_loss = 0.0;
  double cluster_loss = 0.0;  // mean over batches
  double wall_seconds = 0.0;
};

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

struct TrainOptions {
  std::filesystem::path checkpoint;  // empty: no file written
  std::filesystem::path log;
  int checkpoint_every = 0;          // epochs; 0 writes only at the end
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  ParameterStore parameters;
  std::vector<EpochLog> log;
};

/// Each epoch shuffles the train users and runs one meta step per batch of
/// `batch_size` (a trailing batch of fewer than 2 users is skipped). All
/// randomness comes from config.seed.
TrainResult train(const Corpus& corpus, const MetaConfig& config, const TrainOptions& options = {});

/// Binary checkpoint, magic "CSEQ1". Values are stored as float32.
void save_checkpoint(const ParameterStore& store, std::ostream& out);
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
ParameterStore load_checkpoint(std::istream& in);
ParameterStore load_checkpoint(const std::filesystem::path& path);

/// Fails with a compatibility error unless `store` has exactly the
/// parameters and shapes `config` implies.
void check_compatible(const ParameterStore& store, const ModelConfig& config);

}  // namespace clusterseq
