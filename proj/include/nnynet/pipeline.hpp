#pragma once
// Experiment plumbing: configuration, checkpoints, dataset assembly, the
// training loop, evaluation and the fusion ablation.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnynet/impute.hpp"
#include "nnynet/inference.hpp"
#include "nnynet/loss.hpp"
#include "nnynet/metrics.hpp"
#include "nnynet/network.hpp"
#include "nnynet/optim.hpp"
#include "nnynet/preprocess.hpp"
#include "nnynet/synthetic.hpp"

namespace nnynet::pipeline {

struct DataConfig {
  std::string root;   // directory of <id>.nrrd / <id>.seg.nrrd pairs; empty -> synthetic
  std::string table;  // patient table (CSV), required with root
  std::size_t synthetic_cases = 1;
  std::vector<std::size_t> synthetic_shape{16, 16, 16};
  std::uint64_t synthetic_seed = 0;  // 0 -> derived from the run seed
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t num_classes = 3;
  DataConfig data;
  preprocess::PreprocessConfig preprocess;
  bool augment_enabled = false;
  preprocess::AugmentConfig augment;
  NetworkConfig network;  // tab_features and num_classes are kept in sync
  loss::LossConfig loss;
  AdamConfig optimizer;
  std::size_t steps = 300;   // optimizer steps; 0 -> epochs * batches per epoch
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  double sliding_overlap = 0.5;
  inference::ComponentPolicy components;

  // Desk-scale defaults used when no config file is given.
  static PipelineConfig desk();
  void validate() const;
};

nlohmann::ordered_json to_json(const PipelineConfig& cfg);
// Missing keys keep their defaults; unknown keys are an error.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::string config;  // canonical JSON of the run config
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> buffers;  // dataset statistics

  const Tensor<float>& buffer(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);
// Fails when the checkpoint's config snapshot differs from `expected`.
void require_config_match(const Checkpoint& ck, const PipelineConfig& expected);

Checkpoint make_checkpoint(const SegmentationNetwork<float>& net, const PipelineConfig& cfg, std::uint64_t step,
                           const std::mt19937_64& rng, std::vector<NamedTensor> buffers);
// Copies parameter values into `net` (names and shapes must match).
void restore_parameters(SegmentationNetwork<float>& net, const Checkpoint& ck);

struct Case {
  Volume volume;
  LabelMask mask;
  io::PatientRecord record;
};

std::vector<Case> load_cases(const PipelineConfig& cfg);

// Dataset-level preprocessing state.
struct DatasetStats {
  Vec3 target_spacing{1, 1, 1};
  preprocess::Extent3 patch{16, 16, 16};
  preprocess::IntensityStats intensity;
  std::vector<double> tab_mean, tab_std;

  std::vector<NamedTensor> to_buffers() const;
  static DatasetStats from_buffers(const Checkpoint& ck);
};

DatasetStats fit_dataset_stats(const std::vector<Case>& cases, const PipelineConfig& cfg);

struct PreparedCase {
  Tensor<float> image;  // cropped, resampled, normalized
  Tensor<int> mask;
  Tensor<float> tab;    // standardized features
  preprocess::CropBox box;
  Vec3 spacing{1, 1, 1};
};

PreparedCase prepare_case(const Case& c, const DatasetStats& stats, const PipelineConfig& cfg);
Tensor<float> standardize_tab(const io::PatientRecord& r, const DatasetStats& stats);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
  std::size_t steps = 0;
};

struct TrainHooks {
  // Called after each optimizer step; returning false stops training.
  std::function<bool(std::size_t step, double loss, const SegmentationNetwork<float>& net)> on_step;
};

TrainResult train(const PipelineConfig& cfg, const std::vector<Case>& cases, const TrainHooks& hooks = {});
TrainResult train(const PipelineConfig& cfg, const TrainHooks& hooks = {});

struct CasePrediction {
  std::string id;
  Tensor<int> labels;  // in the prepared (cropped/resampled) grid
  metrics::SegmentationReport report;
};

struct EvaluationResult {
  std::vector<CasePrediction> cases;
  metrics::SegmentationReport aggregate;
};

// Logits-free label prediction for one prepared case.
Tensor<int> predict_labels(const SegmentationNetwork<float>& net, const PreparedCase& pc, const PipelineConfig& cfg,
                           const DatasetStats& stats);

EvaluationResult evaluate(const PipelineConfig& cfg, const SegmentationNetwork<float>& net, const DatasetStats& stats,
                          const std::vector<Case>& cases);
EvaluationResult evaluate(const PipelineConfig& cfg, const Checkpoint& ck, const std::vector<Case>& cases);

// Full-resolution label mask for a raw volume and patient record.
LabelMask predict_volume(const PipelineConfig& cfg, const Checkpoint& ck, const Volume& v,
                         const io::PatientRecord& record);

struct AblationRow {
  fusion::FusionMode mode;
  metrics::ReportRow total;
  double final_loss = 0.0;
};

// Trains and evaluates add, concat and cross-attention under one seed and dataset.
std::vector<AblationRow> ablate_fusion(const PipelineConfig& cfg);
std::string ablation_table(const std::vector<AblationRow>& rows, char sep = ',');

}  // namespace nnynet::pipeline
