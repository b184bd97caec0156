#include "nnynet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace nnynet::pipeline {

namespace {

std::uint64_t data_seed(const PipelineConfig& cfg) {
  return cfg.data.synthetic_seed != 0 ? cfg.data.synthetic_seed : cfg.seed;
}

Shape shape3(const std::vector<std::size_t>& v) { return Shape(v.begin(), v.end()); }

float as_f32(double v) { return static_cast<float>(v); }

Tensor<float> vec_tensor(const std::vector<double>& v) {
  Tensor<float> t({v.size()}, 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = as_f32(v[i]);
  return t;
}

LabelMask blank_mask(const Volume& v) {
  LabelMask m;
  m.grid = Tensor<int>(v.grid.shape(), 0);
  m.spacing = v.spacing;
  m.origin = v.origin;
  return m;
}

// Nearest-neighbour map from a grid at spacing `from` onto `shape` at spacing `to`.
Tensor<int> labels_onto(const Tensor<int>& src, const Vec3& from, const Shape& shape, const Vec3& to) {
  Tensor<int> out(shape, 0);
  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t j = 0; j < shape[a]; ++j) {
      const double x = static_cast<double>(j) * to[a] / from[a];
      idx[a].push_back(std::min(static_cast<std::size_t>(std::llround(x)), src.extent(a) - 1));
    }
  }
  for (std::size_t x = 0; x < shape[0]; ++x) {
    for (std::size_t y = 0; y < shape[1]; ++y) {
      for (std::size_t z = 0; z < shape[2]; ++z) out.at(x, y, z) = src.at(idx[0][x], idx[1][y], idx[2][z]);
    }
  }
  return out;
}

}  // namespace

std::vector<Case> load_cases(const PipelineConfig& cfg) {
  std::vector<Case> cases;
  if (cfg.data.root.empty()) {
    for (auto& s : synthetic::synth_dataset(data_seed(cfg), cfg.data.synthetic_cases, shape3(cfg.data.synthetic_shape),
                                            cfg.num_classes)) {
      cases.push_back({std::move(s.volume), std::move(s.mask), std::move(s.record)});
    }
    return cases;
  }
  namespace fs = std::filesystem;
  const io::PatientTable table = io::load_table(io::read_file(cfg.data.table));
  if (table.feature_count() != cfg.network.tab_features) {
    throw std::runtime_error("table has " + std::to_string(table.feature_count()) + " features, config expects " +
                             std::to_string(cfg.network.tab_features));
  }
  const auto imputed = impute::impute_all(table.records, impute::ImputerRegistry::defaults(cfg.seed));
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(cfg.data.root)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".seg.nrrd";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw std::runtime_error("no *.seg.nrrd files under '" + cfg.data.root + "'");
  for (const auto& id : ids) {
    Case c;
    c.volume = io::load_volume((fs::path(cfg.data.root) / (id + ".nrrd")).string());
    c.mask = io::load_label_mask((fs::path(cfg.data.root) / (id + ".seg.nrrd")).string());
    if (c.mask.max_label() >= static_cast<int>(cfg.num_classes)) {
      throw std::runtime_error("case '" + id + "' has labels beyond num_classes");
    }
    bool found = false;
    for (const auto& r : imputed.records) {
      if (r.id == id) {
        c.record = r;
        found = true;
      }
    }
    if (!found) throw std::runtime_error("no table row for case '" + id + "'");
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<NamedTensor> DatasetStats::to_buffers() const {
  return {{"stats.target_spacing", vec_tensor({target_spacing[0], target_spacing[1], target_spacing[2]})},
          {"stats.patch", vec_tensor({double(patch[0]), double(patch[1]), double(patch[2])})},
          {"stats.intensity", vec_tensor({intensity.lo, intensity.hi, intensity.mean, intensity.std})},
          {"stats.tab_mean", vec_tensor(tab_mean)},
          {"stats.tab_std", vec_tensor(tab_std)}};
}

DatasetStats DatasetStats::from_buffers(const Checkpoint& ck) {
  DatasetStats s;
  const auto& sp = ck.buffer("stats.target_spacing");
  const auto& pt = ck.buffer("stats.patch");
  const auto& in = ck.buffer("stats.intensity");
  for (std::size_t a = 0; a < 3; ++a) {
    s.target_spacing[a] = sp[a];
    s.patch[a] = static_cast<std::size_t>(pt[a]);
  }
  s.intensity = {in[0], in[1], in[2], in[3]};
  for (float v : ck.buffer("stats.tab_mean").data()) s.tab_mean.push_back(v);
  for (float v : ck.buffer("stats.tab_std").data()) s.tab_std.push_back(v);
  return s;
}

DatasetStats fit_dataset_stats(const std::vector<Case>& cases, const PipelineConfig& cfg) {
  if (cases.empty()) throw ContractError("fit_dataset_stats: no cases");
  DatasetStats s;
  std::vector<Vec3> spacings;
  for (const auto& c : cases) spacings.push_back(c.volume.spacing);
  s.target_spacing = cfg.preprocess.target_spacing ? *cfg.preprocess.target_spacing : preprocess::median_spacing(spacings);
  for (double& v : s.target_spacing) v = as_f32(v);

  std::vector<Volume> prepared;
  std::vector<Shape> shapes;
  for (const auto& c : cases) {
    const auto crop = preprocess::crop_foreground(c.volume, c.mask, cfg.preprocess);
    prepared.push_back(preprocess::resample(crop.volume, s.target_spacing));
    shapes.push_back(prepared.back().grid.shape());
  }
  const preprocess::Extent3 scale =
      cfg.preprocess.standard_scale ? *cfg.preprocess.standard_scale : preprocess::median_extent(shapes);
  s.patch = preprocess::patch_extent(scale, cfg.preprocess.patch_scale_factor);
  const std::size_t mult = cfg.network.input_multiple();
  for (auto& e : s.patch) e = std::max(mult, (e + mult - 1) / mult * mult);

  std::vector<const Volume*> ptrs;
  for (const auto& v : prepared) ptrs.push_back(&v);
  s.intensity = preprocess::intensity_stats(ptrs, cfg.preprocess);
  s.intensity = {as_f32(s.intensity.lo), as_f32(s.intensity.hi), as_f32(s.intensity.mean), as_f32(s.intensity.std)};

  const std::size_t f = cfg.network.tab_features;
  s.tab_mean.assign(f, 0.0);
  s.tab_std.assign(f, 1.0);
  for (std::size_t k = 0; k < f; ++k) {
    double sum = 0.0, sq = 0.0;
    for (const auto& c : cases) {
      if (c.record.features.size() != f) throw ContractError("record '" + c.record.id + "' has the wrong feature count");
      sum += c.record.features[k];
    }
    const double mean = sum / static_cast<double>(cases.size());
    for (const auto& c : cases) sq += (c.record.features[k] - mean) * (c.record.features[k] - mean);
    const double sd = std::sqrt(sq / static_cast<double>(cases.size()));
    s.tab_mean[k] = as_f32(mean);
    s.tab_std[k] = sd > 1e-6 ? as_f32(sd) : 1.0;
  }
  return s;
}

Tensor<float> standardize_tab(const io::PatientRecord& r, const DatasetStats& stats) {
  if (r.features.size() != stats.tab_mean.size()) {
    throw ShapeError("record '" + r.id + "' has " + std::to_string(r.features.size()) + " features, expected " +
                     std::to_string(stats.tab_mean.size()));
  }
  Tensor<float> t({r.features.size()}, 0.0f);
  for (std::size_t k = 0; k < r.features.size(); ++k) {
    t[k] = static_cast<float>((r.features[k] - stats.tab_mean[k]) / stats.tab_std[k]);
  }
  return t;
}

PreparedCase prepare_case(const Case& c, const DatasetStats& stats, const PipelineConfig& cfg) {
  PreparedCase p;
  const auto crop = preprocess::crop_foreground(c.volume, c.mask, cfg.preprocess);
  p.box = crop.box;
  const Volume v = preprocess::resample(crop.volume, stats.target_spacing);
  const LabelMask m = preprocess::resample(crop.mask, stats.target_spacing);
  p.image = preprocess::clip_normalize(v, stats.intensity).grid;
  p.mask = m.grid;
  p.tab = standardize_tab(c.record, stats);
  p.spacing = stats.target_spacing;
  return p;
}

namespace {

struct TrainItem {
  Tensor<float> image;
  Tensor<int> mask;
  Tensor<float> tab;
};

std::string parameter_norms(const SegmentationNetwork<float>& net) {
  std::ostringstream os;
  for (const auto& [name, var] : net.parameters().entries()) {
    double sq = 0.0;
    for (float v : var.value().data()) sq += static_cast<double>(v) * v;
    os << "\n  " << name << ": " << std::sqrt(sq);
  }
  return os.str();
}

}  // namespace

TrainResult train(const PipelineConfig& cfg, const std::vector<Case>& cases, const TrainHooks& hooks) {
  cfg.validate();
  const DatasetStats stats = fit_dataset_stats(cases, cfg);
  std::vector<TrainItem> items;
  for (const auto& c : cases) {
    const PreparedCase pc = prepare_case(c, stats, cfg);
    Volume v;
    v.grid = pc.image;
    LabelMask m;
    m.grid = pc.mask;
    for (auto& patch : preprocess::extract_patches(v, m, stats.patch)) {
      items.push_back({std::move(patch.image), std::move(patch.mask), pc.tab});
    }
  }

  SegmentationNetwork<float> net(cfg.network, cfg.seed);
  std::vector<Var<float>> params;
  for (const auto& [name, var] : net.parameters().entries()) params.push_back(var);
  Adam<float> adam(params, cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);

  const std::size_t batches_per_epoch = (items.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.steps != 0 ? cfg.steps : cfg.epochs * batches_per_epoch;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  auto next_item = [&]() -> const TrainItem& {
    if (cursor == order.size()) {
      order.resize(items.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return items[order[cursor++]];
  };

  TrainResult result;
  for (std::size_t step = 1; step <= total; ++step) {
    Var<float> batch_loss;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const TrainItem& item = next_item();
      Tensor<float> image = item.image;
      Tensor<int> mask = item.mask;
      if (cfg.augment_enabled) preprocess::augment(image, mask, cfg.augment, rng);
      const Var<float> logits = net.forward(Var<float>::constant(image), Var<float>::constant(item.tab));
      const Var<float> l = loss::segmentation_loss(logits, mask, cfg.loss);
      batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
    }
    if (cfg.batch_size > 1) batch_loss = scale(batch_loss, 1.0f / static_cast<float>(cfg.batch_size));
    const double value = batch_loss.value().item();
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) + "; parameter norms:" + parameter_norms(net));
    }
    adam.step(backward(batch_loss));
    result.losses.push_back(value);
    result.steps = step;
    if (hooks.on_step && !hooks.on_step(step, value, net)) break;
  }
  result.checkpoint = make_checkpoint(net, cfg, result.steps, rng, stats.to_buffers());
  return result;
}

TrainResult train(const PipelineConfig& cfg, const TrainHooks& hooks) { return train(cfg, load_cases(cfg), hooks); }

Tensor<int> predict_labels(const SegmentationNetwork<float>& net, const PreparedCase& pc, const PipelineConfig& cfg,
                           const DatasetStats& stats) {
  inference::SlidingWindowPlan plan;
  plan.patch = stats.patch;
  plan.overlap = cfg.sliding_overlap;
  const Tensor<float> tab = pc.tab;
  const inference::WindowModel<float> model = [&](const Tensor<float>& patch, std::size_t) {
    return net.predict(patch, tab);
  };
  const Tensor<float> logits = inference::sliding_predict(pc.image, model, plan);
  return inference::merge_small(inference::argmax(logits), cfg.components);
}

EvaluationResult evaluate(const PipelineConfig& cfg, const SegmentationNetwork<float>& net, const DatasetStats& stats,
                          const std::vector<Case>& cases) {
  if (cases.empty()) throw ContractError("evaluate: no cases");
  EvaluationResult out;
  std::vector<metrics::SegmentationReport> reports;
  for (const auto& c : cases) {
    const PreparedCase pc = prepare_case(c, stats, cfg);
    CasePrediction p;
    p.id = c.record.id;
    p.labels = predict_labels(net, pc, cfg, stats);
    p.report = metrics::report(p.labels, pc.mask, cfg.num_classes, pc.spacing);
    reports.push_back(p.report);
    out.cases.push_back(std::move(p));
  }
  out.aggregate = metrics::average_reports(reports);
  return out;
}

EvaluationResult evaluate(const PipelineConfig& cfg, const Checkpoint& ck, const std::vector<Case>& cases) {
  require_config_match(ck, cfg);
  SegmentationNetwork<float> net(cfg.network, cfg.seed);
  restore_parameters(net, ck);
  return evaluate(cfg, net, DatasetStats::from_buffers(ck), cases);
}

LabelMask predict_volume(const PipelineConfig& cfg, const Checkpoint& ck, const Volume& v,
                         const io::PatientRecord& record) {
  require_config_match(ck, cfg);
  SegmentationNetwork<float> net(cfg.network, cfg.seed);
  restore_parameters(net, ck);
  const DatasetStats stats = DatasetStats::from_buffers(ck);
  const Case c{v, blank_mask(v), record};
  const PreparedCase pc = prepare_case(c, stats, cfg);
  const Tensor<int> labels = predict_labels(net, pc, cfg, stats);
  LabelMask cropped;
  cropped.grid = labels_onto(labels, stats.target_spacing, pc.box.extent(), v.spacing);
  cropped.spacing = v.spacing;
  LabelMask out = preprocess::uncrop(cropped, pc.box, 0);
  out.spacing = v.spacing;
  out.origin = v.origin;
  return out;
}

std::vector<AblationRow> ablate_fusion(const PipelineConfig& cfg) {
  const std::vector<Case> train_cases = load_cases(cfg);
  std::vector<Case> eval_cases = train_cases;
  if (cfg.data.root.empty()) {
    PipelineConfig held = cfg;
    held.data.synthetic_seed = data_seed(cfg) + 1000003;
    held.data.synthetic_cases = std::max<std::size_t>(2, cfg.data.synthetic_cases);
    eval_cases = load_cases(held);
  }
  std::vector<AblationRow> rows;
  for (auto mode : {fusion::FusionMode::add, fusion::FusionMode::concat, fusion::FusionMode::cross_attention}) {
    PipelineConfig c = cfg;
    c.network.fusion.mode = mode;
    const TrainResult tr = train(c, train_cases);
    SegmentationNetwork<float> net(c.network, c.seed);
    restore_parameters(net, tr.checkpoint);
    const EvaluationResult ev = evaluate(c, net, DatasetStats::from_buffers(tr.checkpoint), eval_cases);
    rows.push_back({mode, ev.aggregate.total(), tr.losses.empty() ? 0.0 : tr.losses.back()});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows, char sep) {
  std::ostringstream os;
  os << "Fusion";
  for (const auto& col : metrics::SegmentationReport::columns()) {
    if (col != "Class") os << sep << col;
  }
  os << sep << "FinalLoss\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& r : rows) {
    os << fusion::to_string(r.mode) << sep << r.total.dice << sep << r.total.miou << sep;
    if (r.total.hd95.defined) {
      os << r.total.hd95.mm;
    } else {
      os << "nan";
    }
    os << sep << r.total.accuracy << sep << r.total.recall << sep << r.total.precision << sep << r.final_loss << '\n';
  }
  return os.str();
}

}  // namespace nnynet::pipeline
