// Command-line front end: imputation, preprocessing, training, evaluation,
// prediction, the oracle self-test and the fusion ablation.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>

#include "nnynet/impute.hpp"
#include "nnynet/pipeline.hpp"
#include "nnynet/selftest.hpp"

namespace fs = std::filesystem;
using namespace nnynet;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string fusion_mode;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "pipeline config (JSON); desk defaults when omitted");
  cmd->add_option("--seed", c.seed, "override the run seed");
  cmd->add_option("--fusion-mode", c.fusion_mode, "none, add, concat or cross_attention");
}

pipeline::PipelineConfig resolve(const Common& c) {
  pipeline::PipelineConfig cfg = c.config.empty() ? pipeline::PipelineConfig::desk() : pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.fusion_mode.empty()) cfg.network.fusion.mode = fusion::parse_mode(c.fusion_mode);
  cfg.validate();
  return cfg;
}

void write_or_print(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    io::write_file(out, text);
  }
}

pipeline::TrainResult train_verbose(const pipeline::PipelineConfig& cfg) {
  pipeline::TrainHooks hooks;
  const auto start = std::chrono::steady_clock::now();
  hooks.on_step = [&](std::size_t step, double loss, const SegmentationNetwork<float>&) {
    if (step == 1 || step % 10 == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "step " << step << " loss " << loss << " (" << s << " s)\n";
    }
    return true;
  };
  return pipeline::train(cfg, hooks);
}

int run_impute(const std::string& in, const std::string& out, std::uint64_t seed) {
  io::PatientTable table = io::load_table(io::read_file(in));
  std::vector<impute::PatientRecord> records = table.records;
  const impute::ImputeResult r = impute::impute_all(records, impute::ImputerRegistry::defaults(seed));
  for (const impute::Selection& s : r.selections) {
    std::cerr << table.columns[s.feature] << ": " << s.model;
    if (s.cross_validated) std::cerr << " (score " << s.score << ")";
    for (const auto& f : s.flags) std::cerr << " [" << f << "]";
    std::cerr << '\n';
  }
  table.records = r.records;
  write_or_print(out, io::write_table(table));
  return 0;
}

int run_preprocess(const pipeline::PipelineConfig& cfg, const std::string& out) {
  if (out.empty()) throw std::invalid_argument("preprocess: --out directory is required");
  fs::create_directories(out);
  const auto cases = pipeline::load_cases(cfg);
  const pipeline::DatasetStats stats = pipeline::fit_dataset_stats(cases, cfg);
  for (const auto& c : cases) {
    const pipeline::PreparedCase pc = pipeline::prepare_case(c, stats, cfg);
    Volume v;
    v.grid = pc.image;
    v.spacing = pc.spacing;
    LabelMask m;
    m.grid = pc.mask;
    m.spacing = pc.spacing;
    io::save_volume((fs::path(out) / (c.record.id + ".nrrd")).string(), v);
    io::save_label_mask((fs::path(out) / (c.record.id + ".seg.nrrd")).string(), m);
    std::cerr << c.record.id << ": " << shape_str(pc.image.shape()) << '\n';
  }
  return 0;
}

// Writes the configured synthetic cases as <id>.nrrd / <id>.seg.nrrd plus table.csv,
// the layout read back when data.root and data.table are set.
int run_synth(const pipeline::PipelineConfig& cfg, const std::string& out) {
  fs::create_directories(out);
  io::PatientTable table;
  for (std::size_t k = 1; k < cfg.num_classes; ++k) {
    table.columns.push_back("organ" + std::to_string(k) + "_volume");
    table.columns.push_back("organ" + std::to_string(k) + "_band");
  }
  table.kinds.assign(table.columns.size(), io::FeatureKind::continuous);
  table.categories.assign(table.columns.size(), {});
  for (const auto& c : pipeline::load_cases(cfg)) {
    io::save_volume((fs::path(out) / (c.record.id + ".nrrd")).string(), c.volume);
    io::save_label_mask((fs::path(out) / (c.record.id + ".seg.nrrd")).string(), c.mask);
    table.records.push_back(c.record);
  }
  io::write_file((fs::path(out) / "table.csv").string(), io::write_table(table));
  std::cerr << "wrote " << table.records.size() << " cases to " << out << '\n';
  return 0;
}

int run_predict(const pipeline::PipelineConfig& cfg, const std::string& checkpoint, const std::string& in,
                const std::string& tab, const std::string& id, const std::string& out) {
  if (in.empty() || tab.empty() || out.empty()) throw std::invalid_argument("predict: --in, --tab and --out are required");
  const pipeline::Checkpoint ck =
      checkpoint.empty() ? train_verbose(cfg).checkpoint : pipeline::load_checkpoint(checkpoint);
  const io::PatientTable table = io::load_table(io::read_file(tab));
  if (table.records.empty()) throw std::invalid_argument("predict: table has no rows");
  const io::PatientRecord& record = id.empty() ? table.records.front() : table.find(id);
  io::save_label_mask(out, pipeline::predict_volume(cfg, ck, io::load_volume(in), record));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Swin encoder / ConvNeXt decoder segmentation with tabular fusion"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  std::string out, in, tab, checkpoint, id;
  bool full = false;

  auto* imp = app.add_subcommand("impute", "fill missing cells of a patient table");
  imp->add_option("--in", in, "input CSV")->required();
  imp->add_option("--out", out, "output CSV (stdout when omitted)");
  imp->add_option("--seed", common.seed, "fold assignment seed");

  auto* cfg_cmd = app.add_subcommand("config", "print the resolved config as JSON");
  add_common(cfg_cmd, common);

  auto* syn = app.add_subcommand("synth", "write the synthetic dataset as NRRD files and a CSV table");
  add_common(syn, common);
  syn->add_option("--out", out, "output directory")->required();

  auto* pre = app.add_subcommand("preprocess", "crop, normalise and resample the configured cases");
  add_common(pre, common);
  pre->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a network and write a checkpoint");
  add_common(trn, common);
  trn->add_option("--out", out, "checkpoint path")->required();

  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the configured cases");
  add_common(evl, common);
  evl->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  evl->add_option("--out", out, "report CSV (stdout when omitted)");

  auto* prd = app.add_subcommand("predict", "segment one volume");
  add_common(prd, common);
  prd->add_option("--checkpoint", checkpoint, "checkpoint path; trains from the config when omitted");
  prd->add_option("--in", in, "input NRRD volume")->required();
  prd->add_option("--tab", tab, "patient table CSV")->required();
  prd->add_option("--id", id, "row id in the table (first row when omitted)");
  prd->add_option("--out", out, "output NRRD mask")->required();

  auto* st = app.add_subcommand("selftest", "run the oracle and property checks");
  st->add_flag("--full", full, "include the end-to-end overfit run");

  auto* abl = app.add_subcommand("ablate-fusion", "train add, concat and cross-attention under one seed");
  add_common(abl, common);
  abl->add_option("--out", out, "table CSV (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*imp) return run_impute(in, out, common.seed.value_or(0));
    if (*st) {
      const auto results = selftest::run_all(full, [](const selftest::CriterionResult& r) {
        std::cout << selftest::format_result(r) << std::endl;
      });
      const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
      std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " checks failed") << '\n';
      return failed == 0 ? 0 : 1;
    }
    const pipeline::PipelineConfig cfg = resolve(common);
    if (*cfg_cmd) {
      std::cout << pipeline::to_json(cfg).dump(2) << '\n';
      return 0;
    }
    if (*syn) return run_synth(cfg, out);
    if (*pre) return run_preprocess(cfg, out);
    if (*trn) {
      const pipeline::TrainResult r = train_verbose(cfg);
      pipeline::save_checkpoint(out, r.checkpoint);
      std::cerr << "trained " << r.steps << " steps, final loss " << r.losses.back() << '\n';
      return 0;
    }
    if (*evl) {
      const pipeline::EvaluationResult r =
          pipeline::evaluate(cfg, pipeline::load_checkpoint(checkpoint), pipeline::load_cases(cfg));
      write_or_print(out, r.aggregate.to_delimited());
      return 0;
    }
    if (*prd) return run_predict(cfg, checkpoint, in, tab, id, out);
    if (*abl) {
      write_or_print(out, pipeline::ablation_table(pipeline::ablate_fusion(cfg)));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
