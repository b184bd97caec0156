#include <fstream>
#include <set>

#include "nnynet/pipeline.hpp"

namespace nnynet::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.preprocess.patch_scale_factor = 1.0;
  c.network.fusion.mode = fusion::FusionMode::cross_attention;
  c.network.tab_features = synthetic::feature_count(c.num_classes);
  c.network.decoder.num_classes = c.num_classes;
  return c;
}

void PipelineConfig::validate() const {
  if (num_classes < 2) throw ContractError("config: num_classes must be at least 2");
  if (network.decoder.num_classes != num_classes) throw ContractError("config: decoder class count differs from num_classes");
  preprocess.validate();
  if (augment_enabled) augment.validate();
  network.validate();
  loss.validate();
  if (!loss.focal_alpha.empty() && loss.focal_alpha.size() != num_classes) {
    throw ContractError("config: focal_alpha needs one weight per class");
  }
  optimizer.validate();
  if (batch_size == 0) throw ContractError("config: batch_size must be positive");
  if (steps == 0 && epochs == 0) throw ContractError("config: steps or epochs must be positive");
  if (!(sliding_overlap >= 0.0 && sliding_overlap < 1.0)) throw ContractError("config: overlap must lie in [0, 1)");
  components.validate();
  if (data.root.empty()) {
    if (data.synthetic_cases == 0) throw ContractError("config: synthetic_cases must be positive");
    if (data.synthetic_shape.size() != 3) throw ContractError("config: synthetic_shape needs 3 extents");
  } else if (data.table.empty()) {
    throw ContractError("config: data.table is required with data.root");
  }
}

namespace {

// Reads keys from an object and rejects any it did not consume.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + path_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key '" + path_ + k + "'");
    }
  }
  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + path_ + key + "': " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return path_ + key + "."; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void section(Reader& r, const char* key, F&& f) {
  if (const json* c = r.child(key)) {
    Reader sub(*c, r.path(key));
    f(sub);
  }
}

}  // namespace

ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["num_classes"] = c.num_classes;
  j["data"] = {{"root", c.data.root},
               {"table", c.data.table},
               {"synthetic_cases", c.data.synthetic_cases},
               {"synthetic_shape", c.data.synthetic_shape},
               {"synthetic_seed", c.data.synthetic_seed}};
  ordered_json pre;
  pre["background_value"] = c.preprocess.background_value;
  pre["crop_margin"] = c.preprocess.crop_margin;
  pre["clip_lo"] = c.preprocess.clip_lo;
  pre["clip_hi"] = c.preprocess.clip_hi;
  pre["target_spacing"] = c.preprocess.target_spacing ? ordered_json(*c.preprocess.target_spacing) : ordered_json("median");
  pre["standard_scale"] = c.preprocess.standard_scale ? ordered_json(*c.preprocess.standard_scale) : ordered_json("median");
  pre["patch_scale_factor"] = c.preprocess.patch_scale_factor;
  j["preprocess"] = pre;
  const auto& a = c.augment;
  j["augment"] = {{"enabled", c.augment_enabled},     {"flip_prob", a.flip_prob},
                  {"rot90_prob", a.rot90_prob},       {"contrast_prob", a.contrast_prob},
                  {"contrast_range", a.contrast_range}, {"noise_prob", a.noise_prob},
                  {"noise_sigma", a.noise_sigma},     {"blur_prob", a.blur_prob},
                  {"blur_sigma_range", a.blur_sigma_range}};
  const auto& e = c.network.encoder;
  j["encoder"] = {{"patch_size", e.patch_size}, {"in_channels", e.in_channels}, {"embed_dim", e.embed_dim},
                  {"depths", e.depths},         {"heads", e.heads},             {"window", e.window},
                  {"mlp_ratio", e.mlp_ratio}};
  const auto& d = c.network.decoder;
  j["decoder"] = {{"depths", d.depths}, {"kernel", d.kernel}, {"expansion", d.expansion}};
  const auto& f = c.network.fusion;
  j["fusion"] = {{"mode", fusion::to_string(f.mode)},
                 {"heads", f.heads},
                 {"gate_init", f.gate_init},
                 {"concat_channels", f.concat_channels}};
  j["tab_features"] = c.network.tab_features;
  j["loss"] = {{"alpha", c.loss.alpha},
               {"focal_gamma", c.loss.focal_gamma},
               {"focal_alpha", c.loss.focal_alpha},
               {"dice_smooth", c.loss.dice_smooth}};
  j["optimizer"] = {{"name", "adam"},
                    {"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["steps"] = c.steps;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["sliding_window"] = {{"overlap", c.sliding_overlap}};
  j["components"] = {{"connectivity", c.components.connectivity}, {"min_size", c.components.min_size}};
  return j;
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c = PipelineConfig::desk();
  bool tab_given = false;
  {
    Reader r(j, "");
    r.get("seed", c.seed);
    r.get("num_classes", c.num_classes);
    section(r, "data", [&](Reader& s) {
      s.get("root", c.data.root);
      s.get("table", c.data.table);
      s.get("synthetic_cases", c.data.synthetic_cases);
      s.get("synthetic_shape", c.data.synthetic_shape);
      s.get("synthetic_seed", c.data.synthetic_seed);
    });
    section(r, "preprocess", [&](Reader& s) {
      s.get("background_value", c.preprocess.background_value);
      s.get("crop_margin", c.preprocess.crop_margin);
      s.get("clip_lo", c.preprocess.clip_lo);
      s.get("clip_hi", c.preprocess.clip_hi);
      json ts = "median", ss = "median";
      s.get("target_spacing", ts);
      s.get("standard_scale", ss);
      c.preprocess.target_spacing.reset();
      c.preprocess.standard_scale.reset();
      if (!(ts.is_string() && ts == "median")) c.preprocess.target_spacing = ts.get<Vec3>();
      if (!(ss.is_string() && ss == "median")) c.preprocess.standard_scale = ss.get<preprocess::Extent3>();
      s.get("patch_scale_factor", c.preprocess.patch_scale_factor);
    });
    section(r, "augment", [&](Reader& s) {
      auto& a = c.augment;
      s.get("enabled", c.augment_enabled);
      s.get("flip_prob", a.flip_prob);
      s.get("rot90_prob", a.rot90_prob);
      s.get("contrast_prob", a.contrast_prob);
      s.get("contrast_range", a.contrast_range);
      s.get("noise_prob", a.noise_prob);
      s.get("noise_sigma", a.noise_sigma);
      s.get("blur_prob", a.blur_prob);
      s.get("blur_sigma_range", a.blur_sigma_range);
    });
    section(r, "encoder", [&](Reader& s) {
      auto& e = c.network.encoder;
      s.get("patch_size", e.patch_size);
      s.get("in_channels", e.in_channels);
      s.get("embed_dim", e.embed_dim);
      s.get("depths", e.depths);
      s.get("heads", e.heads);
      s.get("window", e.window);
      s.get("mlp_ratio", e.mlp_ratio);
    });
    section(r, "decoder", [&](Reader& s) {
      auto& d = c.network.decoder;
      s.get("depths", d.depths);
      s.get("kernel", d.kernel);
      s.get("expansion", d.expansion);
    });
    section(r, "fusion", [&](Reader& s) {
      auto& f = c.network.fusion;
      std::string mode = fusion::to_string(f.mode);
      s.get("mode", mode);
      f.mode = fusion::parse_mode(mode);
      s.get("heads", f.heads);
      s.get("gate_init", f.gate_init);
      s.get("concat_channels", f.concat_channels);
    });
    if (j.contains("tab_features")) tab_given = true;
    r.get("tab_features", c.network.tab_features);
    section(r, "loss", [&](Reader& s) {
      s.get("alpha", c.loss.alpha);
      s.get("focal_gamma", c.loss.focal_gamma);
      s.get("focal_alpha", c.loss.focal_alpha);
      s.get("dice_smooth", c.loss.dice_smooth);
    });
    section(r, "optimizer", [&](Reader& s) {
      std::string name = "adam";
      s.get("name", name);
      if (name != "adam") throw std::invalid_argument("config: unsupported optimizer '" + name + "'");
      s.get("lr", c.optimizer.lr);
      s.get("beta1", c.optimizer.beta1);
      s.get("beta2", c.optimizer.beta2);
      s.get("eps", c.optimizer.eps);
    });
    r.get("steps", c.steps);
    r.get("epochs", c.epochs);
    r.get("batch_size", c.batch_size);
    section(r, "sliding_window", [&](Reader& s) { s.get("overlap", c.sliding_overlap); });
    section(r, "components", [&](Reader& s) {
      s.get("connectivity", c.components.connectivity);
      s.get("min_size", c.components.min_size);
    });
  }
  c.network.decoder.num_classes = c.num_classes;
  if (!tab_given && c.data.root.empty()) c.network.tab_features = synthetic::feature_count(c.num_classes);
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace nnynet::pipeline
