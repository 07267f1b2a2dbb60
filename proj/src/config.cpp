#include "affect/config.hpp"

#include "affect/io.hpp"

#include <json.hpp>

#include <cstdlib>
#include <map>

namespace affect::config {

using nlohmann::json;

namespace {

enum class Kind { Int, Seed, Real, Bool, String, Track, OptReal, OptInt, OptBool, RealList, Order, Weights };

const std::map<std::string, Kind>& schema() {
  static const std::map<std::string, Kind> s = {
      {"track", Kind::Track},
      {"seed", Kind::Seed},
      {"threads", Kind::Int},
      {"data_root", Kind::String},
      {"folds", Kind::Int},
      {"class_weights", Kind::Weights},
      {"fusion.num_layers", Kind::Int},
      {"fusion.num_heads", Kind::Int},
      {"fusion.d_model", Kind::Int},
      {"fusion.ff_dim", Kind::Int},
      {"fusion.dropout", Kind::Real},
      {"train.learning_rate", Kind::Real},
      {"train.beta1", Kind::Real},
      {"train.beta2", Kind::Real},
      {"train.eps", Kind::Real},
      {"train.weight_decay", Kind::Real},
      {"train.epochs", Kind::Int},
      {"train.batch_size", Kind::Int},
      {"smoothing.enabled", Kind::Bool},
      {"smoothing.replace_faces", Kind::Bool},
      {"smoothing.sigma", Kind::OptReal},
      {"smoothing.radius", Kind::OptInt},
      {"smoothing.order", Kind::Order},
      {"ensemble.subsets", Kind::Int},
      {"synth.videos", Kind::Int},
      {"synth.min_frames", Kind::Int},
      {"synth.max_frames", Kind::Int},
      {"synth.dim", Kind::Int},
      {"synth.clip_length", Kind::Int},
      {"synth.separation", Kind::Real},
      {"synth.noise", Kind::Real},
      {"synth.background_clusters", Kind::Int},
      {"synth.background_dim", Kind::Int},
      {"synth.background_shift", Kind::Real},
      {"synth.face_dropout", Kind::Real},
      {"synth.mean_segment", Kind::OptReal},
      {"synth.class_probs", Kind::RealList},
      {"synth.au_rate", Kind::Real},
      {"synth.with_text", Kind::OptBool},
  };
  return s;
}

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::Int: return "an integer";
    case Kind::Seed: return "a non-negative integer";
    case Kind::Real: return "a number";
    case Kind::Bool: return "true or false";
    case Kind::String: return "a string";
    case Kind::Track: return "one of va|expr|au|ce|emi";
    case Kind::OptReal: return "a number or null";
    case Kind::OptInt: return "an integer or null";
    case Kind::OptBool: return "true, false or null";
    case Kind::RealList: return "a list of numbers";
    case Kind::Order: return "\"before_vote\" or \"after_vote\"";
    case Kind::Weights: return "\"uniform\" or \"inverse_frequency\"";
  }
  return "?";
}

bool matches(Kind k, const json& v) {
  switch (k) {
    case Kind::Int: return v.is_number_integer();
    case Kind::Seed: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case Kind::Real: return v.is_number();
    case Kind::Bool: return v.is_boolean();
    case Kind::String: return v.is_string();
    case Kind::Track:
      if (!v.is_string()) return false;
      try {
        parse_track(v.get<std::string>());
        return true;
      } catch (const InvalidInput&) {
        return false;
      }
    case Kind::OptReal: return v.is_null() || v.is_number();
    case Kind::OptInt: return v.is_null() || v.is_number_integer();
    case Kind::OptBool: return v.is_null() || v.is_boolean();
    case Kind::RealList:
      if (!v.is_array()) return false;
      for (const auto& x : v)
        if (!x.is_number()) return false;
      return true;
    case Kind::Order: return v.is_string() && (v == "before_vote" || v == "after_vote");
    case Kind::Weights: return v.is_string() && (v == "uniform" || v == "inverse_frequency");
  }
  return false;
}

json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    p += "/" + dotted.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return json::json_pointer(p);
}

void set_leaf(json& tree, const std::string& key, const json& value, const std::string& source) {
  const auto it = schema().find(key);
  if (it == schema().end()) throw ConfigError(source + ": unknown config key '" + key + "'");
  if (!matches(it->second, value)) {
    throw ConfigError(source + ": '" + key + "' must be " + kind_name(it->second) + ", got " + value.dump());
  }
  tree[pointer(key)] = value;
}

void merge(json& tree, const json& doc, const std::string& prefix, const std::string& source) {
  if (!doc.is_object()) {
    throw ConfigError(source + ": expected an object" + (prefix.empty() ? "" : " at '" + prefix + "'"));
  }
  for (const auto& [k, v] : doc.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      merge(tree, v, key, source);
    } else {
      set_leaf(tree, key, v, source);
    }
  }
}

json tree_of(const RunConfig& c) {
  const auto& e = c.experiment;
  json t;
  t["track"] = std::string(track_name(e.track));
  t["seed"] = e.seed;
  t["threads"] = e.threads;
  t["data_root"] = c.data_root;
  t["folds"] = e.folds;
  t["class_weights"] = e.class_weights == harness::ClassWeightPolicy::Uniform ? "uniform" : "inverse_frequency";
  t["fusion"] = {{"num_layers", e.fusion.num_layers}, {"num_heads", e.fusion.num_heads},
                 {"d_model", e.fusion.d_model},       {"ff_dim", e.fusion.ff_dim},
                 {"dropout", e.fusion.dropout}};
  t["train"] = {{"learning_rate", e.train.learning_rate}, {"beta1", e.train.beta1},
                {"beta2", e.train.beta2},                 {"eps", e.train.eps},
                {"weight_decay", e.train.weight_decay},   {"epochs", e.train.epochs},
                {"batch_size", e.train.batch_size}};
  json sm;
  sm["enabled"] = e.post.enabled;
  sm["replace_faces"] = e.post.replace_faces;
  sm["sigma"] = e.post.smoothing ? json(e.post.smoothing->sigma) : json(nullptr);
  sm["radius"] = e.post.smoothing && e.post.smoothing->kernel_radius ? json(*e.post.smoothing->kernel_radius)
                                                                      : json(nullptr);
  sm["order"] = e.post.order == postprocess::SmoothingOrder::BeforeVote ? "before_vote" : "after_vote";
  t["smoothing"] = sm;
  t["ensemble"] = {{"subsets", e.subsets}};
  const auto& s = c.synth;
  t["synth"] = {{"videos", s.videos},
                {"min_frames", s.min_frames},
                {"max_frames", s.max_frames},
                {"dim", s.dim},
                {"clip_length", s.clip_length},
                {"separation", s.separation},
                {"noise", s.noise},
                {"background_clusters", s.background_clusters},
                {"background_dim", s.background_dim},
                {"background_shift", s.background_shift},
                {"face_dropout", s.face_dropout},
                {"mean_segment", c.synth_mean_segment ? json(*c.synth_mean_segment) : json(nullptr)},
                {"class_probs", s.class_probs},
                {"au_rate", s.au_rate},
                {"with_text", s.with_text ? json(*s.with_text) : json(nullptr)}};
  return t;
}

RunConfig from_tree(const json& t) {
  RunConfig c;
  auto& e = c.experiment;
  e.track = parse_track(t["track"].get<std::string>());
  e.seed = t["seed"].get<std::uint64_t>();
  e.threads = t["threads"].get<int>();
  c.data_root = t["data_root"].get<std::string>();
  e.folds = t["folds"].get<int>();
  e.class_weights = t["class_weights"] == "uniform" ? harness::ClassWeightPolicy::Uniform
                                                    : harness::ClassWeightPolicy::InverseFrequency;
  const auto& f = t["fusion"];
  e.fusion.track = e.track;
  e.fusion.num_layers = f["num_layers"].get<int>();
  e.fusion.num_heads = f["num_heads"].get<int>();
  e.fusion.d_model = f["d_model"].get<int>();
  e.fusion.ff_dim = f["ff_dim"].get<int>();
  e.fusion.dropout = f["dropout"].get<double>();
  e.fusion.seed = e.seed;
  const auto& tr = t["train"];
  e.train.learning_rate = tr["learning_rate"].get<double>();
  e.train.beta1 = tr["beta1"].get<double>();
  e.train.beta2 = tr["beta2"].get<double>();
  e.train.eps = tr["eps"].get<double>();
  e.train.weight_decay = tr["weight_decay"].get<double>();
  e.train.epochs = tr["epochs"].get<int>();
  e.train.batch_size = tr["batch_size"].get<int>();
  e.train.seed = e.seed;
  const auto& sm = t["smoothing"];
  e.post.enabled = sm["enabled"].get<bool>();
  e.post.replace_faces = sm["replace_faces"].get<bool>();
  if (!sm["sigma"].is_null() || !sm["radius"].is_null()) {
    postprocess::SmoothingConfig s = postprocess::SmoothingConfig::for_track(e.track);
    if (!sm["sigma"].is_null()) s.sigma = sm["sigma"].get<double>();
    if (!sm["radius"].is_null()) s.kernel_radius = sm["radius"].get<int>();
    e.post.smoothing = s;
  }
  e.post.order = sm["order"] == "before_vote" ? postprocess::SmoothingOrder::BeforeVote
                                              : postprocess::SmoothingOrder::AfterVote;
  e.subsets = t["ensemble"]["subsets"].get<int>();
  const auto& s = t["synth"];
  auto& y = c.synth;
  y.track = e.track;
  y.seed = e.seed;
  y.videos = s["videos"].get<int>();
  y.min_frames = s["min_frames"].get<int>();
  y.max_frames = s["max_frames"].get<int>();
  y.dim = s["dim"].get<int>();
  y.clip_length = s["clip_length"].get<int>();
  y.separation = s["separation"].get<double>();
  y.noise = s["noise"].get<double>();
  y.background_clusters = s["background_clusters"].get<int>();
  y.background_dim = s["background_dim"].get<int>();
  y.background_shift = s["background_shift"].get<double>();
  y.face_dropout = s["face_dropout"].get<double>();
  if (!s["mean_segment"].is_null()) c.synth_mean_segment = s["mean_segment"].get<double>();
  y.mean_segment = c.synth_mean_segment.value_or(harness::separable_spec(e.track, 0).mean_segment);
  y.class_probs = s["class_probs"].get<std::vector<double>>();
  y.au_rate = s["au_rate"].get<double>();
  if (!s["with_text"].is_null()) y.with_text = s["with_text"].get<bool>();
  return c;
}

void check_ranges(const RunConfig& c) {
  const auto& e = c.experiment;
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  need(e.threads >= 1, "threads must be >= 1");
  need(e.folds >= 2, "folds must be >= 2");
  need(e.subsets >= 1, "ensemble.subsets must be >= 1");
  need(e.fusion.num_layers >= 1, "fusion.num_layers must be >= 1");
  need(e.fusion.num_heads >= 1, "fusion.num_heads must be >= 1");
  need(e.fusion.d_model >= 0 && e.fusion.ff_dim >= 0, "fusion.d_model and fusion.ff_dim must be >= 0");
  need(e.fusion.dropout >= 0.0 && e.fusion.dropout < 1.0, "fusion.dropout must be in [0,1)");
  need(e.train.learning_rate > 0.0, "train.learning_rate must be > 0");
  need(e.train.beta1 >= 0.0 && e.train.beta1 < 1.0 && e.train.beta2 >= 0.0 && e.train.beta2 < 1.0,
       "train.beta1 and train.beta2 must be in [0,1)");
  need(e.train.eps > 0.0, "train.eps must be > 0");
  need(e.train.weight_decay >= 0.0, "train.weight_decay must be >= 0");
  need(e.train.epochs >= 1 && e.train.batch_size >= 1, "train.epochs and train.batch_size must be >= 1");
  if (e.post.smoothing) {
    try {
      e.post.smoothing->validate();
    } catch (const InvalidInput& err) {
      throw ConfigError(std::string("invalid config: ") + err.what());
    }
  }
  auto synth = c.synth;
  try {
    synth.validate();
  } catch (const InvalidInput& err) {
    throw ConfigError(std::string("invalid config: ") + err.what());
  }
}

}  // namespace

RunConfig defaults() {
  RunConfig c;
  c.synth = harness::separable_spec(Track::EXPR, 0);
  if (const char* root = std::getenv("AFFECT_DATA_ROOT")) c.data_root = root;
  return c;
}

namespace {

void merge_json_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": not valid JSON: " + e.what());
  }
  json tree = tree_of(cfg);
  merge(tree, doc, "", source);
  cfg = from_tree(tree);
}

void merge_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "': expected key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json tree = tree_of(cfg);
  set_leaf(tree, key, value, "override '" + assignment + "'");
  cfg = from_tree(tree);
}

}  // namespace

void apply_json_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  merge_json_text(cfg, text, source);
  check_ranges(cfg);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  merge_override(cfg, assignment);
  check_ranges(cfg);
}

RunConfig resolve(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  RunConfig cfg = defaults();
  if (file) {
    std::string text;
    try {
      text = io::read_file(*file);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    merge_json_text(cfg, text, file->string());
  }
  for (const auto& o : overrides) merge_override(cfg, o);
  check_ranges(cfg);
  return cfg;
}

std::string to_json(const RunConfig& cfg) { return tree_of(cfg).dump(2); }

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : schema()) out.push_back(k);
  return out;
}

}  // namespace affect::config
