#include "mdepth/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mdepth/errors.hpp"

namespace mdepth {

namespace pt = boost::property_tree;

namespace {

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s, const std::string& key) {
  Int v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

template <typename E>
E parse_enum(const std::string& s, const std::string& key, const std::vector<std::pair<const char*, E>>& names) {
  for (const auto& [n, v] : names) {
    if (s == n) return v;
  }
  std::string allowed;
  for (const auto& [n, v] : names) allowed += std::string(allowed.empty() ? "" : "|") + n;
  throw ConfigError(key + ": expected one of " + allowed + ", got '" + s + "'");
}

template <typename E>
std::string enum_name(E v, const std::vector<std::pair<const char*, E>>& names) {
  for (const auto& [n, e] : names) {
    if (e == v) return n;
  }
  return "?";
}

const std::vector<std::pair<const char*, ScenePreset>> kScenes = {{"static", ScenePreset::static_plane},
                                                                   {"standard", ScenePreset::standard},
                                                                   {"dynamic", ScenePreset::dynamic},
                                                                   {"degenerate", ScenePreset::degenerate},
                                                                   {"random", ScenePreset::random}};
const std::vector<std::pair<const char*, OptimizerKind>> kOptimizers = {{"adam", OptimizerKind::adam},
                                                                         {"sgd", OptimizerKind::sgd}};
const std::vector<std::pair<const char*, ResetPolicy>> kPolicies = {{"carry", ResetPolicy::carry},
                                                                     {"reset", ResetPolicy::reset}};
const std::vector<std::pair<const char*, DepthScaling>> kScalings = {{"median", DepthScaling::median},
                                                                      {"none", DepthScaling::none}};

struct Key {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
using Access = std::function<T&(RunConfig&)>;

template <typename T>
T& view(const Access<T>& a, const RunConfig& c) {
  return a(const_cast<RunConfig&>(c));
}

Key dbl(const char* s, const char* n, Access<double> a) {
  return {s, n, [a](RunConfig& c, const std::string& v, const std::string& k) { a(c) = parse_double(v, k); },
          [a](const RunConfig& c) { return format_double(view(a, c)); }};
}

Key integer(const char* s, const char* n, Access<int> a) {
  return {s, n, [a](RunConfig& c, const std::string& v, const std::string& k) { a(c) = parse_int<int>(v, k); },
          [a](const RunConfig& c) { return std::to_string(view(a, c)); }};
}

Key u64(const char* s, const char* n, Access<std::uint64_t> a) {
  return {s, n,
          [a](RunConfig& c, const std::string& v, const std::string& k) { a(c) = parse_int<std::uint64_t>(v, k); },
          [a](const RunConfig& c) { return std::to_string(view(a, c)); }};
}

Key boolean(const char* s, const char* n, Access<bool> a) {
  return {s, n, [a](RunConfig& c, const std::string& v, const std::string& k) { a(c) = parse_bool(v, k); },
          [a](const RunConfig& c) { return std::string(view(a, c) ? "true" : "false"); }};
}

Key text(const char* s, const char* n, Access<std::string> a) {
  return {s, n, [a](RunConfig& c, const std::string& v, const std::string&) { a(c) = v; },
          [a](const RunConfig& c) { return view(a, c); }};
}

template <typename E>
Key choice(const char* s, const char* n, const std::vector<std::pair<const char*, E>>& names, Access<E> a) {
  return {s, n, [a, names](RunConfig& c, const std::string& v, const std::string& k) { a(c) = parse_enum(v, k, names); },
          [a, names](const RunConfig& c) { return enum_name(view(a, c), names); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      choice<ScenePreset>("synth", "scene", kScenes, [](RunConfig& c) -> ScenePreset& { return c.synth.scene; }),
      u64("synth", "seed", [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }),
      integer("synth", "size", [](RunConfig& c) -> int& { return c.synth.size; }),
      integer("synth", "sequences", [](RunConfig& c) -> int& { return c.synth.sequences; }),
      integer("synth", "frames", [](RunConfig& c) -> int& { return c.synth.frames; }),
      dbl("synth", "texture_frequency", [](RunConfig& c) -> double& { return c.synth.texture_frequency; }),
      dbl("synth", "texture_contrast", [](RunConfig& c) -> double& { return c.synth.texture_contrast; }),

      choice<OptimizerKind>("train", "optimizer", kOptimizers,
                            [](RunConfig& c) -> OptimizerKind& { return c.train.optimizer; }),
      dbl("train", "learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }),
      dbl("train", "beta1", [](RunConfig& c) -> double& { return c.train.beta1; }),
      dbl("train", "beta2", [](RunConfig& c) -> double& { return c.train.beta2; }),
      dbl("train", "epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }),
      dbl("train", "lr_final_scale", [](RunConfig& c) -> double& { return c.train.lr_final_scale; }),
      integer("train", "steps", [](RunConfig& c) -> int& { return c.train.steps; }),
      u64("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }),
      dbl("train", "divergence_factor", [](RunConfig& c) -> double& { return c.train.divergence_factor; }),
      integer("train", "divergence_patience", [](RunConfig& c) -> int& { return c.train.divergence_patience; }),
      dbl("train", "depth_init", [](RunConfig& c) -> double& { return c.train.init.depth_init; }),
      dbl("train", "prior_init", [](RunConfig& c) -> double& { return c.train.init.prior_init; }),
      boolean("train", "train_priors", [](RunConfig& c) -> bool& { return c.train.init.train_priors; }),

      dbl("loss", "rec", [](RunConfig& c) -> double& { return c.train.loss.weights.rec; }),
      dbl("loss", "ssim", [](RunConfig& c) -> double& { return c.train.loss.weights.ssim; }),
      dbl("loss", "smooth", [](RunConfig& c) -> double& { return c.train.loss.weights.smooth; }),
      dbl("loss", "size", [](RunConfig& c) -> double& { return c.train.loss.weights.size; }),
      integer("loss", "scales", [](RunConfig& c) -> int& { return c.train.loss.weights.scales; }),

      integer("refine", "steps", [](RunConfig& c) -> int& { return c.train.refine_steps; }),
      choice<ResetPolicy>("refine", "policy", kPolicies,
                          [](RunConfig& c) -> ResetPolicy& { return c.train.reset_policy; }),

      dbl("eval", "cap", [](RunConfig& c) -> double& { return c.eval.cap; }),
      dbl("eval", "min_depth", [](RunConfig& c) -> double& { return c.eval.min_depth; }),
      choice<DepthScaling>("eval", "scaling", kScalings, [](RunConfig& c) -> DepthScaling& { return c.eval.scaling; }),
      integer("eval", "ate_snippet", [](RunConfig& c) -> int& { return c.ate_snippet; }),

      boolean("flags", "motion_model", [](RunConfig& c) -> bool& { return c.train.loss.motion_model; }),
      boolean("flags", "size_constraint", [](RunConfig& c) -> bool& { return c.train.loss.size_constraint; }),
      boolean("flags", "occlusion_masking", [](RunConfig& c) -> bool& { return c.train.loss.occlusion_masking; }),
      boolean("flags", "refinement", [](RunConfig& c) -> bool& { return c.enable_refinement; }),

      text("paths", "data", [](RunConfig& c) -> std::string& { return c.paths.data; }),
      text("paths", "checkpoint", [](RunConfig& c) -> std::string& { return c.paths.checkpoint; }),
      text("paths", "predictions", [](RunConfig& c) -> std::string& { return c.paths.predictions; }),
  };
  return table;
}

void assign(RunConfig& c, const std::string& section, const std::string& name, const std::string& value) {
  const std::string full = section + "." + name;
  if (section == "priors") {
    const int cat = parse_int<int>(name, "priors: category id");
    if (cat < 0) throw ConfigError("priors: category ids must be non-negative");
    c.train.init.prior_overrides[cat] = parse_double(value, full);
    return;
  }
  for (const Key& k : keys()) {
    if (k.section == section && k.name == name) {
      k.set(c, value, full);
      return;
    }
  }
  throw ConfigError("unknown config key '" + full + "'");
}

}  // namespace

synth::SceneSpec SynthSettings::scene_spec(int n) const {
  const std::uint64_t s = seed + static_cast<std::uint64_t>(n);
  synth::SceneSpec spec;
  switch (scene) {
    case ScenePreset::static_plane: spec = synth::static_scene(s, size); break;
    case ScenePreset::standard: spec = synth::standard_scene(s, size); break;
    case ScenePreset::dynamic: spec = synth::dynamic_scene(s, size); break;
    case ScenePreset::degenerate: spec = synth::degenerate_follow_scene(synth::standard_scene(s, size)); break;
    case ScenePreset::random: spec = synth::random_static_scene(s, size); break;
  }
  spec.frame_count = frames;
  spec.texture_frequency = texture_frequency;
  spec.texture_contrast = texture_contrast;
  return spec;
}

void RunConfig::validate() const {
  if (synth.size < 8) throw ConfigError("synth.size must be at least 8");
  if (synth.sequences < 1) throw ConfigError("synth.sequences must be at least 1");
  if (synth.frames < 3) throw ConfigError("synth.frames must be at least 3");
  if (!(synth.texture_frequency > 0) || !(synth.texture_contrast > 0) || synth.texture_contrast > 0.5) {
    throw ConfigError("synth: texture_frequency must be > 0 and texture_contrast in (0, 0.5]");
  }
  try {
    eval.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("eval: ") + e.what());
  }
  if (ate_snippet < 2) throw ConfigError("eval.ate_snippet must be at least 2");
  for (const auto& [cat, p] : train.init.prior_overrides) {
    if (!(p > 0)) throw ConfigError("priors." + std::to_string(cat) + " must be positive");
  }
  train.validate();
}

RunConfig parse_config(const std::string& ini_text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [name, value] : body) assign(c, section, name, value.data());
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override must look like section.key=value, got '" + o + "'");
    }
    assign(c, o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << k.section << "]\n";
      section = k.section;
    }
    os << k.name << " = " << k.get(config) << "\n";
  }
  os << "\n[priors]\n";
  for (const auto& [cat, p] : config.train.init.prior_overrides) os << cat << " = " << format_double(p) << "\n";
  return os.str();
}

}  // namespace mdepth
