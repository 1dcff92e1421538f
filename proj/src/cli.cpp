#include "mdepth/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "mdepth/errors.hpp"
#include "mdepth/io.hpp"
#include "mdepth/metrics.hpp"
#include "mdepth/trainer.hpp"

namespace mdepth::cli {

using nlohmann::json;

namespace {

json metrics_json(const DepthMetrics& m) {
  return json{{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel}, {"rmse", m.rmse},     {"rmse_log", m.rmse_log},
              {"delta1", m.delta1},   {"delta2", m.delta2}, {"delta3", m.delta3}, {"count", m.count}};
}

json pose_json(const Pose6& p) {
  const auto a = p.as_array();
  return json(std::vector<double>(a.begin(), a.end()));
}

Pose6 pose_from(const json& j) {
  if (!j.is_array() || j.size() != 6) throw DataError("pose must be an array of 6 numbers");
  std::array<double, 6> a{};
  for (std::size_t i = 0; i < 6; ++i) a[i] = j.at(i).get<double>();
  return Pose6::from_array(a);
}

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  io::write_text(path, text);
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

void begin(const RunConfig& config, const fs::path& out) {
  io::ensure_directory(out);
  io::write_text(out / "config.ini", format_config(config));
}

std::vector<io::Window> load_windows(const RunConfig& config) {
  if (config.paths.data.empty()) throw ConfigError("paths.data is required");
  return io::windows(io::read_dataset(config.paths.data));
}

Mask all_pixels(const DepthMap& d) { return Mask(d.field().height, d.field().width, 1); }

struct WindowPrediction {
  std::string name;
  Pose6 ego_prev;
  Pose6 ego_next;
};

void write_predictions(const fs::path& out, const std::vector<std::pair<std::string, DepthMap>>& depths,
                       const std::vector<WindowPrediction>& poses) {
  io::ensure_directory(out / "depth");
  for (const auto& [name, d] : depths) io::write_pfm(out / "depth" / (window_stem(name) + ".pfm"), d.field());
  std::vector<json> records;
  for (const auto& p : poses) {
    records.push_back({{"window", p.name}, {"ego_prev", pose_json(p.ego_prev)}, {"ego_next", pose_json(p.ego_next)}});
  }
  write_jsonl(out / "poses.jsonl", records);
}

std::string sequence_of(const std::string& window_name) { return window_name.substr(0, window_name.find('/')); }

// Camera-to-world trajectory of a sequence from per-window ego motions:
// frame 0 at the origin, frame 1 from the first window's ego_prev, every
// later frame from the preceding window's ego_next.
std::vector<Pose6> chain(const std::vector<WindowPrediction>& windows) {
  std::vector<SE3Matrix> t{SE3Matrix::identity()};
  t.push_back(t.back() * pose_to_matrix(windows.front().ego_prev));
  for (const auto& w : windows) t.push_back(t.back() * invert(pose_to_matrix(w.ego_next)));
  std::vector<Pose6> out;
  for (const auto& m : t) out.push_back(matrix_to_pose(m));
  return out;
}

json ate_json(const std::vector<io::Window>& windows, const std::vector<WindowPrediction>& predicted, int snippet) {
  std::map<std::string, std::vector<WindowPrediction>> pred_by_seq, gt_by_seq;
  for (const auto& p : predicted) pred_by_seq[sequence_of(p.name)].push_back(p);
  for (const auto& w : windows) {
    gt_by_seq[sequence_of(w.sample.name)].push_back({w.sample.name, w.gt_ego_prev, w.gt_ego_next});
  }
  for (const auto& [seq, preds] : pred_by_seq) {
    auto gt = gt_by_seq.find(seq);
    if (gt == gt_by_seq.end() || gt->second.size() != preds.size()) {
      throw DataError("poses for " + seq + " do not cover its windows");
    }
  }
  // Per-snippet errors pooled over every sequence.
  std::vector<double> all;
  for (const auto& [seq, preds] : pred_by_seq) {
    const auto p = chain(preds), g = chain(gt_by_seq.at(seq));
    if (static_cast<int>(p.size()) < snippet) continue;
    for (std::size_t s = 0; s + static_cast<std::size_t>(snippet) <= p.size(); ++s) {
      std::vector<Pose6> ps(p.begin() + static_cast<long>(s), p.begin() + static_cast<long>(s) + snippet);
      std::vector<Pose6> gs(g.begin() + static_cast<long>(s), g.begin() + static_cast<long>(s) + snippet);
      all.push_back(ate(ps, gs, snippet).mean);
    }
  }
  if (all.empty()) return json{{"snippet", snippet}, {"snippets", 0}};
  double mean = 0, var = 0;
  for (double e : all) mean += e / static_cast<double>(all.size());
  for (double e : all) var += (e - mean) * (e - mean) / static_cast<double>(all.size());
  return json{{"snippet", snippet}, {"snippets", all.size()}, {"mean", mean}, {"std", std::sqrt(var)}};
}

std::vector<WindowPrediction> read_poses(const fs::path& path) {
  std::vector<WindowPrediction> out;
  for (const auto& r : read_jsonl(path)) {
    try {
      out.push_back({r.at("window").get<std::string>(), pose_from(r.at("ego_prev")), pose_from(r.at("ego_next"))});
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

DepthMap read_prediction(const fs::path& dir, const std::string& name) {
  const fs::path path = dir / "depth" / (window_stem(name) + ".pfm");
  try {
    return DepthMap(io::read_pfm(path));
  } catch (const InvalidArgument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string window_stem(const std::string& window_name) {
  std::string s = window_name;
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

void cmd_synth(const RunConfig& config, const fs::path& out) {
  begin(config, out);
  for (int n = 0; n < config.synth.sequences; ++n) {
    const synth::SceneSpec spec = config.synth.scene_spec(n);
    try {
      spec.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("synth: ") + e.what());
    }
    io::write_sequence(out, n, spec);
  }
}

void cmd_train(const RunConfig& config, const fs::path& out) {
  const auto windows = load_windows(config);
  begin(config, out);
  std::vector<SequenceSample> samples;
  for (const auto& w : windows) samples.push_back(w.sample);
  DirectPredictor predictor;
  std::vector<json> trace;
  fit(samples, predictor, config.train,
      [&](const TraceEntry& e) { trace.push_back({{"step", e.step}, {"sample", e.sample}, {"loss", e.loss}}); });
  write_jsonl(out / "trace.jsonl", trace);
  io::save_checkpoint(out / "checkpoint", predictor.params());

  std::vector<std::pair<std::string, DepthMap>> depths;
  std::vector<WindowPrediction> poses;
  for (const auto& s : samples) {
    depths.emplace_back(s.name, predictor.depth(DirectPredictor::frame_id(s)));
    poses.push_back({s.name, predictor.ego(DirectPredictor::prev_pair(s)), predictor.ego(DirectPredictor::next_pair(s))});
  }
  write_predictions(out, depths, poses);
}

void cmd_refine(const RunConfig& config, const fs::path& out) {
  const auto windows = load_windows(config);
  begin(config, out);
  TrainConfig cfg = config.train;
  if (!config.enable_refinement) cfg.refine_steps = 0;
  const Intrinsics& k = windows.front().sample.k;
  ModelState start = fresh_state(cfg, k.height, k.width);
  if (!config.paths.checkpoint.empty()) {
    DirectPredictor pretrained(io::load_checkpoint(config.paths.checkpoint));
    start = pretrained_state(pretrained, cfg, k.height, k.width);
  }
  std::vector<SequenceSample> stream;
  for (const auto& w : windows) stream.push_back(w.sample);
  const RefineResult result = online_refine(stream, start, cfg);

  std::vector<std::pair<std::string, DepthMap>> depths;
  std::vector<WindowPrediction> poses;
  std::vector<json> records;
  std::vector<DepthMetrics> all;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const WindowResult& r = result.windows[i];
    const DepthMetrics m = depth_metrics(r.depth, windows[i].gt_depth, all_pixels(r.depth), config.eval);
    all.push_back(m);
    depths.emplace_back(r.name, r.depth);
    poses.push_back({r.name, r.ego_prev, r.ego_next});
    json rec = metrics_json(m);
    rec["window"] = r.name;
    rec["loss_before"] = r.loss_before;
    rec["loss_after"] = r.loss_after;
    records.push_back(rec);
  }
  write_predictions(out, depths, poses);
  write_jsonl(out / "windows.jsonl", records);
  json summary{{"depth", metrics_json(average_metrics(all))},
               {"ate", ate_json(windows, poses, config.ate_snippet)},
               {"windows", windows.size()}};
  io::write_text(out / "metrics.json", summary.dump(2) + "\n");
}

void cmd_eval(const RunConfig& config, const fs::path& out) {
  const auto windows = load_windows(config);
  if (config.paths.predictions.empty()) throw ConfigError("paths.predictions is required");
  const fs::path pred_dir = config.paths.predictions;
  begin(config, out);
  std::vector<json> records;
  std::vector<DepthMetrics> all;
  for (const auto& w : windows) {
    const DepthMap pred = read_prediction(pred_dir, w.sample.name);
    if (pred.field().height != w.gt_depth.field().height || pred.field().width != w.gt_depth.field().width) {
      throw DataError("prediction for " + w.sample.name + " has the wrong size");
    }
    const DepthMetrics m = depth_metrics(pred, w.gt_depth, all_pixels(pred), config.eval);
    all.push_back(m);
    json rec = metrics_json(m);
    rec["window"] = w.sample.name;
    records.push_back(rec);
  }
  write_jsonl(out / "metrics.jsonl", records);
  json summary{{"depth", metrics_json(average_metrics(all))}, {"windows", windows.size()}};
  if (fs::exists(pred_dir / "poses.jsonl")) {
    summary["ate"] = ate_json(windows, read_poses(pred_dir / "poses.jsonl"), config.ate_snippet);
  }
  io::write_text(out / "metrics.json", summary.dump(2) + "\n");
}

void cmd_viz(const RunConfig& config, const fs::path& out) {
  const auto windows = load_windows(config);
  if (config.paths.predictions.empty()) throw ConfigError("paths.predictions is required");
  begin(config, out);
  for (const auto& w : windows) {
    const std::string stem = window_stem(w.sample.name);
    const Field& gt = w.gt_depth.field();
    Field pred = read_prediction(config.paths.predictions, w.sample.name).field();
    if (!pred.same_shape(gt)) throw DataError("prediction for " + w.sample.name + " has the wrong size");
    if (config.eval.scaling == DepthScaling::median) {
      std::vector<double> a = pred.data, b = gt.data;
      std::nth_element(a.begin(), a.begin() + static_cast<long>(a.size() / 2), a.end());
      std::nth_element(b.begin(), b.begin() + static_cast<long>(b.size() / 2), b.end());
      const double s = b[b.size() / 2] / a[a.size() / 2];
      for (double& v : pred.data) v *= s;
    }
    // Disparity heatmaps share the ground-truth range so colors compare.
    Field gt_disp = gt, pred_disp = pred, err(gt.height, gt.width, 1);
    for (double& v : gt_disp.data) v = 1.0 / v;
    for (double& v : pred_disp.data) v = 1.0 / v;
    for (std::size_t i = 0; i < err.size(); ++i) err.data[i] = std::abs(pred.data[i] - gt.data[i]) / gt.data[i];
    const auto [lo, hi] = std::minmax_element(gt_disp.data.begin(), gt_disp.data.end());
    io::write_rgb8(out / (stem + "_gt.png"), gt.height, gt.width, io::heatmap(gt_disp, *lo, *hi));
    io::write_rgb8(out / (stem + "_pred.png"), gt.height, gt.width, io::heatmap(pred_disp, *lo, *hi));
    io::write_rgb8(out / (stem + "_error.png"), gt.height, gt.width, io::heatmap(err, 0.0, 0.25));
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const LookupError*>(&e)) return kData;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kFailure;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Monocular depth and ego-motion from synthetic video"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  const std::vector<std::pair<std::string, void (*)(const RunConfig&, const fs::path&)>> commands = {
      {"synth", cmd_synth}, {"train", cmd_train}, {"refine", cmd_refine}, {"eval", cmd_eval}, {"viz", cmd_viz}};
  const std::map<std::string, std::string> help = {
      {"synth", "Render a synthetic dataset"},
      {"train", "Fit depth and motion on a dataset; write a checkpoint and loss trace"},
      {"refine", "Online refinement over a dataset stream"},
      {"eval", "Depth metrics and ATE of saved predictions"},
      {"viz", "Depth and error heatmaps of saved predictions"}};
  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "INI config file");
    sub->add_option("--set", overrides, "Override, section.key=value (repeatable)");
    sub->add_option("--out", out_dir, "Output directory")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfig;
  }
  try {
    const RunConfig config = config_path.empty() ? parse_config("", overrides) : load_config(config_path, overrides);
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) {
        fn(config, out_dir);
        out << name << ": wrote " << out_dir << "\n";
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace mdepth::cli
