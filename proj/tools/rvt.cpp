// rvt: generate data, render views, train, evaluate, visualize, benchmark.

#include "rvt/rvt.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace rvt;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value, value parsed as JSON when possible
};

RunConfig resolve_config(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config_path.empty()) {
    std::ifstream is(c.config_path);
    if (!is) throw std::runtime_error("cannot open config '" + c.config_path + "'");
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config '" + c.config_path + "': " + e.what());
    }
  }
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    try {
      j[key] = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      j[key] = value;
    }
  }
  return run_config_from_json(j);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "RunConfig JSON file");
  cmd->add_option("--set", c.overrides, "Override a config key (key=value)");
}

std::vector<Episode> load_data(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw std::invalid_argument("no dataset given (set 'dataset' or pass --dataset)");
  return load_dataset(cfg.dataset);
}

const Episode& pick_episode(const std::vector<Episode>& eps, std::size_t e, std::size_t k) {
  if (e >= eps.size()) throw std::out_of_range("episode " + std::to_string(e) + " out of range (" +
                                               std::to_string(eps.size()) + " episodes)");
  if (k >= eps[e].actions.size()) throw std::out_of_range("keyframe " + std::to_string(k) + " out of range");
  return eps[e];
}

int cmd_gen(const RunConfig& cfg) {
  const auto eps = gen_synthetic(cfg.task_spec(), cfg.episodes);
  const std::string out = cfg.dataset.empty() ? (fs::path(cfg.output_dir) / "dataset").string() : cfg.dataset;
  save_dataset(eps, out);
  std::cout << "wrote " << eps.size() << " episodes to " << out << "\n";
  return 0;
}

int cmd_render(const RunConfig& cfg, std::size_t e, std::size_t k) {
  const auto eps = load_data(cfg);
  const Episode& ep = pick_episode(eps, e, k);
  const ViewSet views = cfg.make_views();
  const PointCloud cloud = crop_to_workspace(ep.steps.at(ep.observation_index(k)).cloud, cfg.box());
  const auto images = render_views(cloud, views, static_cast<int>(cfg.model.image_res), cfg.splat_radius);
  fs::create_directories(cfg.output_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_view(images[i], (fs::path(cfg.output_dir) / views.cameras[i].name).string());
  }
  std::cout << "rendered " << images.size() << " views of " << cloud.size() << " points to " << cfg.output_dir << "\n";
  return 0;
}

template <class T>
nn::Weights<T> initial_weights(const RunConfig& cfg, const RvtModel<T>& model) {
  return cfg.checkpoint.empty() ? model.init(cfg.init_seed) : nn::load_checkpoint<T>(cfg.checkpoint);
}

template <class T>
int cmd_train(const RunConfig& cfg) {
  const auto eps = load_data(cfg);
  const RvtModel<T> model(cfg.model);
  std::ofstream log_file;
  std::ostream* sink = &std::cout;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path);
    if (!log_file) throw std::runtime_error("cannot write log '" + cfg.log_path + "'");
    sink = &log_file;
  }
  const auto result = train_loop(model, initial_weights(cfg, model), eps, cfg.make_views(), cfg.box(),
                                 cfg.train_config(), sink);
  fs::create_directories(cfg.output_dir);
  const std::string path = (fs::path(cfg.output_dir) / "final.ckpt").string();
  nn::save_checkpoint(result.weights, path);
  save_run_config(cfg, (fs::path(cfg.output_dir) / "config.json").string());
  std::cerr << "saved " << path << "\n";
  return 0;
}

template <class T>
int cmd_eval(const RunConfig& cfg, bool oracle) {
  const auto eps = load_data(cfg);
  std::vector<std::vector<ActionPrediction>> preds;
  if (oracle) {
    preds = oracle_predictions(eps);
  } else {
    if (cfg.checkpoint.empty()) throw std::invalid_argument("eval needs a checkpoint (or --oracle)");
    const RvtModel<T> model(cfg.model);
    const auto w = nn::load_checkpoint<T>(cfg.checkpoint);
    preds = predict_episodes(model, w, eps, cfg.make_views(), cfg.box(), cfg.grid(),
                             LanguageProvider(cfg.model.d_lang, cfg.language_dir), cfg.splat_radius, cfg.threads);
  }
  write_metrics_tsv(score_predictions(preds, eps, cfg.eval_options()), std::cout);
  return 0;
}

template <class T>
int cmd_viz(const RunConfig& cfg, std::size_t e, std::size_t k) {
  if (cfg.checkpoint.empty()) throw std::invalid_argument("viz needs a checkpoint");
  const auto eps = load_data(cfg);
  const Episode& ep = pick_episode(eps, e, k);
  const ViewSet views = cfg.make_views();
  const int res = static_cast<int>(cfg.model.image_res);
  const RvtModel<T> model(cfg.model);
  const auto w = nn::load_checkpoint<T>(cfg.checkpoint);
  const auto images = render_views(crop_to_workspace(ep.steps.at(ep.observation_index(k)).cloud, cfg.box()), views,
                                   res, cfg.splat_radius);
  nn::ParamScope<T> scope(w, false);
  const auto out = model.forward(scope, images, LanguageProvider(cfg.model.d_lang, cfg.language_dir)(ep.language),
                                 observation_state(ep, k));
  const auto probs = heatmap_probabilities(out);
  const GTTargets gt = make_targets(views, ep.actions[k], res, cfg.sigma_px);
  fs::create_directories(cfg.output_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_ppm(heatmap_overlay(images[i], probs[i], gt.views[i].distribution),
              (fs::path(cfg.output_dir) / (views.cameras[i].name + "_overlay.ppm")).string());
  }
  const ActionPrediction a = assemble_action(out, views, cfg.grid());
  std::cout << "predicted\t" << a.translation.transpose() << "\ttruth\t" << ep.actions[k].translation.transpose() << "\n";
  return 0;
}

template <class T>
int dispatch_typed(const std::string& cmd, const RunConfig& cfg, std::size_t e, std::size_t k, bool oracle) {
  if (cmd == "train") return cmd_train<T>(cfg);
  if (cmd == "eval") return cmd_eval<T>(cfg, oracle);
  return cmd_viz<T>(cfg, e, k);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view transformer for 3D manipulation: data, rendering, training and evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string dataset, checkpoint, out_dir;
  std::size_t episode = 0, keyframe = 0;
  bool oracle = false;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  auto* render_cmd = app.add_subcommand("render", "Render a dataset sample's views to image files");
  auto* train = app.add_subcommand("train", "Train with behavior cloning");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and print a TSV table");
  auto* viz = app.add_subcommand("viz", "Overlay predicted and true heatmaps on rendered views");
  for (auto* cmd : {gen, render_cmd, train, eval, viz}) {
    add_common(cmd, common);
    cmd->add_option("-d,--dataset", dataset, "Dataset directory");
    cmd->add_option("-o,--out", out_dir, "Output directory");
  }
  for (auto* cmd : {train, eval, viz}) cmd->add_option("--checkpoint", checkpoint, "Checkpoint to load");
  for (auto* cmd : {render_cmd, viz}) {
    cmd->add_option("--episode", episode, "Episode index");
    cmd->add_option("--keyframe", keyframe, "Keyframe index");
  }
  eval->add_flag("--oracle", oracle, "Score ground-truth actions as predictions");

  BenchOptions bench_opt;
  std::string bench_preset = "cube5";
  bool no_forward = false;
  auto* bench = app.add_subcommand("bench", "Time re-rendering against voxelization");
  bench->add_option("--sizes", bench_opt.cloud_sizes, "Point counts")->delimiter(',');
  bench->add_option("--preset", bench_preset, "View preset");
  bench->add_option("--res", bench_opt.res, "Image resolution");
  bench->add_option("--voxels", bench_opt.voxels, "Voxels per axis");
  bench->add_option("--runs", bench_opt.runs, "Timed runs per measurement");
  bench->add_flag("--no-forward", no_forward, "Skip the model forward timing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (bench->parsed()) {
      bench_opt.preset = view_preset_from_string(bench_preset);
      bench_opt.model_forward = !no_forward;
      run_bench(bench_opt, std::cout);
      return 0;
    }
    RunConfig cfg = resolve_config(common);
    if (!dataset.empty()) cfg.dataset = dataset;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (gen->parsed()) return cmd_gen(cfg);
    if (render_cmd->parsed()) return cmd_render(cfg, episode, keyframe);
    const std::string name = train->parsed() ? "train" : eval->parsed() ? "eval" : "viz";
    return cfg.precision == "float64" ? dispatch_typed<double>(name, cfg, episode, keyframe, oracle)
                                      : dispatch_typed<float>(name, cfg, episode, keyframe, oracle);
  } catch (const std::exception& e) {
    std::cerr << "rvt: error: " << e.what() << "\n";
    return 1;
  }
}
