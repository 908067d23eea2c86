// scaleood: post-hoc OOD scoring, evaluation, theory curves and toy ISH runs.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "scaleood/scaleood.hpp"

namespace fs = std::filesystem;
using namespace scaleood;
using nlohmann::json;

namespace {

// JSON config files: top-level keys set global flags, nested objects named
// after a subcommand set that subcommand's flags.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConfigError("writing config files is not supported");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("malformed JSON config: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    walk(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void walk(const json& j, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        walk(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array())
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(*it));
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out = "-";
  std::string format = "csv";
};

void emit(const Globals& g, const std::string& text) {
  if (g.out == "-" || g.out.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  detail::write_atomically(g.out, text);
}

std::string fmt(double v) { return format_double(v); }

void warn_degenerate(const ScoredSet& s) {
  const auto n = s.n_degenerate();
  if (n == 0) return;
  std::string idx;
  std::size_t shown = 0;
  for (std::size_t i = 0; i < s.size() && shown < 10; ++i)
    if (s.degenerate[i]) {
      idx += (shown++ ? "," : "") + std::to_string(i);
    }
  std::cerr << "warning: '" << s.tag << "': " << n << " degenerate sample(s) (indices " << idx
            << (n > shown ? ",..." : "") << ")\n";
}

// ---------------------------------------------------------------------------
// Shared method options
// ---------------------------------------------------------------------------

struct MethodOptions {
  double p = 0.85;
  double temperature = 1.0;
  double react_percentile = 0.9;
  std::optional<double> clip;

  void add(CLI::App* app) {
    app->add_option("--p", p, "Shaping percentile in [0, 1)")->capture_default_str();
    app->add_option("--temperature", temperature, "Score temperature")->capture_default_str();
    app->add_option("--react-percentile", react_percentile,
                    "Percentile of pooled validation activations used as ReAct's clip")
        ->capture_default_str();
    app->add_option("--clip", clip, "Explicit ReAct clip threshold");
  }

  MethodSpec resolve(const std::string& text, const LoadedManifest& data) const {
    auto m = parse_method(text, {ShapingMethod::identity, p, 1.0}, {ScoreKind::ebo, temperature});
    if (m.shaping.method == ShapingMethod::react) m.shaping.clip_threshold = react_clip(data);
    return m;
  }

  double react_clip(const LoadedManifest& data) const {
    if (clip) return *clip;
    const FeatureSet* pool = nullptr;
    for (const auto& s : data.sets)
      if (s.split == Split::validation) pool = &s;
    if (!pool) pool = &data.id_set();
    return pooled_percentile(pool->data, react_percentile);
  }
};

std::vector<const FeatureSet*> ood_sets(const LoadedManifest& data) {
  std::vector<const FeatureSet*> out;
  for (const auto& s : data.sets)
    if (is_ood(s.split)) out.push_back(&s);
  if (out.empty()) throw InvalidArgument("manifest has no ood-near or ood-far entry");
  return out;
}

LoadedManifest load_data(const std::string& path) {
  if (path.empty()) throw InvalidArgument("--manifest is required");
  return load_manifest_data(load_manifest(path));
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreCmd {
  std::string manifest;
  std::string method = "scale+ebo";
  MethodOptions opts;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("score", "Per-sample scores for every manifest entry");
    c->add_option("--manifest", manifest, "Dataset manifest (JSON)");
    c->add_option("--method", method, "Method, e.g. scale+ebo, ebo, react+ebo")
        ->capture_default_str();
    opts.add(c);
  }

  void run(const Globals& g) const {
    const auto data = load_data(manifest);
    const auto m = opts.resolve(method, data);
    std::string csv = "tag,split,index,score,r,degenerate\n";
    json rows = json::array();
    for (const auto& set : data.sets) {
      const auto s = score_features(set, data.head, m, g.threads);
      warn_degenerate(s);
      for (std::size_t i = 0; i < s.size(); ++i) {
        const bool deg = s.degenerate[i];
        const bool has_r = !std::isnan(s.factors[i]);
        csv += set.tag + ',' + std::string(to_string(set.split)) + ',' + std::to_string(i) + ',' +
               (deg ? "" : fmt(s.scores[i])) + ',' + (has_r ? fmt(s.factors[i]) : "") + ',' +
               (deg ? "1" : "0") + '\n';
        rows.push_back({{"tag", set.tag},
                        {"split", std::string(to_string(set.split))},
                        {"index", i},
                        {"score", deg ? json(nullptr) : json(s.scores[i])},
                        {"r", has_r ? json(s.factors[i]) : json(nullptr)},
                        {"degenerate", deg}});
      }
    }
    emit(g, g.format == "json" ? json{{"method", m.name()}, {"rows", rows}}.dump(2) : csv);
  }
};

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCmd {
  std::string manifest;
  std::vector<std::string> methods{"ebo", "scale+ebo"};
  std::vector<double> p_grid;
  MethodOptions opts;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "FPR@95 / AUROC report per method and OOD set");
    c->add_option("--manifest", manifest, "Dataset manifest (JSON)");
    c->add_option("--methods", methods, "Methods to evaluate")->capture_default_str();
    c->add_option("--p-grid", p_grid, "Evaluate at every percentile of this grid");
    opts.add(c);
  }

  void run(const Globals& g) const {
    const auto data = load_data(manifest);
    const auto oods = ood_sets(data);
    const std::vector<double> grid = p_grid.empty() ? std::vector<double>{opts.p} : p_grid;
    EvalReport report;
    for (const auto& text : methods) {
      for (double p : grid) {
        MethodOptions o = opts;
        o.p = p;
        const auto m = o.resolve(text, data);
        auto rows = evaluate_method(data.id_set(), oods, data.head, m, g.threads);
        auto avgs = group_averages(rows);
        rows.insert(rows.end(), avgs.begin(), avgs.end());
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        // percentile-free methods need only one pass
        if (m.shaping.method == ShapingMethod::identity ||
            m.shaping.method == ShapingMethod::react)
          break;
      }
    }
    for (const auto& r : report.rows)
      if (r.n_degenerate_id + r.n_degenerate_ood > 0)
        std::cerr << "warning: " << r.method << " on '" << r.dataset << "': "
                  << r.n_degenerate_id + r.n_degenerate_ood
                  << " degenerate sample(s) excluded\n";
    report.config = {{"manifest", manifest},
                     {"methods", methods},
                     {"p_grid", grid},
                     {"temperature", opts.temperature},
                     {"seed", g.seed}};
    emit(g, g.format == "json" ? to_json(report).dump(2) : to_csv(report));
  }
};

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepCmd {
  std::string manifest;
  std::string method = "scale+ebo";
  std::vector<double> p_grid{0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  MethodOptions opts;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("sweep", "Percentile sweep, one row per p and OOD group");
    c->add_option("--manifest", manifest, "Dataset manifest (JSON)");
    c->add_option("--method", method, "Method to sweep")->capture_default_str();
    c->add_option("--p-grid", p_grid, "Percentiles")->capture_default_str();
    opts.add(c);
  }

  void run(const Globals& g) const {
    const auto data = load_data(manifest);
    const auto m = opts.resolve(method, data);
    const auto rows = sweep_percentile(data.id_set(), ood_sets(data), data.head, m, p_grid,
                                       g.threads);
    emit(g, g.format == "json" ? sweep_to_json(rows).dump(2) : sweep_to_csv(rows));
  }
};

// ---------------------------------------------------------------------------
// theory
// ---------------------------------------------------------------------------

struct TheoryCmd {
  std::vector<double> p_grid;
  double id_mu = 1.0, id_sigma = 0.5, ood_mu = 0.8, ood_sigma = 0.6;
  std::size_t dim = 2048;
  std::size_t mc_samples = 2000;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("theory", "C(p), beta and Monte Carlo Q_p/Q curves");
    c->add_option("--p-grid", p_grid, "Percentiles in (0, 1) (default 0.05, 0.10, ..., 0.95)");
    c->add_option("--id-mu", id_mu)->capture_default_str();
    c->add_option("--id-sigma", id_sigma)->capture_default_str();
    c->add_option("--ood-mu", ood_mu)->capture_default_str();
    c->add_option("--ood-sigma", ood_sigma)->capture_default_str();
    c->add_option("--dim", dim, "Activation dimension for Monte Carlo")->capture_default_str();
    c->add_option("--mc-samples", mc_samples, "Monte Carlo vectors per point")
        ->capture_default_str();
  }

  void run(const Globals& g) const {
    std::vector<double> grid = p_grid;
    if (grid.empty())
      for (int i = 1; i <= 19; ++i) grid.push_back(i * 0.05);
    const GaussianParams id{id_mu, id_sigma}, ood{ood_mu, ood_sigma};
    id.validate();
    ood.validate();
    std::string csv = "p,C,beta_id,beta_ood,mc_qp_ratio_id,mc_qp_ratio_ood\n";
    json rows = json::array();
    for (double p : grid) {
      if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("theory grid must lie in (0, 1)");
      const double c = c_of_p(p);
      const double bi = beta_exact(id, p), bo = beta_exact(ood, p);
      const auto mi = monte_carlo_qp_ratio(id, p, dim, mc_samples, g.seed, g.threads);
      const auto mo = monte_carlo_qp_ratio(ood, p, dim, mc_samples, g.seed + 1, g.threads);
      csv += fmt(p) + ',' + fmt(c) + ',' + fmt(bi) + ',' + fmt(bo) + ',' + fmt(mi.mean) + ',' +
             fmt(mo.mean) + '\n';
      rows.push_back({{"p", p},
                      {"C", c},
                      {"beta_id", bi},
                      {"beta_ood", bo},
                      {"mc_qp_ratio_id", mi.mean},
                      {"mc_qp_ratio_ood", mo.mean},
                      {"mc_std_error_id", mi.std_error},
                      {"mc_std_error_ood", mo.std_error}});
    }
    if (g.format == "json") {
      json j{{"id", {{"mu", id_mu}, {"sigma", id_sigma}}},
             {"ood", {{"mu", ood_mu}, {"sigma", ood_sigma}}},
             {"rows", rows}};
      if (id.gamma() > ood.gamma() && ood.gamma() > 0.0) {
        const auto d = delta_discriminant(id.gamma(), ood.gamma());
        j["delta"] = {{"a1", d.a1}, {"a2", d.a2}, {"a3", d.a3}, {"delta", d.delta},
                      {"all_c_valid", d.all_valid}, {"c_lower_bound", d.c_lower_bound}};
      }
      emit(g, j.dump(2));
    } else {
      emit(g, csv);
    }
  }
};

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

struct StatsCmd {
  std::string manifest;
  std::size_t bins = 10;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("stats", "Pre-activation statistics and chi-square Gaussianity");
    c->add_option("--manifest", manifest, "Dataset manifest with preacts");
    c->add_option("--bins", bins, "Chi-square bins")->capture_default_str();
  }

  void run(const Globals& g) const {
    if (manifest.empty()) throw InvalidArgument("--manifest is required");
    const auto m = load_manifest(manifest);
    if (m.preacts.empty()) throw InvalidArgument("manifest lists no preacts");
    std::string csv =
        "tag,n_samples,dim,mean_mean,mean_stddev,mean_variance,mean_ratio,ratio_std_error,"
        "n_flagged,mean_chi_square_p\n";
    json rows = json::array();
    for (const auto& e : m.preacts) {
      if (!fs::exists(e.path))
        throw ParseError("preact '" + e.tag + "': missing file '" + e.path.string() + "'");
      auto ps = load_preacts(e.path, e.format);
      ps.tag = e.tag;
      ps.validate();
      const auto ag = aggregate(activation_stats(ps));
      const double chi = mean_chi_square_p(ps, bins);
      csv += e.tag + ',' + std::to_string(ps.n_samples()) + ',' + std::to_string(ps.dim()) + ',' +
             fmt(ag.mean_of_mean) + ',' + fmt(ag.mean_of_stddev) + ',' +
             fmt(ag.mean_of_variance) + ',' + fmt(ag.mean_of_ratio) + ',' +
             fmt(ag.ratio_std_error) + ',' + std::to_string(ag.n_flagged) + ',' + fmt(chi) + '\n';
      rows.push_back({{"tag", e.tag},
                      {"n_samples", ps.n_samples()},
                      {"dim", ps.dim()},
                      {"mean_mean", ag.mean_of_mean},
                      {"mean_stddev", ag.mean_of_stddev},
                      {"mean_variance", ag.mean_of_variance},
                      {"mean_ratio", ag.mean_of_ratio},
                      {"ratio_std_error", ag.ratio_std_error},
                      {"n_flagged", ag.n_flagged},
                      {"mean_chi_square_p", chi}});
    }
    emit(g, g.format == "json" ? rows.dump(2) : csv);
  }
};

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthCmd {
  std::string out_dir;
  std::size_t n_samples = 1000;
  std::size_t dim = 2048;
  std::size_t classes = 100;
  double id_mu = 1.0, id_sigma = 0.5, ood_mu = 0.8, ood_sigma = 0.6;
  double head_scale = 1.0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "Write a synthetic ID/OOD benchmark and its manifest");
    c->add_option("--out-dir", out_dir, "Directory for the generated files");
    c->add_option("--n-samples", n_samples, "Samples per set")->capture_default_str();
    c->add_option("--dim", dim)->capture_default_str();
    c->add_option("--classes", classes, "Head classes K")->capture_default_str();
    c->add_option("--id-mu", id_mu)->capture_default_str();
    c->add_option("--id-sigma", id_sigma)->capture_default_str();
    c->add_option("--ood-mu", ood_mu)->capture_default_str();
    c->add_option("--ood-sigma", ood_sigma)->capture_default_str();
    c->add_option("--head-scale", head_scale)->capture_default_str();
  }

  void run(const Globals& g) const {
    if (out_dir.empty()) throw InvalidArgument("--out-dir is required");
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    struct Part {
      const char* name;
      GaussianParams dist;
      Split split;
      std::uint64_t seed_offset;
    };
    const Part parts[] = {{"id", {id_mu, id_sigma}, Split::id, 0},
                          {"ood", {ood_mu, ood_sigma}, Split::ood_near, 1},
                          {"validation", {id_mu, id_sigma}, Split::validation, 2}};
    DatasetManifest m;
    for (const auto& part : parts) {
      SynthSpec spec;
      spec.distribution = part.dist;
      spec.n_samples = n_samples;
      spec.dim = dim;
      spec.seed = g.seed * 4 + part.seed_offset;
      spec.tag = part.name;
      spec.split = part.split;
      const auto out = gen_rectified_features(spec, g.threads);
      const std::string feat = std::string(part.name) + ".oodf";
      write_features(dir / feat, out.features, FileFormat::binary);
      m.entries.push_back({feat, part.name, part.split, FileFormat::binary, false});
      if (part.split != Split::validation) {
        const std::string pre = std::string(part.name) + "_pre.oodf";
        write_preacts(dir / pre, out.preacts, FileFormat::binary);
        m.preacts.push_back({pre, part.name, FileFormat::binary});
      }
    }
    write_head(dir / "head.oodh", gen_linear_head(classes, dim, g.seed * 4 + 3, head_scale));
    m.head_path = "head.oodh";
    detail::write_atomically(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
    emit(g, (dir / "manifest.json").string() + "\n");
  }
};

// ---------------------------------------------------------------------------
// ish
// ---------------------------------------------------------------------------

struct IshCmd {
  std::string mode = "both";
  IshExperimentConfig cfg;
  std::string checkpoint_dir;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("ish", "Toy blob experiment: plain vs ISH fine-tuning");
    c->add_option("--mode", mode, "plain, ish or both")
        ->check(CLI::IsMember({"plain", "ish", "both"}))
        ->capture_default_str();
    c->add_option("--p", cfg.finetune.percentile, "ISH percentile")->capture_default_str();
    c->add_option("--lr", cfg.finetune.learning_rate, "Fine-tune initial learning rate")
        ->capture_default_str();
    c->add_option("--epochs", cfg.finetune.epochs, "Fine-tune epochs")->capture_default_str();
    c->add_option("--batch-size", cfg.finetune.batch_size)->capture_default_str();
    c->add_option("--weight-decay", cfg.finetune.weight_decay)->capture_default_str();
    c->add_option("--pretrain-lr", cfg.pretrain.learning_rate)->capture_default_str();
    c->add_option("--pretrain-epochs", cfg.pretrain.epochs)->capture_default_str();
    c->add_option("--hidden", cfg.hidden, "Hidden width")->capture_default_str();
    c->add_option("--input-dim", cfg.blobs.dim)->capture_default_str();
    c->add_option("--noise", cfg.blobs.noise)->capture_default_str();
    c->add_option("--center-scale", cfg.blobs.center_scale)->capture_default_str();
    c->add_option("--train-per-class", cfg.blobs.train_per_class)->capture_default_str();
    c->add_option("--test-per-class", cfg.blobs.test_per_class)->capture_default_str();
    c->add_option("--checkpoint-dir", checkpoint_dir,
                  "Write <mode>.oodx / <mode>.oodh checkpoints here");
  }

  void run(const Globals& g) const {
    std::vector<TrainMode> modes;
    if (mode != "ish") modes.push_back(TrainMode::plain);
    if (mode != "plain") modes.push_back(TrainMode::ish);
    IshExperimentConfig c = cfg;
    c.pretrain.batch_size = c.finetune.batch_size;
    c.pretrain.weight_decay = c.finetune.weight_decay;
    c.eval_percentile = c.finetune.percentile;
    const auto res = run_ish_experiment(c, g.seed, modes);

    json j;
    j["seed"] = g.seed;
    j["pretrain"] = to_json(res.pretrain_log);
    j["pretrain"]["train_accuracy"] = res.pretrain_train_accuracy;
    j["runs"] = json::array();
    for (const auto& r : res.runs) {
      auto log = to_json(r.log);
      log["id_test_accuracy"] = r.id_accuracy;
      log["scale_energy_auroc"] = r.scale_auroc;
      log["energy_auroc"] = r.energy_auroc;
      j["runs"].push_back(std::move(log));
    }
    if (!checkpoint_dir.empty()) {
      fs::create_directories(checkpoint_dir);
      for (const auto& r : res.runs) {
        const std::string stem(to_string(r.mode));
        save_checkpoint(r.model, fs::path(checkpoint_dir) / (stem + ".oodx"),
                        fs::path(checkpoint_dir) / (stem + ".oodh"));
      }
    }
    emit(g, j.dump(2));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc OOD detection with activation scaling"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file supplying any flag; command-line flags win");

  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str();
  app.add_option("--out", g.out, "Output file ('-' for stdout)")->capture_default_str();
  app.add_option("--format", g.format, "Output format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  ScoreCmd score;
  EvalCmd eval;
  SweepCmd sweep;
  TheoryCmd theory;
  StatsCmd stats;
  SynthCmd synth;
  IshCmd ish;
  score.add(app);
  eval.add(app);
  sweep.add(app);
  theory.add(app);
  stats.add(app);
  synth.add(app);
  ish.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (g.threads == 0) g.threads = 1;

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "score") score.run(g);
    else if (name == "eval") eval.run(g);
    else if (name == "sweep") sweep.run(g);
    else if (name == "theory") theory.run(g);
    else if (name == "stats") stats.run(g);
    else if (name == "synth") synth.run(g);
    else if (name == "ish") ish.run(g);
  } catch (const DegenerateSample& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
